"""Per-pixel semantic label maps: loading, validation and queries.

A map stores one uint16 label per pixel; label 0 is reserved for
"unlabeled / ignore". Bounding boxes throughout the package use
half-open pixel ranges (min inclusive, max exclusive).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import MapError, WindowError
from .geometry import Point2

BBox = tuple[int, int, int, int]  # (min_x, min_y, max_x, max_y), max exclusive


class SemanticMap:
    """Immutable grid of semantic label ids."""

    __slots__ = ("labels", "width", "height")

    def __init__(self, labels):
        arr = np.asarray(labels)
        if arr.ndim != 2:
            raise MapError("semantic map must be a 2-D label grid")
        if arr.size == 0:
            raise MapError("semantic map must be non-empty")
        if np.issubdtype(arr.dtype, np.floating):
            raise MapError("semantic map labels must be integers")
        if arr.min() < 0 or arr.max() >= 65536:
            raise MapError("label ids must fit in uint16")
        self.labels = arr.astype(np.uint16)
        self.labels.setflags(write=False)
        self.height, self.width = self.labels.shape

    def distinct_labels(self) -> tuple[int, ...]:
        """Sorted nonzero label ids present in the map."""
        values = np.unique(self.labels)
        return tuple(int(v) for v in values if v != 0)

    def __eq__(self, other) -> bool:
        return isinstance(other, SemanticMap) and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class LabelRegion:
    """One 4-connected component of a single label."""

    label: int
    bbox: BBox
    pixel_count: int
    centroid: Point2


def connected_components(semantic_map: SemanticMap) -> list[LabelRegion]:
    """4-connected components per distinct nonzero label.

    Ordered by (label, bbox min_y, bbox min_x) so output is deterministic.
    """
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    regions = []
    for label in semantic_map.distinct_labels():
        mask = semantic_map.labels == label
        labeled, count = ndimage.label(mask, structure=structure)
        if count == 0:
            continue
        slices = ndimage.find_objects(labeled)
        centroids = ndimage.center_of_mass(mask, labeled, range(1, count + 1))
        sums = ndimage.sum_labels(mask, labeled, range(1, count + 1))
        for i, sl in enumerate(slices):
            ys, xs = sl
            cy, cx = centroids[i]
            regions.append(
                LabelRegion(
                    label=label,
                    bbox=(xs.start, ys.start, xs.stop, ys.stop),
                    pixel_count=int(sums[i]),
                    centroid=Point2(float(cx), float(cy)),
                )
            )
    regions.sort(key=lambda r: (r.label, r.bbox[1], r.bbox[0]))
    return regions


def clip_window(semantic_map: SemanticMap, window: BBox) -> BBox:
    """Clamp a window to the map; raises if the intersection is empty."""
    x0, y0, x1, y1 = window
    cx0 = max(0, int(x0))
    cy0 = max(0, int(y0))
    cx1 = min(semantic_map.width, int(x1))
    cy1 = min(semantic_map.height, int(y1))
    if cx0 >= cx1 or cy0 >= cy1:
        raise WindowError(f"window {window} does not intersect the map")
    return cx0, cy0, cx1, cy1


def semantic_histogram(semantic_map: SemanticMap, window: BBox) -> dict[int, float]:
    """Label fractions over nonzero pixels of a window.

    Labels covering less than 1/64 of the (clamped) window area are treated
    as noise: dropped, with the remaining fractions renormalized. Coverage
    exactly at the 1/64 boundary is kept. Returns an empty mapping when the
    window holds no labeled pixels.
    """
    x0, y0, x1, y1 = clip_window(semantic_map, window)
    patch = semantic_map.labels[y0:y1, x0:x1]
    values, counts = np.unique(patch, return_counts=True)
    keep = values != 0
    values, counts = values[keep], counts[keep]
    if len(values) == 0:
        return {}
    min_count = (x1 - x0) * (y1 - y0) / 64.0
    big = counts >= min_count
    if not big.any():
        return {}
    values, counts = values[big], counts[big]
    total = counts.sum()
    return {int(v): float(c) / float(total) for v, c in zip(values, counts)}


def downsample(semantic_map: SemanticMap, ratio: int) -> SemanticMap:
    """Subsample taking the top-left pixel of each ratio x ratio block."""
    if ratio < 1:
        raise ValueError("ratio must be at least 1")
    if ratio == 1:
        return semantic_map
    return SemanticMap(semantic_map.labels[::ratio, ::ratio])


# ---------------------------------------------------------------------------
# File I/O: 16-bit grayscale PNG or PGM (P2 / P5), value = label id.


def load_semantic_map(path: str | Path) -> SemanticMap:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return SemanticMap(_read_pgm(path))
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in ("I", "I;16", "I;16B", "L", "P"):
            raise MapError(f"{path}: expected a single-channel label image, got mode {img.mode}")
        arr = np.asarray(img.convert("I"), dtype=np.int64)
    if arr.min() < 0 or arr.max() >= 65536:
        raise MapError(f"{path}: pixel values outside the uint16 label range")
    return SemanticMap(arr)


def save_semantic_map(semantic_map: SemanticMap, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        _write_pgm(semantic_map.labels, path)
        return
    from PIL import Image

    Image.fromarray(semantic_map.labels.astype(np.uint16)).save(path, format="PNG")


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    # Tokenize the header, skipping '#' comments.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        c = data[pos : pos + 1]
        if c == b"#":
            pos = data.index(b"\n", pos) + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if len(tokens) < 4 or tokens[0] not in (b"P2", b"P5"):
        raise MapError(f"{path}: not a PGM file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 65535:
        raise MapError(f"{path}: maxval {maxval} exceeds 65535")
    if tokens[0] == b"P2":
        values = np.array(data[pos:].split(), dtype=np.int64)
        if len(values) != width * height:
            raise MapError(f"{path}: expected {width * height} samples")
        return values.reshape(height, width)
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return raster.reshape(height, width).astype(np.int64)


def _write_pgm(labels: np.ndarray, path: Path) -> None:
    maxval = max(int(labels.max()), 1)
    header = f"P5 {labels.shape[1]} {labels.shape[0]} {maxval}\n".encode()
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    path.write_bytes(header + labels.astype(dtype).tobytes())


def load_label_names(path: str | Path) -> dict[int, str]:
    """Optional sidecar mapping label ids to display names.

    Accepts either a flat {"7": "chair"} object or {"labels": {...}}.
    Names never influence any algorithm; they only decorate reports.
    """
    import json

    payload = json.loads(Path(path).read_text())
    table = payload.get("labels", payload)
    return {int(k): str(v) for k, v in table.items()}


def validate_against_image(semantic_map: SemanticMap, image: np.ndarray, name: str = "") -> None:
    """Reject maps whose dimensions disagree with the paired RGB image."""
    if image.shape[0] != semantic_map.height or image.shape[1] != semantic_map.width:
        raise MapError(
            f"{name or 'semantic map'}: size {semantic_map.width}x{semantic_map.height} "
            f"does not match image {image.shape[1]}x{image.shape[0]}"
        )
