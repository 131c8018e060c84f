"""Semantic area matching: detect, describe and match two kinds of areas.

Object areas come from connected components of one label (merged when
spatially close); intersection areas are fixed-size windows holding more
than three labels, centered where the label proportions are most balanced.
Matching is nearest-neighbor on purpose-built descriptors, with ambiguous
candidates flagged as doubtful instead of being guessed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SgamConfig
from .geometry import Point2
from .semantics import BBox, SemanticMap, connected_components, downsample, semantic_histogram

SOA = "soa"
SIA = "sia"


@dataclass(frozen=True)
class Area:
    """Axis-aligned area in original-image pixels (max edges exclusive)."""

    bbox: BBox
    kind: str
    center: Point2
    anchor_label: int | None = None

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"degenerate area bbox {self.bbox}")

    def width(self) -> int:
        return self.bbox[2] - self.bbox[0]

    def height(self) -> int:
        return self.bbox[3] - self.bbox[1]

    def pixel_area(self) -> int:
        return self.width() * self.height()


@dataclass(frozen=True)
class SoaDescriptor:
    """Per-side binary label-presence vectors (top, right, bottom, left)."""

    side_bits: np.ndarray  # (4, L) bool
    label_space: tuple[int, ...]


@dataclass(frozen=True)
class SiaDescriptor:
    """Per-quadrant label-proportion vectors (TL, TR, BL, BR)."""

    quarter_props: np.ndarray  # (4, L) float
    label_space: tuple[int, ...]


@dataclass(frozen=True)
class AreaMatchCandidate:
    a0: Area
    a1: Area
    kind: str
    desc_distance: float
    status: str  # "accepted" | "doubtful"
    provenance: str = ""  # "soa" | "sia" | "predicted"

    def __post_init__(self):
        if self.a0.kind != self.a1.kind:
            raise ValueError("matched areas must share a kind")
        if self.desc_distance < 0:
            raise ValueError("descriptor distance must be non-negative")


@dataclass(frozen=True)
class SamOutput:
    accepted: list[AreaMatchCandidate]
    doubtful_a0: list[Area]
    doubtful_a1: list[Area]
    sia_scale: float = 1.0


# ---------------------------------------------------------------------------
# Semantic object areas


def detect_soa(semantic_map: SemanticMap, config: SgamConfig) -> list[Area]:
    """Object areas: filtered connected components, close same-label ones fused.

    Components smaller than ``min_object_fraction`` of the image are dropped
    (boundary kept); surviving components of one label whose centroids are
    closer than ``merge_distance`` collapse into the union bbox.
    """
    min_pixels = semantic_map.width * semantic_map.height * config.min_object_fraction
    regions = [r for r in connected_components(semantic_map) if r.pixel_count >= min_pixels]
    by_label: dict[int, list] = {}
    for r in regions:
        by_label.setdefault(r.label, []).append(r)

    areas = []
    for label in sorted(by_label):
        group = by_label[label]
        parent = list(range(len(group)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                ci, cj = group[i].centroid, group[j].centroid
                if np.hypot(ci.x - cj.x, ci.y - cj.y) < config.merge_distance:
                    parent[find(j)] = find(i)
        clusters: dict[int, list] = {}
        for i in range(len(group)):
            clusters.setdefault(find(i), []).append(group[i])
        for members in clusters.values():
            x0 = min(r.bbox[0] for r in members)
            y0 = min(r.bbox[1] for r in members)
            x1 = max(r.bbox[2] for r in members)
            y1 = max(r.bbox[3] for r in members)
            total = sum(r.pixel_count for r in members)
            cx = sum(r.centroid.x * r.pixel_count for r in members) / total
            cy = sum(r.centroid.y * r.pixel_count for r in members) / total
            areas.append(
                Area(bbox=(x0, y0, x1, y1), kind=SOA, center=Point2(cx, cy), anchor_label=label)
            )
    areas.sort(key=lambda a: (a.anchor_label, a.bbox[1], a.bbox[0]))
    return areas


def _scaled_bbox(area: Area, scale: float, width: int, height: int) -> BBox | None:
    cx, cy = (area.bbox[0] + area.bbox[2]) / 2.0, (area.bbox[1] + area.bbox[3]) / 2.0
    w = area.width() * scale / 2.0
    h = area.height() * scale / 2.0
    x0 = max(0, int(round(cx - w)))
    y0 = max(0, int(round(cy - h)))
    x1 = min(width, int(round(cx + w)))
    y1 = min(height, int(round(cy + h)))
    if x1 - x0 < 2 or y1 - y0 < 2:
        return None
    return x0, y0, x1, y1


def _runs_at_least(line: np.ndarray, min_run: int) -> set[int]:
    """Labels appearing in a run of at least min_run contiguous pixels."""
    out: set[int] = set()
    if len(line) == 0:
        return out
    boundaries = np.flatnonzero(np.diff(line)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(line)]])
    for s, e in zip(starts, ends):
        if e - s >= min_run and line[s] != 0:
            out.add(int(line[s]))
    return out


def describe_soa(
    semantic_map: SemanticMap,
    area: Area,
    label_space: tuple[int, ...],
    config: SgamConfig,
) -> SoaDescriptor:
    """Surrounding-label descriptor: which labels run along each bbox side.

    Sides are walked at every configured scale of the bbox; a label only
    counts on a side when it spans at least ``boundary_min_run`` contiguous
    pixels there. Bits are OR-ed across scales. The area's own label is
    excluded, as is label 0.
    """
    index = {label: i for i, label in enumerate(label_space)}
    bits = np.zeros((4, len(label_space)), dtype=bool)
    grid = semantic_map.labels
    for scale in config.scales():
        sb = _scaled_bbox(area, scale, semantic_map.width, semantic_map.height)
        if sb is None:
            continue
        x0, y0, x1, y1 = sb
        sides = (
            grid[y0, x0:x1],          # top
            grid[y0:y1, x1 - 1],      # right
            grid[y1 - 1, x0:x1],      # bottom
            grid[y0:y1, x0],          # left
        )
        for side_idx, line in enumerate(sides):
            for label in _runs_at_least(np.asarray(line), config.boundary_min_run):
                if label != area.anchor_label and label in index:
                    bits[side_idx, index[label]] = True
    return SoaDescriptor(side_bits=bits, label_space=tuple(label_space))


def soa_distance(d0: SoaDescriptor, d1: SoaDescriptor) -> float:
    """Hamming fraction over the concatenated side vectors, in [0, 1]."""
    if d0.label_space != d1.label_space:
        raise ValueError("descriptors built over different label spaces")
    total = d0.side_bits.size
    if total == 0:
        return 0.0
    return float(np.count_nonzero(d0.side_bits != d1.side_bits)) / total


# ---------------------------------------------------------------------------
# Semantic intersection areas


def _summed_area_tables(semantic_map: SemanticMap, labels: tuple[int, ...]) -> np.ndarray:
    """(L, H+1, W+1) integral images, one per label."""
    h, w = semantic_map.labels.shape
    tables = np.zeros((len(labels), h + 1, w + 1), dtype=np.int64)
    for i, label in enumerate(labels):
        mask = (semantic_map.labels == label).astype(np.int64)
        tables[i, 1:, 1:] = mask.cumsum(axis=0).cumsum(axis=1)
    return tables


def _window_counts(tables: np.ndarray, x0, y0, x1, y1) -> np.ndarray:
    """Label counts for windows [x0:x1) x [y0:y1); broadcastable indices."""
    return (
        tables[:, y1, x1] - tables[:, y0, x1] - tables[:, y1, x0] + tables[:, y0, x0]
    )


def _proportion_variance(counts: np.ndarray, window_area: float, min_fraction: float):
    """Variance of renormalized label proportions; fixed label-space length.

    counts: (L, ...) per-label pixel counts. Labels below the noise floor are
    dropped before renormalization. Positions with no kept labels get +inf.
    """
    floor = window_area * min_fraction
    kept = np.where(counts >= floor, counts, 0)
    total = kept.sum(axis=0)
    safe = np.where(total > 0, total, 1)
    fractions = kept / safe
    var = fractions.var(axis=0)
    return np.where(total > 0, var, np.inf)


def detect_sia(semantic_map: SemanticMap, window: int, config: SgamConfig) -> list[Area]:
    """Intersection areas via a two-layer coarse-to-fine window search.

    The reduced top layer collects window positions whose (noise-filtered)
    distinct-label count exceeds three; each is refined at full resolution
    by minimizing the variance of label proportions over centers within half
    a window of the seed. Overlapping results collapse to the lower-variance
    one.
    """
    if window > semantic_map.width or window > semantic_map.height:
        raise ValueError("detection window exceeds the map")
    r = config.pyramid_ratio
    top = downsample(semantic_map, r)
    wt = max(2, int(round(window / r)))
    if wt > top.width or wt > top.height:
        wt = min(top.width, top.height)
    stride = max(1, wt // 2)

    def _positions(extent: int) -> list[int]:
        pos = list(range(0, extent - wt + 1, stride))
        if pos and pos[-1] != extent - wt:
            pos.append(extent - wt)
        return pos or [0]

    seeds = []
    for ty in _positions(top.height):
        for tx in _positions(top.width):
            hist = semantic_histogram(top, (tx, ty, tx + wt, ty + wt))
            if len(hist) > config.sia_min_labels - 1:
                seeds.append(((tx + wt / 2.0) * r, (ty + wt / 2.0) * r))
    if not seeds:
        return []

    labels = semantic_map.distinct_labels()
    tables = _summed_area_tables(semantic_map, labels)
    half_lo = window // 2
    half_hi = window - half_lo
    cx_min, cx_max = half_lo, semantic_map.width - half_hi
    cy_min, cy_max = half_lo, semantic_map.height - half_hi

    refined = []
    for sx, sy in seeds:
        lo_x = int(np.clip(round(sx - window / 2), cx_min, cx_max))
        hi_x = int(np.clip(round(sx + window / 2), cx_min, cx_max))
        lo_y = int(np.clip(round(sy - window / 2), cy_min, cy_max))
        hi_y = int(np.clip(round(sy + window / 2), cy_min, cy_max))
        cxs = np.arange(lo_x, hi_x + 1)
        cys = np.arange(lo_y, hi_y + 1)
        gx, gy = np.meshgrid(cxs, cys)
        counts = _window_counts(
            tables, gx - half_lo, gy - half_lo, gx + half_hi, gy + half_hi
        )
        var = _proportion_variance(counts, float(window * window), config.histogram_min_fraction)
        iy, ix = np.unravel_index(np.argmin(var), var.shape)
        best_var = float(var[iy, ix])
        if not np.isfinite(best_var):
            continue
        cx, cy = int(gx[iy, ix]), int(gy[iy, ix])
        refined.append(
            (
                best_var,
                Area(
                    bbox=(cx - half_lo, cy - half_lo, cx + half_hi, cy + half_hi),
                    kind=SIA,
                    center=Point2(float(cx), float(cy)),
                ),
            )
        )

    refined.sort(key=lambda item: (item[0], item[1].bbox))
    kept: list[Area] = []
    for _, area in refined:
        if all(_iou(area.bbox, other.bbox) <= config.sia_dedup_iou for other in kept):
            kept.append(area)
    kept.sort(key=lambda a: (a.bbox[1], a.bbox[0]))
    return kept


def _iou(a: BBox, b: BBox) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    if ix1 <= ix0 or iy1 <= iy0:
        return 0.0
    inter = (ix1 - ix0) * (iy1 - iy0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _quadrants(bbox: BBox) -> list[BBox]:
    x0, y0, x1, y1 = bbox
    cx, cy = (x0 + x1) // 2, (y0 + y1) // 2
    return [(x0, y0, cx, cy), (cx, y0, x1, cy), (x0, cy, cx, y1), (cx, cy, x1, y1)]


def describe_sia(
    semantic_map: SemanticMap,
    area: Area,
    label_space: tuple[int, ...],
    config: SgamConfig,
) -> SiaDescriptor:
    """Quadrant label proportions (TL, TR, BL, BR), averaged across scales."""
    index = {label: i for i, label in enumerate(label_space)}
    props = np.zeros((4, len(label_space)))
    for quad_idx, quad in enumerate(_quadrants(area.bbox)):
        qx0, qy0, qx1, qy1 = quad
        qcx, qcy = (qx0 + qx1) / 2.0, (qy0 + qy1) / 2.0
        qw, qh = (qx1 - qx0) / 2.0, (qy1 - qy0) / 2.0
        vectors = []
        for scale in config.scales():
            window = (
                int(round(qcx - qw * scale)),
                int(round(qcy - qh * scale)),
                int(round(qcx + qw * scale)),
                int(round(qcy + qh * scale)),
            )
            try:
                hist = semantic_histogram(semantic_map, window)
            except Exception:
                continue
            if not hist:
                continue
            vec = np.zeros(len(label_space))
            for label, fraction in hist.items():
                if label in index:
                    vec[index[label]] = fraction
            vectors.append(vec)
        if vectors:
            props[quad_idx] = np.mean(vectors, axis=0)
    return SiaDescriptor(quarter_props=props, label_space=tuple(label_space))


def sia_distance(d0: SiaDescriptor, d1: SiaDescriptor) -> float:
    """L2 distance over the concatenated quadrant vectors."""
    if d0.label_space != d1.label_space:
        raise ValueError("descriptors built over different label spaces")
    return float(np.linalg.norm(d0.quarter_props - d1.quarter_props))


# ---------------------------------------------------------------------------
# Nearest-neighbor matching with doubtful-area flagging


def _nearest_neighbor_match(
    items0,
    items1,
    distance,
    allowed,
    reject_above: float,
    doubt_margin: float,
    shared_target_doubt: bool,
    kind: str,
    provenance: str,
):
    """Shared matching core for both area kinds.

    Doubt rules: (1) a source with two candidates closer than the margin
    flags itself and both targets; (2) optionally, two sources whose best
    candidates collide on one target within the margin flag all three.
    Sources whose best target became doubtful are flagged too, never
    silently re-assigned. Survivors above the rejection threshold are
    dropped without being marked doubtful.
    """
    dist_rows = []
    for a0, d0 in items0:
        row = [
            (distance(d0, d1), j)
            for j, (a1, d1) in enumerate(items1)
            if allowed(a0, a1)
        ]
        row.sort()
        dist_rows.append(row)

    doubt0: set[int] = set()
    doubt1: set[int] = set()
    best: dict[int, tuple[float, int]] = {}
    for i, row in enumerate(dist_rows):
        if not row:
            continue
        best_d, best_j = row[0]
        best[i] = (best_d, best_j)
        for d, j in row[1:]:
            if abs(d - best_d) < doubt_margin:
                doubt0.add(i)
                doubt1.add(best_j)
                doubt1.add(j)

    if shared_target_doubt:
        by_target: dict[int, list[tuple[float, int]]] = {}
        for i, (d, j) in best.items():
            by_target.setdefault(j, []).append((d, i))
        for j, entries in by_target.items():
            entries.sort()
            for (da, ia) in entries:
                for (db, ib) in entries:
                    if ia < ib and abs(da - db) < doubt_margin:
                        doubt0.update((ia, ib))
                        doubt1.add(j)

    for i, (d, j) in best.items():
        if j in doubt1:
            doubt0.add(i)

    # Resolve remaining target collisions in favor of the closer source.
    winners: dict[int, int] = {}
    for i, (d, j) in sorted(best.items(), key=lambda kv: (kv[1][0], kv[0])):
        if i in doubt0 or j in doubt1:
            continue
        if j not in winners:
            winners[j] = i

    matches = []
    for j, i in sorted(winners.items()):
        d = best[i][0]
        if d > reject_above:
            continue
        matches.append(
            AreaMatchCandidate(
                a0=items0[i][0],
                a1=items1[j][0],
                kind=kind,
                desc_distance=d,
                status="accepted",
                provenance=provenance,
            )
        )
    matches.sort(key=lambda m: (m.a0.bbox, m.a1.bbox))
    doubtful0 = [items0[i][0] for i in sorted(doubt0)]
    doubtful1 = [items1[j][0] for j in sorted(doubt1)]
    return matches, doubtful0, doubtful1


def match_soa(described0, described1, config: SgamConfig):
    """Match object areas: same anchor label, nearest by Hamming fraction."""
    return _nearest_neighbor_match(
        described0,
        described1,
        distance=soa_distance,
        allowed=lambda a0, a1: a0.anchor_label == a1.anchor_label,
        reject_above=config.soa_hamming_max,
        doubt_margin=config.doubt_margin,
        shared_target_doubt=False,
        kind=SOA,
        provenance=SOA,
    )


def match_sia(described0, described1, config: SgamConfig):
    """Match intersection areas by descriptor L2 distance."""
    return _nearest_neighbor_match(
        described0,
        described1,
        distance=sia_distance,
        allowed=lambda a0, a1: True,
        reject_above=config.sia_l2_max,
        doubt_margin=config.doubt_margin,
        shared_target_doubt=True,
        kind=SIA,
        provenance=SIA,
    )


def adjust_sia_scale(soa_matches: list[AreaMatchCandidate], config: SgamConfig) -> tuple[float, float]:
    """Window scale for image-1 intersection-area detection.

    Geometric mean of per-match sqrt bbox-area ratios; (1, 1) without any
    accepted object matches.
    """
    ratios = [
        np.sqrt(m.a1.pixel_area() / m.a0.pixel_area())
        for m in soa_matches
        if m.kind == SOA
    ]
    if not ratios:
        return 1.0, 1.0
    s = float(np.exp(np.mean(np.log(ratios))))
    return s, s


def sam_pipeline(map0: SemanticMap, map1: SemanticMap, config: SgamConfig) -> SamOutput:
    """Detect, describe and match both area kinds between two label maps."""
    label_space = tuple(sorted(set(map0.distinct_labels()) | set(map1.distinct_labels())))

    soa0 = detect_soa(map0, config)
    soa1 = detect_soa(map1, config)
    described0 = [(a, describe_soa(map0, a, label_space, config)) for a in soa0]
    described1 = [(a, describe_soa(map1, a, label_space, config)) for a in soa1]
    soa_matches, doubt0, doubt1 = match_soa(described0, described1, config)

    scale, _ = adjust_sia_scale(soa_matches, config)
    window0 = min(config.default_area_size, map0.width, map0.height)
    window1 = int(round(window0 * scale))
    window1 = max(16, min(window1, map1.width, map1.height))
    sia0 = detect_sia(map0, window0, config)
    sia1 = detect_sia(map1, window1, config)
    sia_d0 = [(a, describe_sia(map0, a, label_space, config)) for a in sia0]
    sia_d1 = [(a, describe_sia(map1, a, label_space, config)) for a in sia1]
    sia_matches, sia_doubt0, sia_doubt1 = match_sia(sia_d0, sia_d1, config)

    return SamOutput(
        accepted=soa_matches + sia_matches,
        doubtful_a0=doubt0 + sia_doubt0,
        doubtful_a1=doubt1 + sia_doubt1,
        sia_scale=scale,
    )
