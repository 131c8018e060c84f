"""Point matchers behind one narrow interface.

A matcher receives two crops (already resized to the configured square
size) plus the transforms mapping crop pixels back to original-image
pixels, and returns correspondences in original coordinates. Three
built-ins are provided: a ground-truth oracle (the desk-scale stand-in for
learned matchers), a normalized-cross-correlation patch matcher, and a
client that drives an external matcher process over a line-delimited JSON
protocol.
"""

from __future__ import annotations

import json
import os
import select
import subprocess
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .config import SgamConfig
from .errors import (
    CovisibilityError,
    MatcherError,
    MatcherTimeoutError,
    ProtocolError,
)
from .geometry import MatchSet, Point2
from .groundtruth import GroundTruth

BBox = tuple[int, int, int, int]


@dataclass(frozen=True)
class AreaTransform:
    """Crop-to-original pixel mapping: original = offset + crop * scale."""

    offset: Point2
    scale_x: float
    scale_y: float

    def __post_init__(self):
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise ValueError("transform scales must be positive")

    def to_original(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return pts * [self.scale_x, self.scale_y] + [self.offset.x, self.offset.y]

    def to_crop(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return (pts - [self.offset.x, self.offset.y]) / [self.scale_x, self.scale_y]


@dataclass(frozen=True)
class MatcherRequest:
    """Crops resized to the matcher input size, plus their transforms."""

    image0_crop: np.ndarray
    image1_crop: np.ndarray
    transform0: AreaTransform
    transform1: AreaTransform
    max_matches: int = 1000

    def crop_size(self) -> tuple[int, int]:
        h, w = self.image0_crop.shape[:2]
        return w, h


@dataclass(frozen=True)
class MatcherResponse:
    """Matches in original-image coordinates; confidences optional."""

    matches: MatchSet
    confidences: np.ndarray | None = None

    def __post_init__(self):
        if self.confidences is not None and len(self.confidences) != len(self.matches):
            raise ProtocolError("confidence count does not match correspondence count")


@runtime_checkable
class PointMatcher(Protocol):
    def match(self, req: MatcherRequest) -> MatcherResponse: ...


def pair_seed(base_seed: int, t0: AreaTransform, t1: AreaTransform) -> int:
    """Seed tied to the crop geometry (not call order): a pairing always
    draws the same randomness no matter when or where it is matched."""
    key = json.dumps(
        [
            round(t0.offset.x, 4), round(t0.offset.y, 4), round(t0.scale_x, 6), round(t0.scale_y, 6),
            round(t1.offset.x, 4), round(t1.offset.y, 4), round(t1.scale_x, 6), round(t1.scale_y, 6),
        ]
    ).encode()
    return int(np.random.SeedSequence([base_seed, zlib.crc32(key)]).generate_state(1)[0])


def _crop_bounds(t: AreaTransform, size: tuple[int, int]) -> BBox:
    w, h = size
    x0, y0 = t.offset.x, t.offset.y
    return x0, y0, x0 + w * t.scale_x, y0 + h * t.scale_y


class OracleMatcher:
    """Samples true correspondences from scene ground truth.

    Points are drawn on the crop-0 pixel grid, projected exactly, then
    perturbed with Gaussian noise expressed in crop-1 pixels (a matcher's
    localization error lives at its input resolution). A configured
    fraction is replaced by uniform outliers inside crop 1.
    """

    def __init__(
        self,
        gt: GroundTruth,
        noise_sigma: float = 0.0,
        outlier_rate: float = 0.0,
        n_matches: int = 300,
        seed: int = 0,
    ):
        if not 0.0 <= outlier_rate <= 1.0:
            raise ValueError("outlier_rate must be in [0, 1]")
        self.gt = gt
        self.noise_sigma = float(noise_sigma)
        self.outlier_rate = float(outlier_rate)
        self.n_matches = int(n_matches)
        self.seed = int(seed)

    def match(self, req: MatcherRequest) -> MatcherResponse:
        rng = np.random.default_rng(pair_seed(self.seed, req.transform0, req.transform1))
        n = min(self.n_matches, req.max_matches)
        bx0, by0, bx1, by1 = _crop_bounds(req.transform0, req.crop_size())
        gx0 = np.arange(int(np.ceil(bx0)), int(np.floor(bx1)))
        gy0 = np.arange(int(np.ceil(by0)), int(np.floor(by1)))
        if len(gx0) == 0 or len(gy0) == 0:
            raise CovisibilityError("crop 0 covers no full pixels")
        # oversample candidate grid points, keep the co-visible ones
        total = len(gx0) * len(gy0)
        want = min(total, max(n * 8, 64))
        flat = rng.choice(total, size=want, replace=False)
        pts0 = np.stack([gx0[flat % len(gx0)], gy0[flat // len(gx0)]], axis=1).astype(np.float64)
        proj, valid = self.gt.project(pts0)
        cx0, cy0, cx1, cy1 = _crop_bounds(req.transform1, req.crop_size())
        inside = (
            valid
            & (proj[:, 0] >= cx0) & (proj[:, 0] < cx1)
            & (proj[:, 1] >= cy0) & (proj[:, 1] < cy1)
        )
        if inside.sum() < n:
            raise CovisibilityError(
                f"only {int(inside.sum())} co-visible points for {n} requested matches"
            )
        keep = np.nonzero(inside)[0][:n]
        q = pts0[keep]
        p = proj[keep]
        if self.noise_sigma > 0:
            noise = rng.normal(0.0, self.noise_sigma, size=p.shape)
            p = p + noise * [req.transform1.scale_x, req.transform1.scale_y]
        outliers = rng.random(n) < self.outlier_rate
        if outliers.any():
            m = int(outliers.sum())
            p[outliers, 0] = rng.uniform(cx0, cx1, size=m)
            p[outliers, 1] = rng.uniform(cy0, cy1, size=m)
        # noise may push a point over the crop edge; every emitted match must
        # map back into its crop
        p[:, 0] = np.clip(p[:, 0], cx0, np.nextafter(cx1, -np.inf))
        p[:, 1] = np.clip(p[:, 1], cy0, np.nextafter(cy1, -np.inf))
        return MatcherResponse(matches=MatchSet(np.hstack([q, p])))


class ClassicalMatcher:
    """Normalized cross-correlation over a sparse grid of 16x16 patches.

    Deliberately simple: grid-spaced templates from crop 0 are searched in a
    local window of crop 1, with parabolic sub-pixel refinement of the
    correlation peak. Deterministic; the seed parameter is accepted for
    interface symmetry only.
    """

    def __init__(self, patch: int = 16, stride: int = 16, search: int = 24,
                 min_score: float = 0.55, seed: int = 0):
        self.patch = patch
        self.stride = stride
        self.search = search
        self.min_score = min_score
        self.seed = seed

    @staticmethod
    def _gray(img: np.ndarray) -> np.ndarray:
        if img.ndim == 2:
            return img.astype(np.float64)
        return img[..., :3].astype(np.float64) @ [0.299, 0.587, 0.114]

    def match(self, req: MatcherRequest) -> MatcherResponse:
        g0 = self._gray(req.image0_crop)
        g1 = self._gray(req.image1_crop)
        h, w = g0.shape
        half = self.patch // 2
        rows = []
        scores = []
        for cy in range(half + self.search, h - half - self.search, self.stride):
            for cx in range(half + self.search, w - half - self.search, self.stride):
                tpl = g0[cy - half : cy + half, cx - half : cx + half]
                ts = tpl.std()
                if ts < 1e-6:
                    continue
                region = g1[
                    cy - half - self.search : cy + half + self.search,
                    cx - half - self.search : cx + half + self.search,
                ]
                windows = np.lib.stride_tricks.sliding_window_view(region, tpl.shape)
                wm = windows.mean(axis=(2, 3))
                ws = windows.std(axis=(2, 3))
                ws = np.where(ws < 1e-6, np.inf, ws)
                corr = (
                    np.einsum("ijkl,kl->ij", windows, tpl) / tpl.size - wm * tpl.mean()
                ) / (ws * ts)
                iy, ix = np.unravel_index(np.argmax(corr), corr.shape)
                score = corr[iy, ix]
                if score < self.min_score:
                    continue
                dx = self._parabolic(corr[iy, max(ix - 1, 0) : ix + 2]) if 0 < ix < corr.shape[1] - 1 else 0.0
                dy = self._parabolic(corr[max(iy - 1, 0) : iy + 2, ix]) if 0 < iy < corr.shape[0] - 1 else 0.0
                px = cx - self.search + ix + dx
                py = cy - self.search + iy + dy
                rows.append((cx, cy, px, py))
                scores.append(score)
        if not rows:
            return MatcherResponse(matches=MatchSet(np.empty((0, 4))))
        rows = np.asarray(rows, dtype=np.float64)[: req.max_matches]
        scores = np.asarray(scores, dtype=np.float64)[: req.max_matches]
        q = req.transform0.to_original(rows[:, 0:2])
        p = req.transform1.to_original(rows[:, 2:4])
        conf = np.clip((scores + 1.0) / 2.0, 0.0, 1.0)
        return MatcherResponse(matches=MatchSet(np.hstack([q, p])), confidences=conf)

    @staticmethod
    def _parabolic(triple: np.ndarray) -> float:
        if len(triple) != 3:
            return 0.0
        a, b, c = triple
        denom = a - 2 * b + c
        if abs(denom) < 1e-12:
            return 0.0
        return float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))


class SubprocessMatcher:
    """Client for an external matcher speaking line-delimited JSON.

    Handshake, then one request / one reply. Crops travel as PNG files in a
    per-session temporary directory (override the root with A2PM_TMPDIR).
    Reply coordinates are crop-local; this client maps them back through the
    area transforms.
    """

    def __init__(self, command: list[str], timeout: float = 30.0):
        self.command = list(command)
        self.timeout = float(timeout)
        self._proc: subprocess.Popen | None = None
        self._next_id = 0
        self._tmpdir = None
        self.name = "?"

    def _ensure_started(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        root = os.environ.get("A2PM_TMPDIR") or None
        self._tmpdir = tempfile.TemporaryDirectory(prefix="a2pm-", dir=root)
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._send({"type": "hello", "version": 1})
        reply = self._recv()
        if reply.get("type") != "hello" or reply.get("version") != 1:
            raise ProtocolError(f"bad handshake reply: {reply}")
        self.name = str(reply.get("name", "?"))

    def _send(self, payload: dict):
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise MatcherError(f"matcher process is gone: {e}") from e

    def _recv(self) -> dict:
        deadline_fd = self._proc.stdout
        ready, _, _ = select.select([deadline_fd], [], [], self.timeout)
        if not ready:
            raise MatcherTimeoutError(f"no reply within {self.timeout} s")
        line = deadline_fd.readline()
        if not line:
            code = self._proc.poll()
            raise MatcherError(f"matcher closed its pipe (exit code {code})")
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"reply is not JSON: {line[:200]!r}") from e

    def match(self, req: MatcherRequest) -> MatcherResponse:
        from PIL import Image

        self._ensure_started()
        self._next_id += 1
        rid = self._next_id
        d = Path(self._tmpdir.name)
        path0 = d / f"req{rid}_0.png"
        path1 = d / f"req{rid}_1.png"
        Image.fromarray(req.image0_crop).save(path0)
        Image.fromarray(req.image1_crop).save(path1)
        self._send(
            {
                "type": "match",
                "id": rid,
                "image0": str(path0),
                "image1": str(path1),
                "max_matches": req.max_matches,
            }
        )
        reply = self._recv()
        if reply.get("id") != rid:
            raise ProtocolError(f"reply id {reply.get('id')} does not echo request id {rid}")
        if reply.get("type") == "error":
            raise MatcherError(f"matcher error: {reply.get('message', '?')}")
        if reply.get("type") != "matches":
            raise ProtocolError(f"unexpected reply type {reply.get('type')!r}")
        rows = np.asarray(reply.get("matches", []), dtype=np.float64).reshape(-1, 4)
        conf = reply.get("confidences")
        if conf is not None and len(conf) != len(rows):
            raise ProtocolError("confidence count does not match correspondence count")
        q = req.transform0.to_original(rows[:, 0:2])
        p = req.transform1.to_original(rows[:, 2:4])
        return MatcherResponse(
            matches=MatchSet(np.hstack([q, p])),
            confidences=None if conf is None else np.asarray(conf, dtype=np.float64),
        )

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=2.0)
            except Exception:
                self._proc.kill()
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# Crop preparation (consumed by the pipeline and the geometry stages)


def expand_bbox_to_aspect(bbox: BBox, aspect: float, width: int, height: int) -> BBox:
    """Grow a bbox symmetrically to the target w/h ratio, clamped to the image.

    Clamping at a border shifts the expansion to the opposite side, so the
    crop keeps its size (and an isotropic scale) whenever the image allows.
    """
    x0, y0, x1, y1 = bbox
    w = x1 - x0
    h = y1 - y0
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate bbox {bbox}")
    if w / h < aspect:
        w_new, h_new = h * aspect, h
    else:
        w_new, h_new = w, w / aspect
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    nx0, nx1 = cx - w_new / 2.0, cx + w_new / 2.0
    ny0, ny1 = cy - h_new / 2.0, cy + h_new / 2.0
    if nx0 < 0:
        nx1 = min(width, nx1 - nx0)
        nx0 = 0
    if nx1 > width:
        nx0 = max(0, nx0 - (nx1 - width))
        nx1 = width
    if ny0 < 0:
        ny1 = min(height, ny1 - ny0)
        ny0 = 0
    if ny1 > height:
        ny0 = max(0, ny0 - (ny1 - height))
        ny1 = height
    out = (int(round(nx0)), int(round(ny0)), int(round(nx1)), int(round(ny1)))
    if out[2] <= out[0] or out[3] <= out[1]:
        raise ValueError(f"bbox {bbox} collapsed during expansion")
    return out


def crop_and_resize(image: np.ndarray, bbox: BBox, size: int) -> tuple[np.ndarray, AreaTransform]:
    """Crop a bbox and resize to size x size; returns the crop transform."""
    from PIL import Image

    x0, y0, x1, y1 = bbox
    crop = image[y0:y1, x0:x1]
    resized = np.asarray(
        Image.fromarray(crop).resize((size, size), Image.Resampling.BILINEAR)
    )
    transform = AreaTransform(
        offset=Point2(float(x0), float(y0)),
        scale_x=(x1 - x0) / size,
        scale_y=(y1 - y0) / size,
    )
    return resized, transform


def prepare_area_pair(
    bbox0: BBox,
    bbox1: BBox,
    image0: np.ndarray,
    image1: np.ndarray,
    config: SgamConfig,
    max_matches: int | None = None,
) -> MatcherRequest:
    """Build a matcher request from two area bboxes per the crop policy:
    expand to the default aspect ratio, clamp with opposite-side
    compensation, crop, resize to the default size."""
    size = config.default_area_size
    e0 = expand_bbox_to_aspect(bbox0, 1.0, image0.shape[1], image0.shape[0])
    e1 = expand_bbox_to_aspect(bbox1, 1.0, image1.shape[1], image1.shape[0])
    crop0, t0 = crop_and_resize(image0, e0, size)
    crop1, t1 = crop_and_resize(image1, e1, size)
    return MatcherRequest(
        image0_crop=crop0,
        image1_crop=crop1,
        transform0=t0,
        transform1=t1,
        max_matches=max_matches or 1000,
    )


def full_image_request(
    image0: np.ndarray, image1: np.ndarray, config: SgamConfig, max_matches: int | None = None
) -> MatcherRequest:
    """Matcher request covering both full images (degraded / global mode)."""
    b0 = (0, 0, image0.shape[1], image0.shape[0])
    b1 = (0, 0, image1.shape[1], image1.shape[0])
    return prepare_area_pair(b0, b1, image0, image1, config, max_matches)
