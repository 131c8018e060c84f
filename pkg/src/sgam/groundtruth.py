"""Ground-truth two-view geometry: a pixel projector for metrics and oracles.

A :class:`GroundTruth` either carries (pose, intrinsics, depth map) or a
plane homography, and maps pixels of image 0 to image 1 together with a
validity mask (no depth, behind camera, out of bounds, or occluded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, FundamentalMatrix, PoseEstimate, fundamental_from_pose

_OCCLUSION_REL_TOL = 1e-3


@dataclass(frozen=True)
class GroundTruth:
    """Exact relative geometry of an image pair.

    Either ``depth0`` (with pose + intrinsics) or ``homography`` must be
    provided. ``depth1`` additionally enables occlusion checking. The
    projector is only defined where ``valid`` says so.
    """

    rotation: np.ndarray | None = None
    translation: np.ndarray | None = None
    k0: CameraIntrinsics | None = None
    k1: CameraIntrinsics | None = None
    depth0: np.ndarray | None = None
    depth1: np.ndarray | None = None
    homography: np.ndarray | None = None
    image1_size: tuple[int, int] | None = None  # (width, height) for bounds checks

    def __post_init__(self):
        if self.homography is None:
            if self.depth0 is None or self.rotation is None or self.k0 is None:
                raise ValueError("need either a homography or pose + intrinsics + depth0")

    @property
    def pose(self) -> PoseEstimate:
        if self.rotation is None:
            raise ValueError("homography-only ground truth carries no pose")
        return PoseEstimate(rotation=self.rotation, translation_dir=self.translation)

    def fundamental(self) -> FundamentalMatrix:
        if self.rotation is None:
            raise ValueError("homography-only ground truth carries no fundamental matrix")
        return fundamental_from_pose(self.rotation, self.translation, self.k0, self.k1)

    def _bounds1(self) -> tuple[int, int]:
        if self.image1_size is not None:
            return self.image1_size
        if self.depth1 is not None:
            h, w = self.depth1.shape
            return w, h
        if self.depth0 is not None:
            h, w = self.depth0.shape
            return w, h
        raise ValueError("image-1 bounds unknown")

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map (N, 2) pixels of image 0 into image 1.

        Returns (projected (N, 2), valid mask (N,)). Projections of invalid
        points are NaN.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if self.homography is not None:
            return self._project_homography(pts)
        return self._project_depth(pts)

    def _project_homography(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = np.asarray(self.homography, dtype=np.float64)
        ph = np.hstack([pts, np.ones((len(pts), 1))]) @ h.T
        valid = np.abs(ph[:, 2]) > 1e-12
        out = np.full((len(pts), 2), np.nan)
        out[valid] = ph[valid, :2] / ph[valid, 2:3]
        w1, h1 = self._bounds1() if (self.image1_size or self.depth1 is not None) else (None, None)
        if w1 is not None:
            inb = valid & (out[:, 0] >= 0) & (out[:, 0] < w1) & (out[:, 1] >= 0) & (out[:, 1] < h1)
            out[~inb] = np.nan
            valid = inb
        return out, valid

    def _project_depth(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h0, w0 = self.depth0.shape
        xi = np.clip(np.round(pts[:, 0]).astype(int), 0, w0 - 1)
        yi = np.clip(np.round(pts[:, 1]).astype(int), 0, h0 - 1)
        in0 = (pts[:, 0] >= 0) & (pts[:, 0] < w0) & (pts[:, 1] >= 0) & (pts[:, 1] < h0)
        z = self.depth0[yi, xi]
        valid = in0 & np.isfinite(z) & (z > 0)

        k0_inv = np.linalg.inv(self.k0.matrix())
        rays = np.hstack([pts, np.ones((len(pts), 1))]) @ k0_inv.T
        x0 = rays * z[:, None]
        x1 = x0 @ np.asarray(self.rotation).T + np.asarray(self.translation)
        z1 = x1[:, 2]
        valid &= z1 > 1e-9

        k1 = (self.k1 or self.k0).matrix()
        proj = np.full((len(pts), 2), np.nan)
        uvw = x1 @ k1.T
        proj_all = uvw[:, :2] / np.where(valid, uvw[:, 2], 1.0)[:, None]

        w1, h1 = self._bounds1()
        inb = (
            (proj_all[:, 0] >= 0)
            & (proj_all[:, 0] < w1)
            & (proj_all[:, 1] >= 0)
            & (proj_all[:, 1] < h1)
        )
        valid &= inb

        if self.depth1 is not None:
            safe_proj = np.nan_to_num(proj_all, nan=0.0, posinf=0.0, neginf=0.0)
            x1i = np.clip(np.round(safe_proj[:, 0]).astype(int), 0, self.depth1.shape[1] - 1)
            y1i = np.clip(np.round(safe_proj[:, 1]).astype(int), 0, self.depth1.shape[0] - 1)
            seen = self.depth1[y1i, x1i]
            occluded = ~(
                np.isfinite(seen) & (np.abs(seen - z1) <= _OCCLUSION_REL_TOL * np.maximum(z1, 1e-9))
            )
            valid &= ~occluded

        proj[valid] = proj_all[valid]
        return proj, valid

    def reprojection_errors(self, matches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance between projected q and claimed p for (N, 4) match rows."""
        rows = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
        proj, valid = self.project(rows[:, 0:2])
        err = np.full(len(rows), np.nan)
        err[valid] = np.linalg.norm(proj[valid] - rows[valid, 2:4], axis=1)
        return err, valid

    def to_json_dict(self, depth0_path: str | None = None, depth1_path: str | None = None) -> dict:
        """JSON-friendly form; depth arrays are referenced by path."""
        if self.homography is not None:
            return {"homography": np.asarray(self.homography).tolist()}
        out = {
            "pose": {
                "rotation": np.asarray(self.rotation).tolist(),
                "translation": np.asarray(self.translation).tolist(),
            },
            "K0": self.k0.matrix().tolist(),
            "K1": (self.k1 or self.k0).matrix().tolist(),
        }
        if depth0_path:
            out["depth0"] = depth0_path
        if depth1_path:
            out["depth1"] = depth1_path
        if self.image1_size:
            out["image1_size"] = list(self.image1_size)
        return out


def ground_truth_from_json(payload: dict, base_dir=None) -> GroundTruth:
    """Inverse of :meth:`GroundTruth.to_json_dict`; resolves depth paths."""
    from pathlib import Path

    if "homography" in payload:
        size = payload.get("image1_size")
        return GroundTruth(
            homography=np.asarray(payload["homography"], dtype=np.float64),
            image1_size=tuple(size) if size else None,
        )
    base = Path(base_dir) if base_dir else Path(".")

    def _load(key):
        if key not in payload:
            return None
        p = Path(payload[key])
        return np.load(p if p.is_absolute() else base / p)

    size = payload.get("image1_size")
    return GroundTruth(
        rotation=np.asarray(payload["pose"]["rotation"], dtype=np.float64),
        translation=np.asarray(payload["pose"]["translation"], dtype=np.float64),
        k0=CameraIntrinsics.from_matrix(payload["K0"]),
        k1=CameraIntrinsics.from_matrix(payload["K1"]),
        depth0=_load("depth0"),
        depth1=_load("depth1"),
        image1_size=tuple(size) if size else None,
    )
