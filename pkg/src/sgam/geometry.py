"""Epipolar-geometry numerics.

Sampson distances, normalized 8-point fundamental-matrix estimation, a
seeded RANSAC wrapper, essential-matrix pose recovery with cheirality
voting, and angular pose errors.

Conventions: a correspondence is (q, p) with q in image 0 and p in image 1,
satisfying p^T F q = 0. Fundamental matrices are scale-normalized to unit
Frobenius norm with a positive largest-magnitude entry. Poses map camera-0
coordinates to camera-1: X1 = R @ X0 + t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CheiralityError,
    DegenerateGeometryError,
    EpipoleError,
    InsufficientMatchesError,
    NoConsensusError,
)

_EPIPOLE_EPS = 1e-15


@dataclass(frozen=True)
class Point2:
    """Pixel position (x = column, y = row)."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class Correspondence:
    """Matched point pair: q in image 0, p in image 1."""

    q: Point2
    p: Point2


class MatchSet:
    """Ordered set of correspondences without exact duplicates.

    Internally an (N, 4) float64 array of rows [qx, qy, px, py]; insertion
    order is preserved, exact duplicate rows are dropped on construction.
    """

    __slots__ = ("array", "source_area")

    def __init__(self, array, source_area: str | None = None):
        arr = np.asarray(array, dtype=np.float64).reshape(-1, 4)
        if arr.size and not np.isfinite(arr).all():
            raise ValueError("correspondences must be finite")
        if len(arr) > 1:
            _, first = np.unique(arr, axis=0, return_index=True)
            if len(first) != len(arr):
                arr = arr[np.sort(first)]
        self.array = arr
        self.array.setflags(write=False)
        self.source_area = source_area

    @classmethod
    def from_pairs(cls, pairs, source_area: str | None = None) -> "MatchSet":
        rows = [[c.q.x, c.q.y, c.p.x, c.p.y] for c in pairs]
        return cls(np.array(rows, dtype=np.float64).reshape(-1, 4), source_area)

    def __len__(self) -> int:
        return len(self.array)

    def __iter__(self):
        for qx, qy, px, py in self.array:
            yield Correspondence(Point2(qx, qy), Point2(px, py))

    def __eq__(self, other) -> bool:
        return isinstance(other, MatchSet) and np.array_equal(self.array, other.array)

    @property
    def q(self) -> np.ndarray:
        return self.array[:, 0:2]

    @property
    def p(self) -> np.ndarray:
        return self.array[:, 2:4]

    def concat(self, other: "MatchSet") -> "MatchSet":
        return MatchSet(np.vstack([self.array, other.array]))


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 fundamental matrix, unit Frobenius norm, leading sign positive."""

    m: np.ndarray

    @classmethod
    def from_array(cls, m, *, project_rank2: bool = True) -> "FundamentalMatrix":
        m = np.asarray(m, dtype=np.float64).reshape(3, 3)
        if project_rank2:
            u, s, vt = np.linalg.svd(m)
            s = s.copy()
            s[2] = 0.0
            m = u @ np.diag(s) @ vt
        norm = np.linalg.norm(m)
        if norm == 0.0:
            raise ValueError("zero matrix is not a fundamental matrix")
        m = m / norm
        flat = m.ravel()
        lead = flat[np.argmax(np.abs(flat))]
        if lead < 0:
            m = -m
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        return cls(m)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_matrix(cls, k) -> "CameraIntrinsics":
        k = np.asarray(k, dtype=np.float64)
        return cls(fx=k[0, 0], fy=k[1, 1], cx=k[0, 2], cy=k[1, 2], skew=k[0, 1])


@dataclass(frozen=True)
class PoseEstimate:
    """Relative pose: rotation plus unit translation direction."""

    rotation: np.ndarray
    translation_dir: np.ndarray
    inlier_count: int = 0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation_dir, dtype=np.float64).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation must have determinant +1")
        norm = np.linalg.norm(t)
        if norm == 0.0:
            raise ValueError("translation direction must be nonzero")
        t = t / norm
        r = np.ascontiguousarray(r)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation_dir", t)


def _homogeneous(points: np.ndarray) -> np.ndarray:
    return np.hstack([points, np.ones((len(points), 1))])


def _sampson_terms(f: np.ndarray, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Per-pair Sampson distances; raises near an epipole."""
    qh = _homogeneous(q)
    ph = _homogeneous(p)
    fq = qh @ f.T          # rows: F q
    ftp = ph @ f           # rows: F^T p
    residual = np.einsum("ij,ij->i", ph, fq)
    denom = fq[:, 0] ** 2 + fq[:, 1] ** 2 + ftp[:, 0] ** 2 + ftp[:, 1] ** 2
    if np.any(denom < _EPIPOLE_EPS):
        raise EpipoleError("epipolar line gradients vanish: point at an epipole")
    return residual**2 / denom


def sampson_single(f: FundamentalMatrix, c: Correspondence) -> float:
    """First-order epipolar error of one correspondence (squared pixels)."""
    q = np.array([[c.q.x, c.q.y]])
    p = np.array([[c.p.x, c.p.y]])
    return float(_sampson_terms(f.m, q, p)[0])


def sampson_set(f: FundamentalMatrix, s: MatchSet) -> tuple[float, float]:
    """Sum and mean Sampson distance over a non-empty match set."""
    if len(s) == 0:
        raise InsufficientMatchesError("cannot evaluate an empty match set")
    terms = _sampson_terms(f.m, s.q, s.p)
    total = float(terms.sum())
    return total, total / len(terms)


def sampson_values(f: FundamentalMatrix, s: MatchSet) -> np.ndarray:
    """Per-correspondence Sampson distances for a match set."""
    if len(s) == 0:
        raise InsufficientMatchesError("cannot evaluate an empty match set")
    return _sampson_terms(f.m, s.q, s.p)


def _hartley_normalization(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = points.mean(axis=0)
    centered = points - centroid
    mean_dist = np.sqrt((centered**2).sum(axis=1)).mean()
    if mean_dist < 1e-12:
        raise DegenerateGeometryError("coincident points cannot be normalized")
    scale = np.sqrt(2.0) / mean_dist
    t = np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return centered * scale, t


def _check_not_collinear(points: np.ndarray, side: str) -> None:
    centered = points - points.mean(axis=0)
    # Smallest-to-largest eigenvalue ratio of the 2x2 scatter matrix.
    cov = centered.T @ centered
    eig = np.linalg.eigvalsh(cov)
    if eig[1] <= 0 or eig[0] / eig[1] < 1e-20:
        raise DegenerateGeometryError(f"points in image {side} are collinear")


def estimate_fundamental(s: MatchSet) -> FundamentalMatrix:
    """Normalized 8-point estimate from at least eight correspondences.

    Exact on noiseless data. Collinear inputs raise; coplanar scene points
    are accepted (the estimate is then one member of the compatible family).
    """
    if len(s) < 8:
        raise InsufficientMatchesError(f"need at least 8 correspondences, got {len(s)}")
    _check_not_collinear(s.q, "0")
    _check_not_collinear(s.p, "1")
    qn, t0 = _hartley_normalization(s.q)
    pn, t1 = _hartley_normalization(s.p)
    u0, v0 = qn[:, 0], qn[:, 1]
    u1, v1 = pn[:, 0], pn[:, 1]
    a = np.stack(
        [u1 * u0, u1 * v0, u1, v1 * u0, v1 * v0, v1, u0, v0, np.ones(len(s))], axis=1
    )
    _, _, vt = np.linalg.svd(a)
    f_hat = vt[-1].reshape(3, 3)
    f = t1.T @ f_hat @ t0
    return FundamentalMatrix.from_array(f)


def ransac_fundamental(
    s: MatchSet,
    inlier_threshold: float = 1.0,
    max_iters: int = 1000,
    seed: int = 0,
    confidence: float = 0.999,
) -> tuple[FundamentalMatrix, MatchSet]:
    """Seeded RANSAC around the 8-point solver.

    The inlier test is the single-pair Sampson distance below
    ``inlier_threshold`` (squared pixels). The model is re-estimated on the
    final inlier set. Deterministic for a fixed seed.
    """
    n = len(s)
    if n < 8:
        raise InsufficientMatchesError(f"need at least 8 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best_mask = None
    best_sample = None
    best_count = 0
    iters = max_iters
    done = 0
    while done < iters:
        done += 1
        idx = rng.choice(n, size=8, replace=False)
        try:
            model = estimate_fundamental(MatchSet(s.array[idx]))
        except DegenerateGeometryError:
            continue
        try:
            errors = _sampson_terms(model.m, s.q, s.p)
        except EpipoleError:
            continue
        mask = errors < inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            best_sample = idx
            ratio = count / n
            if 0.0 < ratio < 1.0:
                # Standard adaptive termination at the requested confidence.
                denom = np.log1p(-(ratio**8)) if ratio**8 < 1.0 else -np.inf
                if denom < 0:
                    needed = int(np.ceil(np.log(1.0 - confidence) / denom))
                    iters = min(iters, max(done, needed))
            elif ratio >= 1.0:
                break
    if best_mask is None or best_count < 8:
        raise NoConsensusError("no consensus set of at least 8 inliers")
    # A minimal sample always explains itself exactly, so consensus only
    # counts if the model is also supported by points outside the sample;
    # otherwise random data would "succeed" on every draw.
    extras = int(best_mask.sum()) - int(best_mask[best_sample].sum())
    if extras < min(8, n - 8):
        raise NoConsensusError("consensus does not extend beyond the minimal sample")
    # Re-estimate on the consensus set and recount under the refit model.
    # On nearly degenerate supports the least-squares refit can pick a
    # model with tiny algebraic but huge Sampson residuals; keep whichever
    # of (sample model, refit model) explains more points.
    sample_model = estimate_fundamental(MatchSet(s.array[best_sample]))
    candidates = [(best_count, sample_model, best_mask)]
    try:
        refit = estimate_fundamental(MatchSet(s.array[best_mask]))
        refit_errors = _sampson_terms(refit.m, s.q, s.p)
        refit_mask = refit_errors < inlier_threshold
        candidates.append((int(refit_mask.sum()), refit, refit_mask))
    except (DegenerateGeometryError, EpipoleError):
        pass
    count, model, final_mask = max(candidates, key=lambda c: c[0])
    if count < 8:
        raise NoConsensusError("consensus set collapsed under re-estimation")
    return model, MatchSet(s.array[final_mask], source_area=s.source_area)


def essential_from_fundamental(
    f: FundamentalMatrix, k0: CameraIntrinsics, k1: CameraIntrinsics
) -> np.ndarray:
    """E = K1^T F K0 with singular values forced to (1, 1, 0)."""
    e = k1.matrix().T @ f.m @ k0.matrix()
    u, _, vt = np.linalg.svd(e)
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt


def _pose_candidates(e: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def _cheirality_counts(r, t, d0, d1) -> int:
    """Count rays triangulating in front of both cameras under X1 = R X0 + t."""
    rd0 = d0 @ r.T
    # Per pair solve least squares for depths (z0, z1): z1 d1 = z0 R d0 + t.
    a11 = np.einsum("ij,ij->i", rd0, rd0)
    a12 = -np.einsum("ij,ij->i", rd0, d1)
    a22 = np.einsum("ij,ij->i", d1, d1)
    b1 = -(rd0 @ t)
    b2 = d1 @ t
    det = a11 * a22 - a12 * a12
    det = np.where(np.abs(det) < 1e-18, np.nan, det)
    z0 = (b1 * a22 - b2 * a12) / det
    z1 = (a11 * b2 - a12 * b1) / det
    return int(np.count_nonzero((z0 > 0) & (z1 > 0)))


def recover_pose(
    f: FundamentalMatrix,
    k0: CameraIntrinsics,
    k1: CameraIntrinsics,
    s: MatchSet,
) -> PoseEstimate:
    """Recover (R, t) from F via the essential matrix and cheirality voting.

    The four SVD candidates are scored by how many correspondences
    triangulate in front of both cameras; the winner must hold a strict
    majority and beat the runner-up.
    """
    if len(s) == 0:
        raise InsufficientMatchesError("pose recovery needs at least one correspondence")
    e = essential_from_fundamental(f, k0, k1)
    k0_inv = np.linalg.inv(k0.matrix())
    k1_inv = np.linalg.inv(k1.matrix())
    d0 = _homogeneous(s.q) @ k0_inv.T
    d1 = _homogeneous(s.p) @ k1_inv.T
    counts = [(_cheirality_counts(r, t, d0, d1), i) for i, (r, t) in enumerate(_pose_candidates(e))]
    counts.sort(reverse=True)
    best_count, best_idx = counts[0]
    if best_count * 2 <= len(s) or best_count == counts[1][0]:
        raise CheiralityError("cheirality vote is tied or lacks a strict majority")
    r, t = _pose_candidates(e)[best_idx]
    return PoseEstimate(rotation=r, translation_dir=t, inlier_count=best_count)


def pose_error(est: PoseEstimate, gt: PoseEstimate) -> tuple[float, float]:
    """Angular rotation and translation errors in degrees.

    The translation error is folded to [0, 90] because the sign of the
    direction is unrecoverable from an essential matrix.
    """
    cos_r = (np.trace(gt.rotation.T @ est.rotation) - 1.0) / 2.0
    rot_err = float(np.degrees(np.arccos(np.clip(cos_r, -1.0, 1.0))))
    cos_t = float(np.dot(est.translation_dir, gt.translation_dir))
    t_err = float(np.degrees(np.arccos(np.clip(abs(cos_t), 0.0, 1.0))))
    return rot_err, t_err


def rotation_about_z(degrees: float) -> np.ndarray:
    """Convenience rotation used throughout the tests and fixtures."""
    a = np.radians(degrees)
    return np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])


def fundamental_from_pose(
    r: np.ndarray, t: np.ndarray, k0: CameraIntrinsics, k1: CameraIntrinsics
) -> FundamentalMatrix:
    """Ground-truth F for a known relative pose X1 = R X0 + t."""
    t = np.asarray(t, dtype=np.float64).reshape(3)
    tx = np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])
    e = tx @ np.asarray(r, dtype=np.float64)
    f = np.linalg.inv(k1.matrix()).T @ e @ np.linalg.inv(k0.matrix())
    return FundamentalMatrix.from_array(f, project_rank2=False)
