"""Synthetic labeled scenes with exact ground truth.

Scenes are collections of axis-aligned rectangles (boxes contribute six of
them) rendered by per-face ray casting with a z-buffer, which yields exact
per-pixel depth, a semantic label map, and a procedurally textured RGB
image for each camera. Textures are sampled from world coordinates through
integer hashing only, so identical surface points look identical from both
views and repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoOverlapError
from .geometry import CameraIntrinsics
from .groundtruth import GroundTruth
from .semantics import SemanticMap

_AXES = ((1, 2), (0, 2), (0, 1))  # free axes for faces fixed along x, y, z


@dataclass(frozen=True)
class Face:
    """Axis-aligned rectangle: fixed coordinate `value` along `axis`."""

    axis: int
    value: float
    lo: tuple[float, float]  # bounds on the two free axes
    hi: tuple[float, float]
    label: int


@dataclass(frozen=True)
class Camera:
    k: CameraIntrinsics
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray

    def center(self) -> np.ndarray:
        return -np.asarray(self.rotation).T @ np.asarray(self.translation)


@dataclass(frozen=True)
class Scene:
    faces: tuple[Face, ...]
    cam0: Camera
    cam1: Camera
    width: int
    height: int
    texture_seed: int = 0

    def relative_pose(self) -> tuple[np.ndarray, np.ndarray]:
        """(R, t) with X1 = R X0 + t for camera-0 coordinates X0."""
        r0, t0 = self.cam0.rotation, self.cam0.translation
        r1, t1 = self.cam1.rotation, self.cam1.translation
        r = r1 @ r0.T
        t = t1 - r @ t0
        return r, t


@dataclass(frozen=True)
class RenderedPair:
    rgb0: np.ndarray
    rgb1: np.ndarray
    sem0: SemanticMap
    sem1: SemanticMap
    depth0: np.ndarray
    depth1: np.ndarray
    gt: GroundTruth
    scene: Scene = field(repr=False, default=None)


def box_faces(lo, hi, label: int) -> list[Face]:
    """Six faces of the axis-aligned box [lo, hi]."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    faces = []
    for axis in range(3):
        f0, f1 = _AXES[axis]
        for value in (lo[axis], hi[axis]):
            faces.append(
                Face(
                    axis=axis,
                    value=float(value),
                    lo=(float(lo[f0]), float(lo[f1])),
                    hi=(float(hi[f0]), float(hi[f1])),
                    label=label,
                )
            )
    return faces


def look_at_camera(k: CameraIntrinsics, eye, target, up=(0.0, -1.0, 0.0)) -> Camera:
    """Camera at `eye` looking toward `target` (y grows downward in images)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    down /= np.linalg.norm(down)
    r = np.stack([right, down, forward])  # rows: camera axes in world coords
    t = -r @ eye
    return Camera(k=k, rotation=r, translation=t)


def _hash01(*ints: np.ndarray) -> np.ndarray:
    """Deterministic integer hash of arrays, mapped to [0, 1)."""
    h = np.uint64(0x9E3779B97F4A7C15)
    acc = np.zeros(np.broadcast(*ints).shape, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for v in ints:
            acc = (acc ^ v.astype(np.int64).astype(np.uint64)) * h
            acc ^= acc >> np.uint64(31)
        acc *= np.uint64(0xBF58476D1CE4E5B9)
        acc ^= acc >> np.uint64(27)
    return acc.astype(np.float64) / float(2**64)


def _texture(face_label: np.ndarray, face_index: np.ndarray, u: np.ndarray, v: np.ndarray, seed: int):
    """Procedural per-label texture: two octaves of value noise plus a grid."""
    cells = np.floor(u / 0.08).astype(np.int64), np.floor(v / 0.08).astype(np.int64)
    fine = np.floor(u / 0.02).astype(np.int64), np.floor(v / 0.02).astype(np.int64)
    s = np.full(face_label.shape, seed, dtype=np.int64)
    lab = face_label.astype(np.int64)
    coarse = _hash01(lab, cells[0], cells[1], s)
    detail = _hash01(lab + 7919, fine[0], fine[1], s)
    base_r = 0.25 + 0.7 * _hash01(lab, s)
    base_g = 0.25 + 0.7 * _hash01(lab + 101, s)
    base_b = 0.25 + 0.7 * _hash01(lab + 907, s)
    shade = 0.55 + 0.3 * coarse + 0.15 * detail
    # darken near cell borders so patch correlation has edges to lock onto
    du = np.abs(u / 0.08 - np.round(u / 0.08))
    dv = np.abs(v / 0.08 - np.round(v / 0.08))
    grid = np.where((du < 0.06) | (dv < 0.06), 0.65, 1.0)
    shade = shade * grid
    rgb = np.stack([base_r * shade, base_g * shade, base_b * shade], axis=-1)
    return np.clip(rgb * 255.0, 0, 255).astype(np.uint8)


def _render(scene: Scene, cam: Camera):
    w, h = scene.width, scene.height
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    k_inv = np.linalg.inv(cam.k.matrix())
    pix = np.stack([xs, ys, np.ones_like(xs)], axis=-1)
    d_cam = pix @ k_inv.T  # z component is 1, so the ray parameter equals depth
    d_world = d_cam @ cam.rotation  # == R^T d for each pixel
    origin = cam.center()

    depth = np.full((h, w), np.inf)
    labels = np.zeros((h, w), dtype=np.uint16)
    tex_u = np.zeros((h, w))
    tex_v = np.zeros((h, w))
    face_ids = np.full((h, w), -1, dtype=np.int32)

    for idx, face in enumerate(scene.faces):
        da = d_world[..., face.axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = (face.value - origin[face.axis]) / da
        f0, f1 = _AXES[face.axis]
        u = origin[f0] + t_hit * d_world[..., f0]
        v = origin[f1] + t_hit * d_world[..., f1]
        hit = (
            np.isfinite(t_hit)
            & (t_hit > 1e-9)
            & (u >= face.lo[0])
            & (u <= face.hi[0])
            & (v >= face.lo[1])
            & (v <= face.hi[1])
            & (t_hit < depth)
        )
        depth[hit] = t_hit[hit]
        labels[hit] = face.label
        tex_u[hit] = u[hit] + face.value  # offset by the fixed coordinate so
        tex_v[hit] = v[hit] - face.value  # parallel faces get distinct texture
        face_ids[hit] = idx

    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    seen = face_ids >= 0
    if seen.any():
        rgb[seen] = _texture(
            labels[seen].astype(np.int64),
            face_ids[seen].astype(np.int64),
            tex_u[seen],
            tex_v[seen],
            scene.texture_seed,
        )
    depth = np.where(seen, depth, np.nan)
    return rgb, SemanticMap(labels), depth


def generate(scene: Scene, min_covisible: float = 0.05) -> RenderedPair:
    """Render both cameras and assemble exact ground truth.

    Raises :class:`NoOverlapError` when less than ``min_covisible`` of either
    image sees surface points also visible in the other image.
    """
    if not scene.faces:
        raise ValueError("scene needs at least one face")
    rgb0, sem0, depth0 = _render(scene, scene.cam0)
    rgb1, sem1, depth1 = _render(scene, scene.cam1)
    r, t = scene.relative_pose()
    gt = GroundTruth(
        rotation=r,
        translation=t,
        k0=scene.cam0.k,
        k1=scene.cam1.k,
        depth0=depth0,
        depth1=depth1,
        image1_size=(scene.width, scene.height),
    )
    ys, xs = np.nonzero(np.isfinite(depth0))
    if len(xs) == 0:
        raise NoOverlapError("camera 0 sees no scene surface")
    step = max(1, len(xs) // 4000)
    sample = np.stack([xs[::step], ys[::step]], axis=1).astype(np.float64)
    _, valid = gt.project(sample)
    frac_image0 = (valid.sum() * step) / (scene.width * scene.height)
    if frac_image0 < min_covisible:
        raise NoOverlapError(
            f"co-visible fraction {frac_image0:.3f} below {min_covisible:.3f}"
        )
    return RenderedPair(
        rgb0=rgb0, rgb1=rgb1, sem0=sem0, sem1=sem1, depth0=depth0, depth1=depth1,
        gt=gt, scene=scene,
    )


# ---------------------------------------------------------------------------
# Standard fixtures


def _default_intrinsics(width: int, height: int) -> CameraIntrinsics:
    f = 0.85 * width
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0)


def _room_shell(size: float, label_wall: int, label_floor: int, label_side: int) -> list[Face]:
    s = size
    return [
        Face(axis=2, value=s, lo=(-s, -s), hi=(s, s), label=label_wall),       # back wall
        Face(axis=1, value=s * 0.45, lo=(-s, 0.0), hi=(s, s), label=label_floor),  # floor
        Face(axis=0, value=-s * 0.75, lo=(-s, 0.0), hi=(s, s), label=label_side),  # left wall
        Face(axis=0, value=s * 0.75, lo=(-s, 0.0), hi=(s, s), label=label_side),   # right wall
    ]


def _box_on_floor(x: float, z: float, w: float, h: float, d: float, label: int, floor_y: float):
    lo = (x - w / 2, floor_y - h, z - d / 2)
    hi = (x + w / 2, floor_y, z + d / 2)
    return box_faces(lo, hi, label)


def room6_scene(seed: int = 0, width: int = 640, height: int = 480) -> Scene:
    """Six distinct labeled boxes in a labeled room, moderate baseline."""
    rng = np.random.default_rng(seed)
    floor_y = 0.9
    faces = _room_shell(2.0, 10, 11, 12)
    xs = [-0.95, -0.55, -0.15, 0.25, 0.65, 1.05]
    for i, x in enumerate(xs):
        jx = x + rng.uniform(-0.04, 0.04)
        z = 1.55 + 0.45 * (i % 2) + rng.uniform(-0.05, 0.05)
        w = rng.uniform(0.26, 0.34)
        h = rng.uniform(0.3, 0.5)
        faces += _box_on_floor(jx, z, w, h, w, label=i + 1, floor_y=floor_y)
    k = _default_intrinsics(width, height)
    # lateral, slightly elevated viewpoint: every box shows several faces,
    # which keeps per-area fundamental estimation well conditioned; the
    # baseline is wide enough for the translation direction to be estimable
    eye0 = np.array([-0.55 + rng.uniform(-0.08, 0.08), -0.35, -0.55])
    eye1 = eye0 + np.array([rng.uniform(0.42, 0.6), rng.uniform(-0.05, 0.05), 0.16])
    target = np.array([0.15, 0.45, 2.0])
    cam0 = look_at_camera(k, eye0, target)
    cam1 = look_at_camera(k, eye1, target + np.array([rng.uniform(-0.1, 0.1), 0.0, 0.0]))
    return Scene(faces=tuple(faces), cam0=cam0, cam1=cam1, width=width, height=height,
                 texture_seed=seed)


def twins_scene(seed: int = 0, width: int = 640, height: int = 480) -> Scene:
    """Two identical-label boxes with symmetric surroundings (ambiguity case).

    The room geometry is unlabeled so nothing except the twins reaches the
    area stage: the fixture isolates the doubtful-assignment machinery.
    """
    rng = np.random.default_rng(seed)
    floor_y = 0.9
    faces = [
        Face(axis=2, value=2.6, lo=(-2.2, -2.2), hi=(2.2, 2.2), label=0),
        Face(axis=1, value=floor_y, lo=(-2.2, 0.0), hi=(2.2, 2.6), label=0),
    ]
    size = 0.5 + rng.uniform(-0.02, 0.02)
    depth = 1.8 + rng.uniform(-0.05, 0.05)
    for x in (-0.7, 0.7):
        faces += _box_on_floor(x, depth, size, 0.52, size, label=7, floor_y=floor_y)
    k = _default_intrinsics(width, height)
    eye0 = np.array([-0.48 + rng.uniform(-0.05, 0.05), -0.32, -0.55])
    eye1 = eye0 + np.array([rng.uniform(0.16, 0.26), rng.uniform(-0.04, 0.04), 0.1])
    target = np.array([0.0, 0.4, 2.0])
    cam0 = look_at_camera(k, eye0, target)
    cam1 = look_at_camera(k, eye1, target)
    return Scene(faces=tuple(faces), cam0=cam0, cam1=cam1, width=width, height=height,
                 texture_seed=seed)


def sparse_scene(seed: int = 0, width: int = 640, height: int = 480) -> Scene:
    """One small labeled object in an otherwise unlabeled room (GMC trigger).

    The room geometry exists (so depth and global matches are defined
    everywhere) but carries label 0: only the single box is semantic.
    """
    rng = np.random.default_rng(seed)
    floor_y = 0.9
    faces = [
        Face(axis=2, value=2.2, lo=(-2.2, -2.2), hi=(2.2, 2.2), label=0),
        Face(axis=1, value=floor_y, lo=(-2.2, 0.0), hi=(2.2, 2.2), label=0),
    ]
    x = rng.uniform(-0.2, 0.2)
    # single sizable box: enough 3D structure to anchor the pooled geometry,
    # still under the coverage gate
    faces += _box_on_floor(x, 1.5, 0.72, 0.6, 0.72, label=3, floor_y=floor_y)
    k = _default_intrinsics(width, height)
    eye0 = np.array([-0.45 + rng.uniform(-0.05, 0.05), -0.3, -0.5])
    eye1 = eye0 + np.array([rng.uniform(0.15, 0.25), 0.0, 0.1])
    target = np.array([0.1, 0.4, 1.8])
    cam0 = look_at_camera(k, eye0, target)
    cam1 = look_at_camera(k, eye1, target)
    return Scene(faces=tuple(faces), cam0=cam0, cam1=cam1, width=width, height=height,
                 texture_seed=seed)


def planar_scene(seed: int = 0, width: int = 480, height: int = 480) -> Scene:
    """Fronto-parallel labeled wall under a pure x-translation baseline."""
    rng = np.random.default_rng(seed)
    z = 3.0
    tiles = []
    # 2x2 quadrants of distinct labels so the plane is also semantically rich
    for i, (x0, x1) in enumerate(((-2.4, 0.0), (0.0, 2.4))):
        for j, (y0, y1) in enumerate(((-2.4, 0.0), (0.0, 2.4))):
            tiles.append(Face(axis=2, value=z, lo=(x0, y0), hi=(x1, y1), label=1 + i * 2 + j))
    k = _default_intrinsics(width, height)
    shift = 0.25 + rng.uniform(0, 0.1)
    cam0 = Camera(k=k, rotation=np.eye(3), translation=np.zeros(3))
    cam1 = Camera(k=k, rotation=np.eye(3), translation=np.array([-shift, 0.0, 0.0]))
    return Scene(faces=tuple(tiles), cam0=cam0, cam1=cam1, width=width, height=height,
                 texture_seed=seed)


def planar_homography(scene: Scene) -> np.ndarray:
    """Closed-form homography of the planar fixture (plane z = const, n = e_z)."""
    r, t = scene.relative_pose()
    z = scene.faces[0].value
    n = np.array([0.0, 0.0, 1.0])
    # points on n.X = z satisfy X1 = (R + t n^T / z) X0
    h = r + np.outer(t, n) / z
    return scene.cam1.k.matrix() @ h @ np.linalg.inv(scene.cam0.k.matrix())


def scene_from_spec(spec: dict) -> Scene:
    """Build a scene from a JSON description.

    Schema::

        {"width": int, "height": int, "texture_seed": int,
         "primitives": [{"type": "box", "lo": [x,y,z], "hi": [x,y,z], "label": int}
                        | {"type": "plane", "axis": 0|1|2, "value": f,
                           "lo": [a,b], "hi": [a,b], "label": int}],
         "cameras": [{"eye": [x,y,z], "target": [x,y,z], "f": px?}, ...2 entries]}
    """
    width = int(spec["width"])
    height = int(spec["height"])
    faces: list[Face] = []
    for prim in spec["primitives"]:
        if prim["type"] == "box":
            faces.extend(box_faces(prim["lo"], prim["hi"], int(prim["label"])))
        elif prim["type"] == "plane":
            faces.append(
                Face(
                    axis=int(prim["axis"]),
                    value=float(prim["value"]),
                    lo=tuple(prim["lo"]),
                    hi=tuple(prim["hi"]),
                    label=int(prim["label"]),
                )
            )
        else:
            raise ValueError(f"unknown primitive type {prim['type']!r}")
    cams = []
    for cam_spec in spec["cameras"]:
        f = float(cam_spec.get("f", 0.85 * width))
        k = CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0)
        cams.append(look_at_camera(k, cam_spec["eye"], cam_spec["target"]))
    if len(cams) != 2:
        raise ValueError("scene spec needs exactly two cameras")
    return Scene(
        faces=tuple(faces),
        cam0=cams[0],
        cam1=cams[1],
        width=width,
        height=height,
        texture_seed=int(spec.get("texture_seed", 0)),
    )


FIXTURES = {
    "room6": room6_scene,
    "twins": twins_scene,
    "sparse": sparse_scene,
    "planar": planar_scene,
}


def standard_fixtures() -> dict:
    """Named catalogue of seeded scene generators."""
    return dict(FIXTURES)


def render_fixture(name: str, seed: int = 0) -> RenderedPair:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
    return generate(FIXTURES[name](seed))
