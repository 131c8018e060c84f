"""End-to-end orchestration: semantic areas, doubtful-area prediction,
consistency rejection, global collection, and final match assembly.

The pipeline degrades gracefully: with no usable semantic areas (or when
the rejector drops everything) it falls back to matching the resized full
images, so every image pair yields an output.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .areas import Area, AreaMatchCandidate, SamOutput, adjust_sia_scale, sam_pipeline
from .config import SgamConfig
from .errors import AssignmentError, MatcherError
from .gam import (
    AreaMatchEntry,
    AreaMatchSet,
    ConsistencyReport,
    GmcResult,
    gmc_collect,
    gp_predict,
    gr_reject,
    match_area_pair,
)
from .geometry import MatchSet
from .matchers import PointMatcher, full_image_request, prepare_area_pair
from .semantics import SemanticMap, validate_against_image

log = logging.getLogger("sgam")

__all__ = [
    "SgamResult",
    "sgam",
    "uniform_sample",
    "dedup_matches",
    "prepare_area_pair",
    "adjust_sia_scale",
    "result_to_json_dict",
    "write_matches_binary",
    "read_matches_binary",
]

MATCH_MAGIC = b"A2PM1"


@dataclass
class SgamResult:
    area_matches: AreaMatchSet
    inside_matches: list[MatchSet]
    global_matches: MatchSet
    merged: MatchSet
    sam: SamOutput | None
    consistency: ConsistencyReport | None
    gmc: GmcResult | None
    degraded: bool
    matcher_failed: bool = False
    timings_ms: dict[str, float] = field(default_factory=dict)


def dedup_matches(matches: MatchSet, grid: float = 0.5) -> MatchSet:
    """Collapse matches identical on every coordinate at grid resolution.

    First occurrence wins, order otherwise preserved.
    """
    arr = matches.array
    if len(arr) == 0:
        return matches
    keys = np.round(arr / grid).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return MatchSet(arr[np.sort(first)])


def uniform_sample(matches: MatchSet, dims: tuple[int, int], cap: int, seed: int = 0) -> MatchSet:
    """Spatially uniform subsample of at most ``cap`` matches.

    Image 0 is divided into a ceil(sqrt(cap))-sided grid; one match per
    non-empty cell is taken round-robin (seeded shuffle within each cell)
    until the cap or exhaustion. Duplicates are removed first.
    """
    if cap < 1:
        raise ValueError("cap must be at least 1")
    matches = dedup_matches(matches)
    if len(matches) <= cap:
        return matches
    w, h = dims
    side = int(np.ceil(np.sqrt(cap)))
    cell_w = max(w / side, 1e-9)
    cell_h = max(h / side, 1e-9)
    arr = matches.array
    cx = np.clip((arr[:, 0] / cell_w).astype(int), 0, side - 1)
    cy = np.clip((arr[:, 1] / cell_h).astype(int), 0, side - 1)
    cells: dict[int, list[int]] = {}
    for idx, key in enumerate(cy * side + cx):
        cells.setdefault(int(key), []).append(idx)
    rng = np.random.default_rng(seed)
    for key in sorted(cells):
        rng.shuffle(cells[key])
    chosen: list[int] = []
    order = sorted(cells)
    depth = 0
    while len(chosen) < cap:
        advanced = False
        for key in order:
            bucket = cells[key]
            if depth < len(bucket):
                chosen.append(bucket[depth])
                advanced = True
                if len(chosen) == cap:
                    break
        if not advanced:
            break
        depth += 1
    chosen.sort()
    return MatchSet(arr[chosen])


def _degraded(pm: PointMatcher, image0, image1, config, reason: str):
    log.warning("degraded full-image mode: %s", reason)
    try:
        response = pm.match(full_image_request(image0, image1, config))
        return response.matches, False
    except MatcherError as e:
        log.error("full-image matcher failed in degraded mode: %s", e)
        return MatchSet(np.empty((0, 4))), True


def sgam(
    image0: np.ndarray,
    image1: np.ndarray,
    map0: SemanticMap,
    map1: SemanticMap,
    pm: PointMatcher,
    config: SgamConfig | None = None,
    gmc_seed: int = 0,
) -> SgamResult:
    """Full area-to-point matching run over one image pair."""
    config = config or SgamConfig()
    config.validate()
    validate_against_image(map0, image0, "semantic map 0")
    validate_against_image(map1, image1, "semantic map 1")
    timings: dict[str, float] = {}
    t_start = time.perf_counter()

    t0 = time.perf_counter()
    sam = sam_pipeline(map0, map1, config)
    timings["sam"] = (time.perf_counter() - t0) * 1e3

    # Doubtful-area prediction.
    t0 = time.perf_counter()
    predicted: list[AreaMatchEntry] = []
    if sam.doubtful_a0 and sam.doubtful_a1:
        try:
            predicted = gp_predict(
                sam.doubtful_a0, sam.doubtful_a1, pm, image0, image1, config
            ).entries
        except AssignmentError:
            log.warning("all doubtful-area assignments invalid; dropping doubtful areas")
    timings["gp"] = (time.perf_counter() - t0) * 1e3

    # Inside-area matching for the accepted candidates.
    t0 = time.perf_counter()
    entries: list[AreaMatchEntry] = []
    for cand in sam.accepted:
        matches, f = match_area_pair(pm, image0, image1, cand.a0, cand.a1, config)
        entries.append(AreaMatchEntry(candidate=cand, matches=matches, f=f))
    entries.extend(predicted)
    timings["inside_matching"] = (time.perf_counter() - t0) * 1e3

    empty = MatchSet(np.empty((0, 4)))
    if not entries:
        matches, failed = _degraded(pm, image0, image1, config, "no area matches")
        timings["total"] = (time.perf_counter() - t_start) * 1e3
        return SgamResult(
            area_matches=AreaMatchSet([]),
            inside_matches=[],
            global_matches=matches,
            merged=dedup_matches(matches, config.dedup_grid),
            sam=sam,
            consistency=None,
            gmc=None,
            degraded=True,
            matcher_failed=failed,
            timings_ms=timings,
        )

    # Consistency rejection.
    t0 = time.perf_counter()
    rejector = gr_reject(AreaMatchSet(entries), config)
    timings["gr"] = (time.perf_counter() - t0) * 1e3
    kept = rejector.kept
    if not kept.entries:
        matches, failed = _degraded(pm, image0, image1, config,
                                    "rejector dropped every area match")
        timings["total"] = (time.perf_counter() - t_start) * 1e3
        return SgamResult(
            area_matches=AreaMatchSet([]),
            inside_matches=[],
            global_matches=matches,
            merged=dedup_matches(matches, config.dedup_grid),
            sam=sam,
            consistency=rejector.report,
            gmc=None,
            degraded=True,
            matcher_failed=failed,
            timings_ms=timings,
        )

    # Global collection.
    t0 = time.perf_counter()
    gmc = gmc_collect(kept, pm, image0, image1, config, seed=gmc_seed)
    timings["gmc"] = (time.perf_counter() - t0) * 1e3
    if gmc.warning:
        log.warning("global match collection: %s", gmc.warning)

    inside = [e.matches for e in kept.entries]
    stacked = [m.array for m in inside if len(m)] + ([gmc.collected.array] if len(gmc.collected) else [])
    merged = dedup_matches(
        MatchSet(np.vstack(stacked)) if stacked else empty, config.dedup_grid
    )
    timings["total"] = (time.perf_counter() - t_start) * 1e3
    return SgamResult(
        area_matches=kept,
        inside_matches=inside,
        global_matches=gmc.collected,
        merged=merged,
        sam=sam,
        consistency=rejector.report,
        gmc=gmc,
        degraded=False,
        timings_ms=timings,
    )


# ---------------------------------------------------------------------------
# Serialization


def _area_dict(a: Area) -> dict:
    return {
        "bbox": list(a.bbox),
        "kind": a.kind,
        "center": [a.center.x, a.center.y],
        "anchor_label": a.anchor_label,
    }


def _candidate_dict(c: AreaMatchCandidate) -> dict:
    return {
        "kind": c.kind,
        "bbox0": list(c.a0.bbox),
        "bbox1": list(c.a1.bbox),
        "distance": c.desc_distance,
        "status": c.status,
        "provenance": c.provenance,
    }


def result_to_json_dict(result: SgamResult, pose: dict | None = None) -> dict:
    """JSON document with areas, matches, consistency and optional pose.

    Timings are deliberately left out so outputs are run-deterministic;
    read them from :attr:`SgamResult.timings_ms` instead.
    """
    doc = {
        "degraded": result.degraded,
        "areas": [_candidate_dict(e.candidate) for e in result.area_matches.entries],
        "doubtful0": [_area_dict(a) for a in (result.sam.doubtful_a0 if result.sam else [])],
        "doubtful1": [_area_dict(a) for a in (result.sam.doubtful_a1 if result.sam else [])],
        "inside_matches": [m.array.tolist() for m in result.inside_matches],
        "global_matches": result.global_matches.array.tolist(),
        "merged": result.merged.array.tolist(),
        "consistency": result.consistency.to_json_dict() if result.consistency else None,
        "gmc": (
            {
                "ran": result.gmc.ran,
                "coverage": result.gmc.coverage,
                "threshold": result.gmc.threshold,
                "warning": result.gmc.warning,
            }
            if result.gmc
            else None
        ),
    }
    if pose is not None:
        doc["pose"] = pose
    return doc


def write_matches_binary(matches: MatchSet, path) -> None:
    """Flat little-endian binary: magic, u32 count, count x 4 float32."""
    arr = matches.array.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(MATCH_MAGIC)
        fh.write(struct.pack("<I", len(arr)))
        fh.write(arr.tobytes())


def read_matches_binary(path) -> MatchSet:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != MATCH_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        (n,) = struct.unpack("<I", fh.read(4))
        data = np.frombuffer(fh.read(n * 16), dtype="<f4").reshape(n, 4)
    return MatchSet(data.astype(np.float64))
