"""Geometry area matching: consistency scoring, doubtful-match prediction,
rejection, and global match collection.

Every area match carries the point matches found inside it and (when at
least eight survive) a fundamental matrix fitted to them. Cross-applying
each area's matrix to every area's matches yields a consistency score per
area match; the scores drive three filters:

* the predictor resolves doubtful areas by scoring every injective
  assignment and keeping the most consistent one,
* the rejector drops area matches whose score exceeds a threshold derived
  from the pool's own self-consistency,
* global match collection tops up matches from a full-image pass when the
  matched areas cover too little of the images, keeping only points that
  agree with the pooled inside-area geometry.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .areas import SOA, Area, AreaMatchCandidate
from .config import SgamConfig
from .errors import (
    AssignmentError,
    ConsistencyError,
    EpipoleError,
    GeometryError,
    MatcherError,
)
from .geometry import FundamentalMatrix, MatchSet, estimate_fundamental, ransac_fundamental, sampson_set, sampson_values
from .matchers import PointMatcher, full_image_request, prepare_area_pair

# Floating-point realization of "ties keep": scores within this slack of the
# threshold survive, so an all-zero consistency pool is never decimated by
# round-off ordering.
_TIE_EPS = 1e-9


@dataclass(frozen=True)
class AreaMatchEntry:
    candidate: AreaMatchCandidate
    matches: MatchSet
    f: FundamentalMatrix | None = None


@dataclass
class AreaMatchSet:
    entries: list[AreaMatchEntry]
    mapping_id: int = 0

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class ConsistencyReport:
    """Cross Sampson-distance matrix and per-area consistency scores.

    ``cross[i, j]`` is the mean Sampson distance of area j's matches under
    area i's fundamental matrix; ``per_area[i]`` is the mean of row i.
    ``indices`` maps rows back into the originating AreaMatchSet; entries
    without a certifiable matrix are listed in ``excluded``.
    """

    indices: tuple[int, ...]
    cross: np.ndarray
    self_terms: np.ndarray
    per_area: np.ndarray
    set_level: float
    excluded: tuple[int, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "indices": list(self.indices),
            "cross": self.cross.tolist(),
            "self": self.self_terms.tolist(),
            "per_area": self.per_area.tolist(),
            "set_level": self.set_level,
            "excluded": list(self.excluded),
        }


def match_area_pair(
    pm: PointMatcher,
    image0: np.ndarray,
    image1: np.ndarray,
    a0: Area,
    a1: Area,
    config: SgamConfig,
) -> tuple[MatchSet, FundamentalMatrix | None]:
    """Run the point matcher inside one area pair.

    Object-area matches are filtered to the unexpanded object bboxes
    afterwards (matchers always see the full padded crop). A fundamental
    matrix is fitted when enough matches survive; degenerate fits yield
    ``None`` rather than an exception.
    """
    req = prepare_area_pair(a0.bbox, a1.bbox, image0, image1, config)
    try:
        response = pm.match(req)
    except MatcherError:
        return MatchSet(np.empty((0, 4))), None
    matches = response.matches
    if a0.kind == SOA and a1.kind == SOA:
        matches = filter_to_bboxes(matches, a0.bbox, a1.bbox)
    f = None
    if len(matches) >= config.min_matches_for_f:
        try:
            if config.inside_area_ransac:
                f, _ = ransac_fundamental(
                    matches,
                    inlier_threshold=config.ransac_threshold,
                    max_iters=config.ransac_max_iters,
                    seed=0,
                    confidence=config.ransac_confidence,
                )
            else:
                f = estimate_fundamental(matches)
        except GeometryError:
            f = None
    return matches, f


def filter_to_bboxes(matches: MatchSet, bbox0, bbox1) -> MatchSet:
    """Keep correspondences whose endpoints lie inside both bboxes."""
    arr = matches.array
    if len(arr) == 0:
        return matches
    keep = (
        (arr[:, 0] >= bbox0[0]) & (arr[:, 0] < bbox0[2])
        & (arr[:, 1] >= bbox0[1]) & (arr[:, 1] < bbox0[3])
        & (arr[:, 2] >= bbox1[0]) & (arr[:, 2] < bbox1[2])
        & (arr[:, 3] >= bbox1[1]) & (arr[:, 3] < bbox1[3])
    )
    return MatchSet(arr[keep], source_area=matches.source_area)


def _cross_entry(f: FundamentalMatrix, matches: MatchSet) -> float:
    """Mean Sampson distance; an epipole-degenerate pair scores infinite."""
    try:
        _, mean = sampson_set(f, matches)
    except EpipoleError:
        return float("inf")
    return mean


def geometry_consistency(area_set: AreaMatchSet, config: SgamConfig) -> ConsistencyReport:
    """Cross-consistency of every certifiable area match in the set."""
    usable = [
        i
        for i, e in enumerate(area_set.entries)
        if e.f is not None and len(e.matches) >= config.min_matches_for_f
    ]
    excluded = tuple(i for i in range(len(area_set.entries)) if i not in usable)
    if not usable:
        raise ConsistencyError("no area match has enough matches for a fundamental matrix")
    n = len(usable)
    cross = np.zeros((n, n))
    for row, i in enumerate(usable):
        fi = area_set.entries[i].f
        for col, j in enumerate(usable):
            cross[row, col] = _cross_entry(fi, area_set.entries[j].matches)
    per_area = cross.mean(axis=1)
    return ConsistencyReport(
        indices=tuple(usable),
        cross=cross,
        self_terms=np.diag(cross).copy(),
        per_area=per_area,
        set_level=float(per_area.mean()),
        excluded=excluded,
    )


# ---------------------------------------------------------------------------
# Predictor: resolve doubtful areas by consistency maximization


@dataclass(frozen=True)
class AssignmentScore:
    pairing: tuple[tuple[int, int], ...]  # (index into doubtful0, index into doubtful1)
    consistency: float
    probability: float
    valid: bool


@dataclass
class PredictorResult:
    entries: list[AreaMatchEntry]
    assignment: tuple[tuple[int, int], ...]
    probability: float
    scores: list[AssignmentScore] = field(default_factory=list)
    exhaustive: bool = True


def _pair_entries_cache(pm, image0, image1, doubtful0, doubtful1, config):
    cache: dict[tuple[int, int], AreaMatchEntry] = {}

    def get(i: int, j: int) -> AreaMatchEntry:
        if (i, j) not in cache:
            a0, a1 = doubtful0[i], doubtful1[j]
            matches, f = match_area_pair(pm, image0, image1, a0, a1, config)
            kind = a0.kind if a0.kind == a1.kind else SOA
            candidate = AreaMatchCandidate(
                a0=a0,
                a1=a1,
                kind=kind,
                desc_distance=0.0,
                status="accepted",
                provenance="predicted",
            )
            cache[(i, j)] = AreaMatchEntry(candidate=candidate, matches=matches, f=f)
        return cache[(i, j)]

    return get


def _score_assignment(entries: list[AreaMatchEntry], config: SgamConfig) -> tuple[float, float, bool]:
    if any(e.f is None or len(e.matches) < config.min_matches_for_f for e in entries):
        return float("inf"), 0.0, False
    report = geometry_consistency(AreaMatchSet(entries), config)
    g = report.set_level
    return g, float(np.exp(-g)), True


def gp_predict(
    doubtful0: list[Area],
    doubtful1: list[Area],
    pm: PointMatcher,
    image0: np.ndarray,
    image1: np.ndarray,
    config: SgamConfig,
) -> PredictorResult:
    """Resolve doubtful areas into the most geometry-consistent assignment.

    Every injective assignment of the smaller doubtful side into the larger
    is scored by the consistency of its area-match set (each pairing is
    matched at most once, however many assignments reference it). Beyond the
    enumeration cap a greedy build-up replaces the exhaustive search.
    Raises :class:`AssignmentError` when no assignment is valid.
    """
    if not doubtful0 or not doubtful1:
        raise ValueError("both doubtful lists must be non-empty")
    swap = len(doubtful1) > len(doubtful0)
    large, small = (doubtful1, doubtful0) if swap else (doubtful0, doubtful1)
    # `get(i, j)` below always addresses (image-0 area i, image-1 area j).
    get = _pair_entries_cache(pm, image0, image1, doubtful0, doubtful1, config)

    def pair_index(small_idx: int, large_idx: int) -> tuple[int, int]:
        # returned as (image-0 index, image-1 index)
        return (small_idx, large_idx) if swap else (large_idx, small_idx)

    h, r = len(large), len(small)
    total = 1
    for v in range(h, h - r, -1):
        total *= v
    if total <= config.gp_enumeration_cap:
        scores = []
        best = None
        for perm in itertools.permutations(range(h), r):
            pairing = tuple(pair_index(s, l) for s, l in enumerate(perm))
            entries = [get(i, j) for i, j in pairing]
            g, p, valid = _score_assignment(entries, config)
            scores.append(AssignmentScore(pairing=pairing, consistency=g, probability=p, valid=valid))
            if valid and (best is None or g < best[0]):
                best = (g, pairing, entries)
        if best is None:
            raise AssignmentError("every doubtful-area assignment is invalid")
        g, pairing, entries = best
        return PredictorResult(
            entries=entries,
            assignment=pairing,
            probability=float(np.exp(-g)),
            scores=scores,
            exhaustive=True,
        )

    # Greedy fallback: repeatedly add the pairing that keeps the running
    # area-match set most consistent. Self-consistency alone cannot seed the
    # build-up (a degenerate wrong pairing fits its own matches perfectly),
    # so the first two pairings are chosen jointly by their cross terms.
    remaining_small = list(range(r))
    remaining_large = list(range(h))
    chosen: list[tuple[int, int]] = []
    chosen_entries: list[AreaMatchEntry] = []
    if r >= 2:
        best = None
        for s1 in remaining_small:
            for l1 in remaining_large:
                for s2 in remaining_small:
                    if s2 <= s1:
                        continue
                    for l2 in remaining_large:
                        if l2 == l1:
                            continue
                        pair1 = get(*pair_index(s1, l1))
                        pair2 = get(*pair_index(s2, l2))
                        g, _, valid = _score_assignment([pair1, pair2], config)
                        if valid and (best is None or g < best[0]):
                            best = (g, (s1, l1), (s2, l2))
        if best is not None:
            for s, l in best[1:]:
                chosen.append(pair_index(s, l))
                chosen_entries.append(get(*pair_index(s, l)))
                remaining_small.remove(s)
                remaining_large.remove(l)
    while remaining_small:
        best = None
        for s in remaining_small:
            for l in remaining_large:
                entry = get(*pair_index(s, l))
                g, _, valid = _score_assignment(chosen_entries + [entry], config)
                if valid and (best is None or g < best[0]):
                    best = (g, s, l, entry)
        if best is None:
            break
        _, s, l, entry = best
        chosen.append(pair_index(s, l))
        chosen_entries.append(entry)
        remaining_small.remove(s)
        remaining_large.remove(l)
    if not chosen:
        raise AssignmentError("every doubtful-area assignment is invalid")
    g, p, _ = _score_assignment(chosen_entries, config)
    return PredictorResult(
        entries=chosen_entries,
        assignment=tuple(chosen),
        probability=p,
        scores=[],
        exhaustive=False,
    )


# ---------------------------------------------------------------------------
# Rejector


@dataclass
class RejectorResult:
    kept: AreaMatchSet
    rejected: list[AreaMatchEntry]
    excluded: list[AreaMatchEntry]
    threshold: float
    report: ConsistencyReport | None


def gr_reject(area_set: AreaMatchSet, config: SgamConfig) -> RejectorResult:
    """Drop area matches whose consistency exceeds the pool-derived threshold.

    The threshold is ``rejector_scale`` times the mean self-consistency of
    the pool. Rejection is strictly-greater with a small numerical slack, so
    exact ties (the all-zero noiseless case) keep. Entries without enough
    matches for a fundamental matrix cannot be certified and are excluded.
    An empty kept set signals the caller to fall back to full-image matching.
    """
    if not area_set.entries:
        raise ValueError("rejector needs a non-empty area match set")
    try:
        report = geometry_consistency(area_set, config)
    except ConsistencyError:
        return RejectorResult(
            kept=AreaMatchSet([], mapping_id=area_set.mapping_id),
            rejected=[],
            excluded=list(area_set.entries),
            threshold=float("nan"),
            report=None,
        )
    threshold = config.rejector_scale * float(report.self_terms.mean())
    slack = _TIE_EPS * max(1.0, threshold)
    kept_entries = []
    rejected = []
    for row, idx in enumerate(report.indices):
        entry = area_set.entries[idx]
        if report.per_area[row] > threshold + slack:
            rejected.append(entry)
        else:
            kept_entries.append(entry)
    excluded = [area_set.entries[i] for i in report.excluded]
    return RejectorResult(
        kept=AreaMatchSet(kept_entries, mapping_id=area_set.mapping_id),
        rejected=rejected,
        excluded=excluded,
        threshold=threshold,
        report=report,
    )


# ---------------------------------------------------------------------------
# Global match collection


def size_proportion(area_set: AreaMatchSet, dims0: tuple[int, int], dims1: tuple[int, int]) -> float:
    """Fraction of the two images covered by the matched areas (union, then
    averaged over the pair)."""
    fractions = []
    for side, (w, h) in ((0, dims0), (1, dims1)):
        mask = np.zeros((h, w), dtype=bool)
        for entry in area_set.entries:
            area = entry.candidate.a0 if side == 0 else entry.candidate.a1
            x0, y0, x1, y1 = area.bbox
            mask[max(0, y0) : min(h, y1), max(0, x0) : min(w, x1)] = True
        fractions.append(mask.sum() / (w * h))
    return float(np.mean(fractions))


@dataclass
class GmcResult:
    collected: MatchSet
    ran: bool
    coverage: float
    threshold: float = float("nan")
    warning: str | None = None


def gmc_collect(
    area_set: AreaMatchSet,
    pm: PointMatcher,
    image0: np.ndarray,
    image1: np.ndarray,
    config: SgamConfig,
    seed: int = 0,
) -> GmcResult:
    """Collect full-image matches consistent with the inside-area geometry.

    Runs only when the matched areas cover less than the coverage gate. The
    pooled inside-area matches define a fundamental matrix and a mean
    Sampson level; full-image matches at or below that level are kept.
    """
    empty = MatchSet(np.empty((0, 4)))
    dims0 = (image0.shape[1], image0.shape[0])
    dims1 = (image1.shape[1], image1.shape[0])
    coverage = size_proportion(area_set, dims0, dims1)
    if coverage >= config.gmc_coverage_max:
        return GmcResult(collected=empty, ran=False, coverage=coverage)
    arrays = [e.matches.array for e in area_set.entries if len(e.matches)]
    if not arrays:
        return GmcResult(collected=empty, ran=False, coverage=coverage,
                         warning="no inside-area matches to pool")
    pooled = MatchSet(np.vstack(arrays))
    try:
        f_a, _ = ransac_fundamental(
            pooled,
            inlier_threshold=config.ransac_threshold,
            max_iters=config.ransac_max_iters,
            seed=seed,
            confidence=config.ransac_confidence,
        )
    except GeometryError as e:
        return GmcResult(collected=empty, ran=False, coverage=coverage,
                         warning=f"pooled fundamental estimation failed: {e}")
    level_terms = [
        _cross_entry(f_a, e.matches) for e in area_set.entries if len(e.matches)
    ]
    level = float(np.mean(level_terms))
    try:
        response = pm.match(full_image_request(image0, image1, config))
    except MatcherError as e:
        return GmcResult(collected=empty, ran=False, coverage=coverage,
                         warning=f"full-image matcher failed: {e}")
    globals_ = response.matches
    if len(globals_) == 0:
        return GmcResult(collected=empty, ran=True, coverage=coverage, threshold=level)
    try:
        distances = sampson_values(f_a, globals_)
    except EpipoleError:
        return GmcResult(collected=empty, ran=True, coverage=coverage, threshold=level,
                         warning="global matches hit an epipole")
    kept = MatchSet(globals_.array[distances <= level])
    return GmcResult(collected=kept, ran=True, coverage=coverage, threshold=level)
