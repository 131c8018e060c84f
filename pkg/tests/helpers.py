"""Shared test fixtures: rendered-scene cache, corruption builders, and the
instance-confusion matcher used by the predictor and rejector tests."""

import numpy as np

from sgam.areas import SOA, AreaMatchCandidate, sam_pipeline
from sgam.config import SgamConfig
from sgam.gam import AreaMatchEntry, match_area_pair
from sgam.geometry import MatchSet, estimate_fundamental
from sgam.matchers import MatcherResponse, OracleMatcher, _crop_bounds, pair_seed
from sgam.synth import render_fixture

_PAIR_CACHE = {}
_SAM_CACHE = {}


def cached_pair(name: str, seed: int):
    key = (name, seed)
    if key not in _PAIR_CACHE:
        _PAIR_CACHE[key] = render_fixture(name, seed=seed)
        if len(_PAIR_CACHE) > 40:  # keep memory bounded over 100-seed sweeps
            _PAIR_CACHE.pop(next(iter(_PAIR_CACHE)))
    return _PAIR_CACHE[key]


def cached_sam(name: str, seed: int, config: SgamConfig):
    key = (name, seed, id(config))
    if key not in _SAM_CACHE:
        pair = cached_pair(name, seed)
        _SAM_CACHE[key] = sam_pipeline(pair.sem0, pair.sem1, config)
        if len(_SAM_CACHE) > 40:
            _SAM_CACHE.pop(next(iter(_SAM_CACHE)))
    return _SAM_CACHE[key]


def room6_box_pool(pair, config, sam_output=None, count=5):
    """The first `count` object-area matches on room6, by label."""
    out = sam_output or sam_pipeline(pair.sem0, pair.sem1, config)
    by_label = {
        m.a0.anchor_label: m
        for m in out.accepted
        if m.kind == SOA and (m.a0.anchor_label or 99) <= 6
    }
    labels = sorted(by_label)[:count]
    if len(labels) < count:
        raise AssertionError(f"fixture produced only {labels}")
    return [by_label[label] for label in labels]


def sliding_corrupt_matches(pair, bbox0, wrong_bbox1, n, seed, sigma=0.0):
    """Wrong-pairing matches that are pointwise epipolar-consistent.

    True matches from bbox0 (restricted to the nearest surface, so their
    support is planar) are slid along their epipolar lines into the wrong
    target area. Each point still satisfies the true epipolar constraint,
    but the fundamental matrix fitted to the set is an arbitrary member of
    the planar-degenerate family: only cross-consistency can expose it.
    """
    rng = np.random.default_rng(seed)
    f_true = pair.gt.fundamental().m
    gx = np.arange(bbox0[0], bbox0[2])
    gy = np.arange(bbox0[1], bbox0[3])
    total = len(gx) * len(gy)
    flat = rng.choice(total, size=min(total, n * 6), replace=False)
    pts0 = np.stack([gx[flat % len(gx)], gy[flat // len(gx)]], axis=1).astype(float)
    proj, valid = pair.gt.project(pts0)
    pts0, proj = pts0[valid], proj[valid]
    z = pair.depth0[pts0[:, 1].astype(int), pts0[:, 0].astype(int)]
    keep = z <= np.percentile(z, 40)
    pts0, proj = pts0[keep][:n], proj[keep][:n]
    lines = np.hstack([pts0, np.ones((len(pts0), 1))]) @ f_true.T
    d = np.stack([lines[:, 1], -lines[:, 0]], axis=1)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    center = np.array(
        [(wrong_bbox1[0] + wrong_bbox1[2]) / 2.0, (wrong_bbox1[1] + wrong_bbox1[3]) / 2.0]
    )
    t = np.einsum("ij,ij->i", center - proj, d)
    p = proj + d * t[:, None]
    if sigma:
        p = p + rng.normal(0, sigma, p.shape)
    return MatchSet(np.hstack([pts0, p]))


def corrupted_room6_entries(pair, config, seed, corrupt_index=1, wrong_index=3, sigma=0.0,
                            oracle_seed=42):
    """Five room6 area-match entries with one wrong pairing injected."""
    pool = room6_box_pool(pair, config)
    pm = OracleMatcher(pair.gt, noise_sigma=sigma, outlier_rate=0.0, n_matches=200,
                       seed=oracle_seed)
    wrong = pool[wrong_index]
    entries = []
    for k, m in enumerate(pool):
        if k == corrupt_index:
            matches = sliding_corrupt_matches(
                pair, m.a0.bbox, wrong.a1.bbox, 120, seed=seed, sigma=sigma
            )
            f = estimate_fundamental(matches)
            candidate = AreaMatchCandidate(
                a0=m.a0, a1=wrong.a1, kind=SOA, desc_distance=0.0,
                status="accepted", provenance=SOA,
            )
            entries.append(AreaMatchEntry(candidate=candidate, matches=matches, f=f))
        else:
            matches, f = match_area_pair(pm, pair.rgb0, pair.rgb1, m.a0, m.a1, config)
            entries.append(AreaMatchEntry(candidate=m, matches=matches, f=f))
    return entries, corrupt_index


class InstanceShiftMatcher:
    """Oracle that emits confidently wrong matches for wrong instance pairings.

    For the true pairing it behaves exactly like the oracle; for a wrong
    pairing of two known instances it produces the true matches rigidly
    shifted onto the wrong target, which is what a texture matcher does
    when two objects look identical.
    """

    def __init__(self, gt, instances0, instances1, true_map, noise_sigma=0.0,
                 n_matches=150, seed=0):
        self.gt = gt
        self.inst0 = list(instances0)
        self.inst1 = list(instances1)
        self.true_map = dict(true_map)
        self.noise = noise_sigma
        self.n = n_matches
        self.seed = seed

    @staticmethod
    def _which(bounds, instances):
        x0, y0, x1, y1 = bounds
        for idx, bb in enumerate(instances):
            cx, cy = (bb[0] + bb[2]) / 2.0, (bb[1] + bb[3]) / 2.0
            if x0 <= cx < x1 and y0 <= cy < y1:
                return idx
        return None

    def match(self, req):
        i0 = self._which(_crop_bounds(req.transform0, req.crop_size()), self.inst0)
        i1 = self._which(_crop_bounds(req.transform1, req.crop_size()), self.inst1)
        true_j = self.true_map.get(i0)
        if i0 is None or i1 is None or true_j == i1:
            return OracleMatcher(self.gt, self.noise, 0.0, self.n, self.seed).match(req)
        rng = np.random.default_rng(pair_seed(self.seed, req.transform0, req.transform1))
        bb0 = self.inst0[i0]
        gx = np.arange(bb0[0], bb0[2])
        gy = np.arange(bb0[1], bb0[3])
        total = len(gx) * len(gy)
        flat = rng.choice(total, size=min(total, self.n * 4), replace=False)
        pts0 = np.stack([gx[flat % len(gx)], gy[flat // len(gx)]], axis=1).astype(float)
        proj, valid = self.gt.project(pts0)
        pts0, proj = pts0[valid][: self.n], proj[valid][: self.n]
        tb, wb = self.inst1[true_j], self.inst1[i1]
        shift = np.array(
            [(wb[0] + wb[2]) / 2.0 - (tb[0] + tb[2]) / 2.0,
             (wb[1] + wb[3]) / 2.0 - (tb[1] + tb[3]) / 2.0]
        )
        p = proj + shift
        if self.noise > 0:
            p = p + rng.normal(0, self.noise, p.shape) * [
                req.transform1.scale_x, req.transform1.scale_y,
            ]
        return MatcherResponse(matches=MatchSet(np.hstack([pts0, p])))


def twins_doubtful_with_truth(pair, config, sam_output=None):
    """Doubtful twin areas plus the ground-truth assignment between them."""
    out = sam_output or sam_pipeline(pair.sem0, pair.sem1, config)
    d0 = [a for a in out.doubtful_a0 if a.kind == SOA]
    d1 = [a for a in out.doubtful_a1 if a.kind == SOA]
    if len(d0) != 2 or len(d1) != 2:
        raise AssertionError(f"twins fixture gave {len(d0)}/{len(d1)} doubtful areas")
    centers0 = np.array([[a.center.x, a.center.y] for a in d0])
    proj, valid = pair.gt.project(centers0)
    if not valid.all():
        raise AssertionError("twin centers are not co-visible")
    true_map = {}
    for i in range(2):
        dists = [
            np.hypot(
                proj[i][0] - (b.bbox[0] + b.bbox[2]) / 2.0,
                proj[i][1] - (b.bbox[1] + b.bbox[3]) / 2.0,
            )
            for b in d1
        ]
        true_map[i] = int(np.argmin(dists))
    if set(true_map.values()) != {0, 1}:
        raise AssertionError("twin assignment is not a bijection")
    return d0, d1, true_map
