import numpy as np
import pytest

from sgam.areas import (
    SIA,
    SOA,
    Area,
    adjust_sia_scale,
    describe_sia,
    describe_soa,
    detect_sia,
    detect_soa,
    match_sia,
    match_soa,
    sam_pipeline,
    sia_distance,
    soa_distance,
)
from sgam.config import SgamConfig
from sgam.geometry import Point2
from sgam.semantics import SemanticMap, semantic_histogram

from helpers import cached_pair

CFG = SgamConfig()


def grid_map(h, w, fill=0):
    return np.full((h, w), fill, dtype=np.uint16)


class TestDetectSoa:
    def test_single_object(self):
        grid = grid_map(480, 640)
        grid[100:200, 100:200] = 5
        areas = detect_soa(SemanticMap(grid), CFG)
        assert len(areas) == 1
        assert areas[0].anchor_label == 5
        assert areas[0].bbox == (100, 100, 200, 200)

    def test_small_component_filtered(self):
        grid = grid_map(480, 640)
        grid[10:14, 10:14] = 2  # 16 px < 3072 px = 1% of the image
        assert detect_soa(SemanticMap(grid), CFG) == []

    def test_boundary_component_kept_at_exactly_one_percent(self):
        grid = grid_map(100, 100)
        grid[0:10, 0:10] = 4  # exactly 1% of the image
        areas = detect_soa(SemanticMap(grid), CFG)
        assert len(areas) == 1

    def test_nearby_same_label_merged(self):
        grid = grid_map(300, 300)
        grid[100:130, 40:70] = 3
        grid[100:130, 120:150] = 3  # centers 80 px apart < 100
        areas = detect_soa(SemanticMap(grid), CFG)
        assert len(areas) == 1
        assert areas[0].bbox == (40, 100, 150, 130)

    def test_distant_same_label_not_merged(self):
        grid = grid_map(300, 300)
        grid[40:80, 20:60] = 3
        grid[220:260, 240:280] = 3
        areas = detect_soa(SemanticMap(grid), CFG)
        assert len(areas) == 2

    def test_merge_is_transitive(self):
        grid = grid_map(400, 400)
        # chain a-b-c with |ab| and |bc| < 100 but |ac| > 100
        grid[100:140, 30:70] = 6
        grid[100:140, 110:150] = 6
        grid[100:140, 190:230] = 6
        areas = detect_soa(SemanticMap(grid), CFG)
        assert len(areas) == 1
        assert areas[0].bbox == (30, 100, 230, 140)


class TestDescribeSoa:
    def test_fully_surrounded(self):
        grid = grid_map(480, 640, fill=5)
        grid[200:280, 260:340] = 1
        area = detect_soa(SemanticMap(grid), CFG)[0]
        desc = describe_soa(SemanticMap(grid), area, (1, 5), CFG)
        # every side sees label 5 (and never its own label 1)
        assert desc.side_bits[:, 1].all()
        assert not desc.side_bits[:, 0].any()

    def test_short_run_ignored(self):
        grid = grid_map(480, 640, fill=5)
        grid[200:280, 260:340] = 1
        # a 19-px run of label 7 crossing the scaled top sides only
        grid[150:199, 300:319] = 7
        m = SemanticMap(grid)
        area = [a for a in detect_soa(m, CFG) if a.anchor_label == 1][0]
        desc = describe_soa(m, area, (1, 5, 7), CFG)
        assert not desc.side_bits[:, 2].any()  # label 7 never sets a bit

    def test_long_run_sets_bit(self):
        grid = grid_map(480, 640, fill=5)
        grid[200:280, 260:340] = 1
        grid[150:199, 290:330] = 7  # 40-px horizontal extent
        m = SemanticMap(grid)
        area = [a for a in detect_soa(m, CFG) if a.anchor_label == 1][0]
        desc = describe_soa(m, area, (1, 5, 7), CFG)
        assert desc.side_bits[0, 2]  # top side sees label 7

    def test_label_reachable_only_at_largest_scale(self):
        grid = grid_map(480, 640, fill=5)
        grid[200:280, 280:360] = 1    # 80x80 object centered at (320, 240)
        # band of label 6 crossed only by the 1.4x top side (y = 184)
        grid[183:190, 250:390] = 6
        m = SemanticMap(grid)
        area = [a for a in detect_soa(m, CFG) if a.anchor_label == 1][0]
        full = describe_soa(m, area, (1, 5, 6), CFG)
        single = describe_soa(
            m, area, (1, 5, 6),
            SgamConfig(multiscale_ratios=()),  # identity scale only
        )
        idx = 2  # label 6 position in the space
        assert full.side_bits[:, idx].any()
        assert not single.side_bits[:, idx].any()


class TestMatchSoa:
    def _uniform_desc(self, labels, bits):
        arr = np.zeros((4, len(labels)), dtype=bool)
        for side, lab in bits:
            arr[side, lab] = True
        from sgam.areas import SoaDescriptor

        return SoaDescriptor(side_bits=arr, label_space=tuple(labels))

    def _area(self, x, label):
        return Area(bbox=(x, 0, x + 10, 10), kind=SOA, center=Point2(x + 5, 5), anchor_label=label)

    def test_unique_candidate_matched(self):
        d0 = [(self._area(0, 3), self._uniform_desc((3, 5), [(0, 1)]))]
        d1 = [(self._area(50, 3), self._uniform_desc((3, 5), [(0, 1), (1, 1)]))]
        matches, doubt0, doubt1 = match_soa(d0, d1, CFG)
        assert len(matches) == 1 and not doubt0 and not doubt1

    def test_close_candidates_all_doubtful(self):
        base = self._uniform_desc((3, 5), [(0, 1), (1, 1), (2, 1), (3, 1)])
        near = self._uniform_desc((3, 5), [(0, 1), (1, 1), (2, 1)])        # H = 1/8
        nearer = self._uniform_desc((3, 5), [(0, 1), (1, 1), (2, 1), (3, 1)])
        d0 = [(self._area(0, 3), base)]
        d1 = [(self._area(50, 3), nearer), (self._area(100, 3), near)]
        matches, doubt0, doubt1 = match_soa(d0, d1, CFG)
        # distances 0 and 0.125 differ by less than the 0.2 margin
        assert not matches
        assert len(doubt0) == 1 and len(doubt1) == 2

    def test_far_unique_candidate_rejected_not_doubtful(self):
        labels = (3, 5, 7, 9, 11)
        a = self._uniform_desc(labels, [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (3, 3)])
        b = self._uniform_desc(labels, [(0, 2), (0, 3), (1, 2), (1, 3), (2, 4), (3, 4)])
        assert soa_distance(a, b) == pytest.approx(0.6)  # strictly above the 0.5 cut
        matches, doubt0, doubt1 = match_soa(
            [(self._area(0, 3), a)], [(self._area(50, 3), b)], CFG
        )
        assert not matches and not doubt0 and not doubt1

    def test_boundary_distance_kept(self):
        # rejection is strictly-greater: a candidate exactly at the cut survives
        labels = (3, 5, 7, 9, 11)
        a = self._uniform_desc(labels, [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0)])
        b = self._uniform_desc(labels, [(0, 2), (0, 3), (1, 2), (1, 3), (2, 1)])
        assert soa_distance(a, b) == pytest.approx(0.5)
        matches, _, _ = match_soa([(self._area(0, 3), a)], [(self._area(50, 3), b)], CFG)
        assert len(matches) == 1

    def test_label_restriction(self):
        a = self._uniform_desc((3, 5), [(0, 1)])
        matches, _, _ = match_soa(
            [(self._area(0, 3), a)], [(self._area(50, 5), a)], CFG
        )
        assert not matches

    def test_distance_symmetry(self):
        rng = np.random.default_rng(0)
        from sgam.areas import SoaDescriptor

        for _ in range(20):
            x = SoaDescriptor(rng.random((4, 6)) > 0.5, tuple(range(6)))
            y = SoaDescriptor(rng.random((4, 6)) > 0.5, tuple(range(6)))
            assert soa_distance(x, y) == soa_distance(y, x)
            assert 0.0 <= soa_distance(x, y) <= 1.0


class TestDetectSia:
    def test_single_label_map_empty(self):
        grid = grid_map(512, 512, fill=3)
        assert detect_sia(SemanticMap(grid), 256, CFG) == []

    def test_three_labels_insufficient(self):
        grid = grid_map(512, 512, fill=1)
        grid[:, 170:340] = 2
        grid[:, 340:] = 3
        assert detect_sia(SemanticMap(grid), 256, CFG) == []

    def test_four_quadrant_junction_found_and_centered(self):
        grid = grid_map(512, 512)
        grid[:256, :256] = 1
        grid[:256, 256:] = 2
        grid[256:, :256] = 3
        grid[256:, 256:] = 4
        areas = detect_sia(SemanticMap(grid), 256, CFG)
        assert len(areas) >= 1
        best = areas[0]
        # variance-minimal center is the junction (all proportions 0.25)
        assert abs(best.center.x - 256) <= CFG.pyramid_ratio
        assert abs(best.center.y - 256) <= CFG.pyramid_ratio
        hist = semantic_histogram(SemanticMap(grid), best.bbox)
        assert all(abs(v - 0.25) < 0.05 for v in hist.values())

    def test_refinement_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(4)
        grid = grid_map(200, 200)
        grid[:90, :110] = 1
        grid[:90, 110:] = 2
        grid[90:, :110] = 3
        grid[90:, 110:] = 4
        m = SemanticMap(grid)
        cfg = SgamConfig(pyramid_ratio=4)
        areas = detect_sia(m, 100, cfg)
        assert areas
        best = areas[0]

        def variance_at(cx, cy):
            hist = semantic_histogram(m, (cx - 50, cy - 50, cx + 50, cy + 50))
            v = np.zeros(4)
            for lab, frac in hist.items():
                v[lab - 1] = frac
            return v.var()

        got = variance_at(int(best.center.x), int(best.center.y))
        brute = min(
            variance_at(cx, cy)
            for cx in range(50, 151, 2)
            for cy in range(50, 151, 2)
        )
        assert got <= brute + 1e-12

    def test_dedup_keeps_disjoint_areas(self):
        areas = detect_sia_with_junctions()
        for i, a in enumerate(areas):
            for b in areas[i + 1 :]:
                from sgam.areas import _iou

                assert _iou(a.bbox, b.bbox) <= CFG.sia_dedup_iou


def detect_sia_with_junctions():
    grid = grid_map(512, 512, fill=1)
    grid[:200, 150:260] = 2
    grid[200:340, :200] = 3
    grid[340:, 150:260] = 4
    grid[200:340, 260:] = 5
    return detect_sia(SemanticMap(grid), 192, CFG)


class TestDescribeSia:
    def _area(self, bbox):
        cx = (bbox[0] + bbox[2]) / 2
        cy = (bbox[1] + bbox[3]) / 2
        return Area(bbox=bbox, kind=SIA, center=Point2(cx, cy))

    def test_uniform_area_one_hot(self):
        grid = grid_map(512, 512, fill=2)
        desc = describe_sia(SemanticMap(grid), self._area((128, 128, 384, 384)), (2, 7), CFG)
        assert np.allclose(desc.quarter_props[:, 0], 1.0)
        assert np.allclose(desc.quarter_props[:, 1], 0.0)

    def test_four_quadrant_identity_pattern(self):
        grid = grid_map(512, 512)
        grid[:256, :256] = 1
        grid[:256, 256:] = 2
        grid[256:, :256] = 3
        grid[256:, 256:] = 4
        desc = describe_sia(
            SemanticMap(grid), self._area((128, 128, 384, 384)), (1, 2, 3, 4), CFG
        )
        for quadrant in range(4):
            assert desc.quarter_props[quadrant, quadrant] > 0.75

    def test_per_quadrant_sums(self):
        pair = cached_pair("room6", 0)
        areas = detect_sia(pair.sem0, 256, CFG)
        space = pair.sem0.distinct_labels()
        for area in areas:
            desc = describe_sia(pair.sem0, area, space, CFG)
            sums = desc.quarter_props.sum(axis=1)
            for s in sums:
                assert s == pytest.approx(1.0, abs=1e-9) or s == 0.0

    def test_scale_reached_label_weighted_by_scale_count(self):
        # label 9 sits outside the 1.0x quadrant but inside the 1.2x window
        grid = grid_map(512, 512, fill=1)
        grid[118:128, 128:256] = 9  # just above the area top
        area = self._area((128, 128, 384, 384))
        desc = describe_sia(SemanticMap(grid), area, (1, 9), CFG)
        frac_12 = {}
        for scale in (1.2, 1.4):
            w = (
                int(round(192 - 64 * scale)), int(round(192 - 64 * scale)),
                int(round(192 + 64 * scale)), int(round(192 + 64 * scale)),
            )
            frac_12[scale] = semantic_histogram(SemanticMap(grid), w).get(9, 0.0)
        expected = (0.0 + 0.0 + frac_12[1.2] + frac_12[1.4]) / 4.0
        assert desc.quarter_props[0, 1] == pytest.approx(expected, abs=1e-9)


class TestMatchSia:
    def _pair(self, props0, props1):
        from sgam.areas import SiaDescriptor

        space = tuple(range(props0.shape[1]))
        a0 = Area(bbox=(0, 0, 64, 64), kind=SIA, center=Point2(32, 32))
        a1 = Area(bbox=(64, 0, 128, 64), kind=SIA, center=Point2(96, 32))
        return (
            [(a0, SiaDescriptor(props0, space))],
            [(a1, SiaDescriptor(props1, space))],
        )

    def test_identical_descriptors_matched_at_zero(self):
        p = np.random.default_rng(1).dirichlet(np.ones(4), size=4)
        d0, d1 = self._pair(p, p.copy())
        matches, _, _ = match_sia(d0, d1, CFG)
        assert len(matches) == 1
        assert matches[0].desc_distance == 0.0

    def test_far_candidate_rejected(self):
        p0 = np.zeros((4, 4))
        p0[:, 0] = 1.0
        p1 = np.zeros((4, 4))
        p1[:, 1] = 1.0
        d0, d1 = self._pair(p0, p1)
        assert sia_distance(d0[0][1], d1[0][1]) > CFG.sia_l2_max
        matches, doubt0, doubt1 = match_sia(d0, d1, CFG)
        assert not matches and not doubt0 and not doubt1

    def test_close_competitors_doubtful(self):
        from sgam.areas import SiaDescriptor

        space = (0, 1)
        base = np.array([[1.0, 0.0]] * 4)
        near = base.copy()
        near[0] = [0.9, 0.1]       # L2 ~ 0.14 from base
        a = Area(bbox=(0, 0, 64, 64), kind=SIA, center=Point2(32, 32))
        b1 = Area(bbox=(0, 0, 64, 64), kind=SIA, center=Point2(32, 32))
        b2 = Area(bbox=(100, 0, 164, 64), kind=SIA, center=Point2(132, 32))
        matches, doubt0, doubt1 = match_sia(
            [(a, SiaDescriptor(base, space))],
            [(b1, SiaDescriptor(base, space)), (b2, SiaDescriptor(near, space))],
            CFG,
        )
        assert not matches
        assert len(doubt0) == 1 and len(doubt1) == 2

    def test_shared_target_conflict_doubtful(self):
        from sgam.areas import SiaDescriptor

        space = (0, 1)
        base = np.array([[0.5, 0.5]] * 4)
        a1 = Area(bbox=(0, 0, 64, 64), kind=SIA, center=Point2(32, 32))
        a2 = Area(bbox=(200, 0, 264, 64), kind=SIA, center=Point2(232, 32))
        b = Area(bbox=(0, 0, 64, 64), kind=SIA, center=Point2(32, 32))
        matches, doubt0, doubt1 = match_sia(
            [(a1, SiaDescriptor(base, space)), (a2, SiaDescriptor(base.copy(), space))],
            [(b, SiaDescriptor(base.copy(), space))],
            CFG,
        )
        assert not matches
        assert len(doubt0) == 2 and len(doubt1) == 1


class TestSamPipeline:
    def test_identical_maps_self_match(self):
        grid = grid_map(480, 640)
        grid[50:200, 50:230] = 1
        grid[260:420, 300:500] = 2
        grid[60:220, 380:560] = 3
        m = SemanticMap(grid)
        out = sam_pipeline(m, m, CFG)
        soa = [c for c in out.accepted if c.kind == SOA]
        assert len(soa) == 3
        for c in soa:
            assert c.a0.bbox == c.a1.bbox
            assert c.desc_distance == 0.0
        assert not out.doubtful_a0 and not out.doubtful_a1

    def test_translated_maps_match_with_shifted_boxes(self):
        grid = grid_map(480, 640)
        grid[100:250, 60:220] = 1
        grid[260:420, 300:500] = 2
        m0 = SemanticMap(grid)
        m1 = SemanticMap(np.roll(grid, 20, axis=1))
        out = sam_pipeline(m0, m1, CFG)
        soa = {c.a0.anchor_label: c for c in out.accepted if c.kind == SOA}
        assert set(soa) == {1, 2}
        for c in soa.values():
            assert c.a1.bbox[0] - c.a0.bbox[0] == 20

    def test_twins_fixture_flags_doubtful(self):
        pair = cached_pair("twins", 0)
        out = sam_pipeline(pair.sem0, pair.sem1, CFG)
        assert len(out.doubtful_a0) >= 2
        assert len(out.doubtful_a1) >= 2
        accepted_areas = {id(c.a0) for c in out.accepted} | {id(c.a1) for c in out.accepted}
        doubtful_areas = {id(a) for a in out.doubtful_a0} | {id(a) for a in out.doubtful_a1}
        assert not (accepted_areas & doubtful_areas)

    def test_mutual_exclusion_on_fixtures(self):
        for name, seed in (("room6", 0), ("room6", 3), ("twins", 1)):
            pair = cached_pair(name, seed)
            out = sam_pipeline(pair.sem0, pair.sem1, CFG)
            acc0 = {c.a0.bbox for c in out.accepted}
            acc1 = {c.a1.bbox for c in out.accepted}
            assert not (acc0 & {a.bbox for a in out.doubtful_a0})
            assert not (acc1 & {a.bbox for a in out.doubtful_a1})

    def test_anchor_labels_agree(self):
        pair = cached_pair("room6", 1)
        out = sam_pipeline(pair.sem0, pair.sem1, CFG)
        for c in out.accepted:
            if c.kind == SOA:
                assert c.a0.anchor_label == c.a1.anchor_label


class TestAdjustSiaScale:
    def _match(self, area0_px, area1_px):
        from sgam.areas import AreaMatchCandidate

        a0 = Area(bbox=(0, 0, area0_px, area0_px), kind=SOA,
                  center=Point2(area0_px / 2, area0_px / 2), anchor_label=1)
        a1 = Area(bbox=(0, 0, area1_px, area1_px), kind=SOA,
                  center=Point2(area1_px / 2, area1_px / 2), anchor_label=1)
        return AreaMatchCandidate(a0=a0, a1=a1, kind=SOA, desc_distance=0.0,
                                  status="accepted", provenance=SOA)

    def test_same_size_unity(self):
        assert adjust_sia_scale([self._match(64, 64)], CFG) == (1.0, 1.0)

    def test_four_x_area_gives_two(self):
        s = adjust_sia_scale([self._match(50, 100)], CFG)
        assert s[0] == pytest.approx(2.0)

    def test_no_matches_pass_through(self):
        assert adjust_sia_scale([], CFG) == (1.0, 1.0)

    def test_geometric_mean(self):
        s = adjust_sia_scale([self._match(50, 100), self._match(100, 50)], CFG)
        assert s[0] == pytest.approx(1.0)
