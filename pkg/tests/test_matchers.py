import sys
import textwrap

import numpy as np
import pytest

from sgam.config import SgamConfig
from sgam.errors import CovisibilityError, MatcherError, ProtocolError
from sgam.geometry import Point2, sampson_values
from sgam.matchers import (
    AreaTransform,
    ClassicalMatcher,
    MatcherRequest,
    OracleMatcher,
    SubprocessMatcher,
    expand_bbox_to_aspect,
    full_image_request,
    prepare_area_pair,
)

from helpers import cached_pair

CFG = SgamConfig()


class TestAreaTransform:
    def test_round_trip(self):
        t = AreaTransform(offset=Point2(37.0, 12.0), scale_x=1.7, scale_y=0.6)
        pts = np.random.default_rng(0).uniform(0, 256, size=(50, 2))
        back = t.to_crop(t.to_original(pts))
        assert np.abs(back - pts).max() < 0.5

    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError):
            AreaTransform(offset=Point2(0, 0), scale_x=0.0, scale_y=1.0)


class TestExpandBbox:
    def test_square_stays(self):
        assert expand_bbox_to_aspect((10, 10, 110, 110), 1.0, 640, 480) == (10, 10, 110, 110)

    def test_wide_bbox_grows_vertically(self):
        out = expand_bbox_to_aspect((100, 100, 400, 200), 1.0, 640, 480)
        assert out == (100, 0, 400, 300)

    def test_border_clamp_compensates_opposite_side(self):
        out = expand_bbox_to_aspect((0, 200, 60, 380), 1.0, 640, 480)
        x0, y0, x1, y1 = out
        assert x0 == 0
        assert (x1 - x0) == (y1 - y0) == 180

    def test_degenerate_raises(self):
        with pytest.raises(ValueError):
            expand_bbox_to_aspect((10, 10, 10, 50), 1.0, 640, 480)


class TestOracleMatcher:
    def test_noiseless_matches_satisfy_true_geometry(self):
        pair = cached_pair("room6", 0)
        pm = OracleMatcher(pair.gt, noise_sigma=0.0, outlier_rate=0.0, n_matches=200, seed=1)
        req = full_image_request(pair.rgb0, pair.rgb1, CFG)
        matches = pm.match(req).matches
        assert len(matches) == 200
        f_gt = pair.gt.fundamental()
        assert sampson_values(f_gt, matches).max() < 1e-9

    def test_noise_std_calibrated(self):
        # identity transforms so crop pixels equal original pixels
        pair = cached_pair("planar", 0)
        pm = OracleMatcher(pair.gt, noise_sigma=1.0, outlier_rate=0.0, n_matches=5000, seed=2)
        ident = AreaTransform(offset=Point2(0.0, 0.0), scale_x=1.0, scale_y=1.0)
        req = MatcherRequest(
            image0_crop=pair.rgb0, image1_crop=pair.rgb1,
            transform0=ident, transform1=ident, max_matches=10000,
        )
        matches = pm.match(req).matches
        proj, valid = pair.gt.project(matches.q)
        residual = (matches.p - proj)[valid]
        assert 0.8 < residual.std() < 1.2

    def test_outlier_fraction_binomial(self):
        pair = cached_pair("planar", 1)
        ident = AreaTransform(offset=Point2(0.0, 0.0), scale_x=1.0, scale_y=1.0)
        req = MatcherRequest(
            image0_crop=pair.rgb0, image1_crop=pair.rgb1,
            transform0=ident, transform1=ident, max_matches=20000,
        )
        pm = OracleMatcher(pair.gt, noise_sigma=1.0, outlier_rate=0.3, n_matches=10000, seed=3)
        matches = pm.match(req).matches
        proj, valid = pair.gt.project(matches.q)
        err = np.linalg.norm(matches.p - proj, axis=1)[valid]
        outlier_frac = (err > 3 * 1.0 + 2).mean()
        assert outlier_frac == pytest.approx(0.3, abs=0.03)

    def test_disjoint_crops_raise(self):
        pair = cached_pair("room6", 0)
        t0 = AreaTransform(offset=Point2(0.0, 0.0), scale_x=0.2, scale_y=0.2)
        # crop 1 far outside anything the crop-0 region projects to
        t1 = AreaTransform(offset=Point2(600.0, 440.0), scale_x=0.1, scale_y=0.1)
        req = MatcherRequest(
            image0_crop=np.zeros((256, 256, 3), np.uint8),
            image1_crop=np.zeros((256, 256, 3), np.uint8),
            transform0=t0, transform1=t1,
        )
        pm = OracleMatcher(pair.gt, n_matches=100, seed=0)
        with pytest.raises(CovisibilityError):
            pm.match(req)

    def test_deterministic_per_seed_and_geometry(self):
        pair = cached_pair("room6", 2)
        pm = OracleMatcher(pair.gt, noise_sigma=0.7, outlier_rate=0.1, n_matches=150, seed=9)
        req = full_image_request(pair.rgb0, pair.rgb1, CFG)
        a = pm.match(req).matches
        b = pm.match(req).matches
        assert a == b

    def test_emitted_matches_map_back_into_crop_bounds(self):
        pair = cached_pair("room6", 1)
        pm = OracleMatcher(pair.gt, noise_sigma=3.0, outlier_rate=0.2, n_matches=200, seed=4)
        req = full_image_request(pair.rgb0, pair.rgb1, CFG)
        matches = pm.match(req).matches
        w, h = req.crop_size()
        for transform, pts in ((req.transform0, matches.q), (req.transform1, matches.p)):
            crop = transform.to_crop(pts)
            assert (crop >= 0).all()
            assert (crop[:, 0] < w).all() and (crop[:, 1] < h).all()


class TestClassicalMatcher:
    def test_translation_recovered_on_textured_pair(self):
        pair = cached_pair("planar", 0)
        pm = ClassicalMatcher()
        req = full_image_request(pair.rgb0, pair.rgb1, CFG)
        matches = pm.match(req).matches
        assert len(matches) >= 30
        proj, valid = pair.gt.project(matches.q)
        err = np.linalg.norm(matches.p - proj, axis=1)[valid]
        assert np.median(err) < 1.0

    def test_deterministic(self):
        pair = cached_pair("planar", 1)
        req = full_image_request(pair.rgb0, pair.rgb1, CFG)
        assert ClassicalMatcher().match(req).matches == ClassicalMatcher().match(req).matches


ECHO_BRIDGE = textwrap.dedent(
    """
    import json, sys
    for line in sys.stdin:
        msg = json.loads(line)
        if msg["type"] == "hello":
            print(json.dumps({"type": "hello", "version": 1, "name": "echo"}), flush=True)
        elif msg["type"] == "match":
            reply = {"type": "matches", "id": msg["id"],
                     "matches": [[1.0, 2.0, 3.0, 4.0], [10.5, 20.25, 30.0, 40.0]],
                     "confidences": [0.5, 1.0]}
            print(json.dumps(reply), flush=True)
    """
)

BAD_CONF_BRIDGE = ECHO_BRIDGE.replace('"confidences": [0.5, 1.0]', '"confidences": [0.5]')

DYING_BRIDGE = textwrap.dedent(
    """
    import json, sys
    line = sys.stdin.readline()
    print(json.dumps({"type": "hello", "version": 1, "name": "doomed"}), flush=True)
    sys.stdin.readline()
    sys.exit(1)
    """
)


def _bridge_command(tmp_path, code, name):
    script = tmp_path / name
    script.write_text(code)
    return [sys.executable, str(script)]


class TestSubprocessMatcher:
    def _request(self):
        rng = np.random.default_rng(0)
        crop = rng.integers(0, 255, size=(64, 64, 3)).astype(np.uint8)
        t0 = AreaTransform(offset=Point2(100.0, 50.0), scale_x=2.0, scale_y=2.0)
        t1 = AreaTransform(offset=Point2(-10.0, 5.0), scale_x=0.5, scale_y=4.0)
        return MatcherRequest(image0_crop=crop, image1_crop=crop, transform0=t0, transform1=t1)

    def test_loopback_transforms_applied(self, tmp_path):
        with SubprocessMatcher(_bridge_command(tmp_path, ECHO_BRIDGE, "echo.py")) as pm:
            resp = pm.match(self._request())
            assert pm.name == "echo"
        # crop-local [1,2,3,4] -> q = (100+1*2, 50+2*2), p = (-10+3*0.5, 5+4*4)
        assert resp.matches.array[0].tolist() == [102.0, 54.0, -8.5, 21.0]
        assert resp.confidences.tolist() == [0.5, 1.0]

    def test_mismatched_confidences_rejected(self, tmp_path):
        with SubprocessMatcher(_bridge_command(tmp_path, BAD_CONF_BRIDGE, "bad.py")) as pm:
            with pytest.raises(ProtocolError):
                pm.match(self._request())

    def test_dead_bridge_raises_matcher_error(self, tmp_path):
        with SubprocessMatcher(_bridge_command(tmp_path, DYING_BRIDGE, "die.py")) as pm:
            with pytest.raises(MatcherError):
                pm.match(self._request())


def test_prepare_area_pair_uniform_scale():
    pair = cached_pair("room6", 0)
    req = prepare_area_pair((118, 264, 203, 373), (120, 260, 200, 370),
                            pair.rgb0, pair.rgb1, CFG)
    assert req.image0_crop.shape == (256, 256, 3)
    assert req.transform0.scale_x == pytest.approx(req.transform0.scale_y)
