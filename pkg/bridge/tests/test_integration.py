"""End-to-end: the matching CLI drives this bridge as its point matcher.

The two packages touch only through the subprocess wire protocol; this
test consumes the primary via its command-line interface.
"""

import json
import shutil
import subprocess
import sys

import pytest

HAVE_SGAM = shutil.which("sgam") is not None or not subprocess.run(
    [sys.executable, "-c", "import sgam"], capture_output=True
).returncode


@pytest.mark.skipif(not HAVE_SGAM, reason="primary package not installed")
def test_cli_match_through_grid_bridge(tmp_path):
    fixture = tmp_path / "pair"
    r = subprocess.run(
        [sys.executable, "-m", "sgam.cli", "synth", "--fixture", "sparse", "--seed", "3",
         "--out", str(fixture)],
        capture_output=True, text=True,
    )
    assert r.returncode == 0, r.stderr

    out = tmp_path / "result"
    matcher = f"subprocess:{sys.executable} -m pm_bridge --backend grid --grid-step 12"
    r = subprocess.run(
        [sys.executable, "-m", "sgam.cli", "match", "--pair", str(fixture),
         "--matcher", matcher, "--out", str(out)],
        capture_output=True, text=True,
    )
    assert r.returncode == 0, r.stderr
    doc = json.loads((out / "result.json").read_text())
    total = sum(len(block) for block in doc["inside_matches"]) + len(doc["global_matches"])
    assert len(doc["merged"]) > 0 or total == 0
