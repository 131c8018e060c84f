"""Matching and pose metrics, plus a pair-list benchmark driver.

Pose AUC integrates the empirical cumulative-accuracy step curve exactly
(not the coarse bin count): AUC@t = (1/t) * integral_0^t CDF(e) de, where
CDF is the fraction of pairs with error at most e and failures count as
infinite error.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .areas import AreaMatchCandidate
from .config import SgamConfig
from .errors import EvalError, GeometryError
from .geometry import (
    CameraIntrinsics,
    MatchSet,
    PoseEstimate,
    pose_error,
    ransac_fundamental,
    recover_pose,
)
from .groundtruth import GroundTruth, ground_truth_from_json
from .semantics import SemanticMap

log = logging.getLogger("sgam.eval")

MMA_THRESHOLDS = (1.0, 2.0, 3.0)
AUC_THRESHOLDS = (5.0, 10.0, 20.0)


def aor(match: AreaMatchCandidate, gt: GroundTruth, sample_n: int = 2000, seed: int = 0) -> float:
    """Area overlap ratio: fraction of projectable points of the source area
    landing inside the matched target area."""
    x0, y0, x1, y1 = match.a0.bbox
    rng = np.random.default_rng(seed)
    pts = np.stack(
        [rng.uniform(x0, x1, size=sample_n), rng.uniform(y0, y1, size=sample_n)], axis=1
    )
    proj, valid = gt.project(pts)
    if not valid.any():
        raise EvalError("no projectable points inside the source area")
    bx0, by0, bx1, by1 = match.a1.bbox
    inside = (
        (proj[valid, 0] >= bx0)
        & (proj[valid, 0] < bx1)
        & (proj[valid, 1] >= by0)
        & (proj[valid, 1] < by1)
    )
    return float(inside.mean())


def amp_from_ratios(ratios, t: float) -> float:
    """Fraction of overlap ratios strictly above t."""
    ratios = list(ratios)
    if not ratios:
        raise EvalError("no area matches to evaluate")
    return sum(1 for r in ratios if r > t) / len(ratios)


def amp(
    matches: list[AreaMatchCandidate],
    gt: GroundTruth,
    t: float = 0.7,
    sample_n: int = 2000,
    seed: int = 0,
) -> float:
    """Area matching precision at threshold t (strictly greater counts)."""
    if not matches:
        raise EvalError("no area matches to evaluate")
    ratios = [aor(m, gt, sample_n=sample_n, seed=seed + i) for i, m in enumerate(matches)]
    return amp_from_ratios(ratios, t)


def mma(
    matches: MatchSet, gt: GroundTruth, thresholds=MMA_THRESHOLDS
) -> tuple[dict[float, float], int]:
    """Mean matching accuracy: fraction of matches within each pixel threshold.

    Matches whose source point cannot be projected (no depth, occluded) are
    excluded from the denominator; their count is returned alongside.
    """
    if len(matches) == 0:
        raise EvalError("empty match set")
    errors, valid = gt.reprojection_errors(matches.array)
    n_invalid = int((~valid).sum())
    usable = errors[valid]
    if len(usable) == 0:
        raise EvalError("no match survived the projector validity test")
    return {float(t): float((usable <= t).mean()) for t in thresholds}, n_invalid


def pose_auc(errors, thresholds=AUC_THRESHOLDS) -> dict[float, float]:
    """Exact area under the cumulative accuracy curve, per threshold.

    ``errors`` holds per-pair (rotation_deg, translation_deg) tuples or
    scalars; tuples reduce via max. Failed estimates enter as infinity.
    """
    scalars = []
    for e in errors:
        if np.isscalar(e):
            scalars.append(float(e))
        else:
            scalars.append(float(max(e)))
    if not scalars:
        raise EvalError("no pose errors to integrate")
    n = len(scalars)
    ordered = np.sort(np.asarray(scalars))
    out = {}
    for t in thresholds:
        below = ordered[ordered <= t]
        # step-function integral: sum over steps of (next_edge - e_i) * i/n
        edges = np.concatenate([below, [t]])
        acc = 0.0
        for i in range(len(below)):
            acc += (edges[i + 1] - edges[i]) * (i + 1) / n
        out[float(t)] = acc / t
    return out


def estimate_pose_from_matches(
    matches: MatchSet,
    k0: CameraIntrinsics,
    k1: CameraIntrinsics,
    config: SgamConfig,
    seed: int = 0,
) -> PoseEstimate:
    """Standard protocol: RANSAC fundamental, essential decomposition,
    cheirality-voted pose over the inliers."""
    f, inliers = ransac_fundamental(
        matches,
        inlier_threshold=config.ransac_threshold,
        max_iters=config.ransac_max_iters,
        seed=seed,
        confidence=config.ransac_confidence,
    )
    return recover_pose(f, k0, k1, inliers)


# ---------------------------------------------------------------------------
# Benchmark driver


@dataclass
class PairRecord:
    name: str
    image0: np.ndarray
    image1: np.ndarray
    map0: SemanticMap
    map1: SemanticMap
    gt: GroundTruth


@dataclass
class MetricReport:
    mma: dict[float, float] = field(default_factory=dict)
    pose_auc: dict[float, float] = field(default_factory=dict)
    aor_values: list[float] = field(default_factory=list)
    amp: dict[float, float] = field(default_factory=dict)
    pair_count: int = 0
    failed_pairs: int = 0
    invalid_matches: int = 0

    def to_json_dict(self) -> dict:
        return {
            "mma": {f"mma@{int(k)}": v for k, v in sorted(self.mma.items())},
            "pose_auc": {f"auc@{int(k)}": v for k, v in sorted(self.pose_auc.items())},
            "aor_mean": float(np.mean(self.aor_values)) if self.aor_values else None,
            "amp": {f"amp@{k}": v for k, v in sorted(self.amp.items())},
            "pairs": self.pair_count,
            "failed_pairs": self.failed_pairs,
            "invalid_matches": self.invalid_matches,
        }


def _evaluate_matches(record: PairRecord, matches: MatchSet, config: SgamConfig, seed: int):
    """Per-pair reduction: sampled matches -> MMA fractions + pose error."""
    dims = (record.image0.shape[1], record.image0.shape[0])
    sampled = None
    if len(matches):
        from .pipeline import uniform_sample

        sampled = uniform_sample(matches, dims, config.max_correspondences, seed=seed)
    pose_err = (np.inf, np.inf)
    mma_result = None
    invalid = 0
    if sampled is not None and len(sampled):
        try:
            mma_result, invalid = mma(sampled, record.gt)
        except EvalError:
            mma_result = None
        if record.gt.rotation is not None:
            try:
                est = estimate_pose_from_matches(
                    sampled, record.gt.k0, record.gt.k1 or record.gt.k0, config, seed=seed
                )
                pose_err = pose_error(est, record.gt.pose)
            except GeometryError as e:
                log.warning("%s: pose estimation failed: %s", record.name, e)
    return sampled, mma_result, invalid, pose_err


def run_benchmark(
    records: list[PairRecord],
    matcher_factory,
    config: SgamConfig | None = None,
    seed: int = 0,
    workers: int = 1,
    bare: bool = False,
    amp_threshold: float = 0.7,
) -> MetricReport:
    """Run the pipeline over every pair and aggregate all metrics.

    ``matcher_factory(record)`` supplies the point matcher per pair (oracle
    matchers need the pair's ground truth). With ``bare=True`` the pipeline
    is bypassed and the matcher runs on the resized full images, which is
    the baseline the area pipeline is compared against.
    """
    from .matchers import full_image_request
    from .pipeline import sgam

    config = config or SgamConfig()
    report = MetricReport(pair_count=len(records))
    mma_rows = []
    pose_errors = []

    def one(index_record):
        index, record = index_record
        pm = matcher_factory(record)
        try:
            if bare:
                matches = pm.match(full_image_request(record.image0, record.image1, config)).matches
                aors = []
            else:
                result = sgam(
                    record.image0, record.image1, record.map0, record.map1, pm, config,
                    gmc_seed=seed + index,
                )
                matches = result.merged
                aors = [
                    aor(e.candidate, record.gt, seed=seed + 31 * i)
                    for i, e in enumerate(result.area_matches.entries)
                ]
            _, mma_result, invalid, perr = _evaluate_matches(record, matches, config, seed + index)
            return mma_result, invalid, perr, aors, None
        except Exception as e:  # per-pair failures never abort the sweep
            log.exception("%s failed", record.name)
            return None, 0, (np.inf, np.inf), [], e

    items = list(enumerate(records))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, items))
    else:
        outcomes = [one(item) for item in items]

    for mma_result, invalid, perr, aors, failure in outcomes:
        report.invalid_matches += invalid
        pose_errors.append(perr)
        if failure is not None:
            report.failed_pairs += 1
            continue
        if mma_result is not None:
            mma_rows.append(mma_result)
        report.aor_values.extend(aors)

    if mma_rows:
        report.mma = {
            t: float(np.mean([row[t] for row in mma_rows])) for t in MMA_THRESHOLDS
        }
    if pose_errors:
        report.pose_auc = pose_auc(pose_errors)
    if report.aor_values:
        report.amp = {amp_threshold: amp_from_ratios(report.aor_values, amp_threshold)}
    return report


def load_pair_list(path: str | Path) -> list[PairRecord]:
    """Read a JSON-lines pair list; paths resolve relative to the list file."""
    from PIL import Image

    from .semantics import load_semantic_map

    path = Path(path)
    base = path.parent
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            spec = json.loads(line)

            def _res(p):
                p = Path(p)
                return p if p.is_absolute() else base / p

            image0 = np.asarray(Image.open(_res(spec["image0"])).convert("RGB"))
            image1 = np.asarray(Image.open(_res(spec["image1"])).convert("RGB"))
            map0 = load_semantic_map(_res(spec["sem0"]))
            map1 = load_semantic_map(_res(spec["sem1"]))
            gt = ground_truth_from_json(spec["gt"], base_dir=base)
            if gt.image1_size is None:
                gt = ground_truth_from_json(
                    {**spec["gt"], "image1_size": [image1.shape[1], image1.shape[0]]},
                    base_dir=base,
                )
            records.append(
                PairRecord(
                    name=spec.get("name", f"pair{line_no}"),
                    image0=image0,
                    image1=image1,
                    map0=map0,
                    map1=map1,
                    gt=gt,
                )
            )
    return records


def write_report(report: MetricReport, json_path, csv_path, extra: dict | None = None) -> None:
    doc = report.to_json_dict()
    if extra:
        doc.update(extra)
    Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_report_csv({"sgam": report}, csv_path)


def write_report_csv(reports: dict[str, MetricReport], csv_path) -> None:
    """One row per method; columns follow the usual benchmark tables."""
    columns = ["method", "MMA@1", "MMA@2", "MMA@3", "AUC@5", "AUC@10", "AUC@20"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for name, report in reports.items():
            writer.writerow(
                [name]
                + [f"{report.mma.get(t, float('nan')):.4f}" for t in MMA_THRESHOLDS]
                + [f"{report.pose_auc.get(t, float('nan')):.4f}" for t in AUC_THRESHOLDS]
            )
        if {"sgam", "bare"} <= reports.keys():
            s, b = reports["sgam"], reports["bare"]
            writer.writerow(
                ["delta"]
                + [f"{s.mma.get(t, np.nan) - b.mma.get(t, np.nan):+.4f}" for t in MMA_THRESHOLDS]
                + [f"{s.pose_auc.get(t, np.nan) - b.pose_auc.get(t, np.nan):+.4f}" for t in AUC_THRESHOLDS]
            )
