"""Command-line surface: match a pair, run benchmarks, generate fixtures.

Exit codes: 0 success, 2 validation error, 3 matcher failure. Output files
are written via a temporary name and renamed, so a failing run leaves no
partial artifacts. All randomness hangs off --seed; repeated runs with the
same seed produce identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import SgamConfig
from .errors import MatcherError, SgamError
from .geometry import pose_error

log = logging.getLogger("sgam.cli")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MATCHER = 3


class ValidationFailure(Exception):
    pass


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _config_from_args(args) -> SgamConfig:
    overrides = {}
    if args.phi is not None:
        overrides["rejector_scale"] = args.phi
    if args.t_sp is not None:
        overrides["gmc_coverage_max"] = args.t_sp
    if args.t_h is not None:
        overrides["soa_hamming_max"] = args.t_h
    if args.t_l is not None:
        overrides["sia_l2_max"] = args.t_l
    if args.t_da is not None:
        overrides["doubt_margin"] = args.t_da
    if args.area_size is not None:
        overrides["default_area_size"] = args.area_size
    if args.max_matches is not None:
        overrides["max_correspondences"] = args.max_matches
    config = SgamConfig(**overrides)
    try:
        config.validate()
    except ValueError as e:
        raise ValidationFailure(str(e)) from e
    return config


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--phi", type=float, help="rejector threshold scale")
    p.add_argument("--t-sp", dest="t_sp", type=float, help="coverage gate for global collection")
    p.add_argument("--t-h", dest="t_h", type=float, help="object-area Hamming rejection threshold")
    p.add_argument("--t-l", dest="t_l", type=float, help="intersection-area L2 rejection threshold")
    p.add_argument("--t-da", dest="t_da", type=float, help="doubtful-candidate margin")
    p.add_argument("--area-size", type=int, help="matcher crop side in pixels")
    p.add_argument("--max-matches", type=int, help="correspondence cap for evaluation")
    p.add_argument("--matcher", default="oracle",
                   help="oracle | classical | subprocess:<command>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def _load_pair_dir(args):
    """A fixture directory: rgb0/rgb1/sem0/sem1 PNGs, depth npy, gt.json."""
    from PIL import Image

    from .groundtruth import ground_truth_from_json
    from .semantics import load_semantic_map, validate_against_image

    d = Path(args.pair)
    needed = ["rgb0.png", "rgb1.png", "sem0.png", "sem1.png", "gt.json"]
    for name in needed:
        if not (d / name).exists():
            raise ValidationFailure(f"missing {name} in {d}")
    image0 = np.asarray(Image.open(d / "rgb0.png").convert("RGB"))
    image1 = np.asarray(Image.open(d / "rgb1.png").convert("RGB"))
    map0 = load_semantic_map(d / "sem0.png")
    map1 = load_semantic_map(d / "sem1.png")
    try:
        validate_against_image(map0, image0, "sem0")
        validate_against_image(map1, image1, "sem1")
    except SgamError as e:
        raise ValidationFailure(str(e)) from e
    gt = ground_truth_from_json(json.loads((d / "gt.json").read_text()), base_dir=d)
    return image0, image1, map0, map1, gt


def _build_matcher(spec: str, gt, seed: int):
    from .matchers import ClassicalMatcher, OracleMatcher, SubprocessMatcher

    if spec == "oracle":
        if gt is None:
            raise ValidationFailure("the oracle matcher needs ground truth (gt.json)")
        return OracleMatcher(gt, noise_sigma=0.5, outlier_rate=0.0, n_matches=300, seed=seed)
    if spec == "classical":
        return ClassicalMatcher(seed=seed)
    if spec.startswith("subprocess:"):
        command = shlex.split(spec.split(":", 1)[1])
        if not command:
            raise ValidationFailure("empty subprocess matcher command")
        return SubprocessMatcher(command)
    raise ValidationFailure(f"unknown matcher {spec!r}")


def cmd_match(args) -> int:
    from .pipeline import result_to_json_dict, sgam, uniform_sample, write_matches_binary

    config = _config_from_args(args)
    image0, image1, map0, map1, gt = _load_pair_dir(args)
    pm = _build_matcher(args.matcher, gt, args.seed)
    result = sgam(image0, image1, map0, map1, pm, config, gmc_seed=args.seed)
    log.info("stage timings (ms): %s", {k: round(v, 1) for k, v in result.timings_ms.items()})
    if result.matcher_failed and len(result.merged) == 0:
        raise MatcherError("the point matcher produced nothing for this pair")

    pose_doc = None
    if gt is not None and gt.rotation is not None and len(result.merged) >= 8:
        from .metrics import estimate_pose_from_matches

        dims = (image0.shape[1], image0.shape[0])
        sampled = uniform_sample(result.merged, dims, config.max_correspondences, seed=args.seed)
        try:
            est = estimate_pose_from_matches(sampled, gt.k0, gt.k1 or gt.k0, config, seed=args.seed)
            rot_err, t_err = pose_error(est, gt.pose)
            pose_doc = {
                "rotation": est.rotation.tolist(),
                "translation": est.translation_dir.tolist(),
                "inlier_count": est.inlier_count,
                "rotation_error_deg": rot_err,
                "translation_error_deg": t_err,
            }
        except SgamError as e:
            log.warning("pose estimation failed: %s", e)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = result_to_json_dict(result, pose=pose_doc)
    names_file = Path(args.pair) / "labels.json"
    if names_file.exists():
        from .semantics import load_label_names

        doc["label_names"] = {str(k): v for k, v in load_label_names(names_file).items()}
    _atomic_write_text(out / "result.json", _json_text(doc))
    if args.binary:
        fd, tmp = tempfile.mkstemp(dir=out, prefix=".matches.bin.")
        os.close(fd)
        write_matches_binary(result.merged, tmp)
        os.replace(tmp, out / "matches.bin")
    if args.dump_areas:
        lines = []
        for e in result.area_matches.entries:
            c = e.candidate
            lines.append(json.dumps({
                "kind": c.kind, "bbox0": list(c.a0.bbox), "bbox1": list(c.a1.bbox),
                "distance": c.desc_distance, "status": c.status,
            }))
        for side, areas in (("0", result.sam.doubtful_a0), ("1", result.sam.doubtful_a1)):
            for a in areas:
                lines.append(json.dumps({
                    "kind": a.kind, f"bbox{side}": list(a.bbox), "distance": None,
                    "status": "doubtful",
                }))
        _atomic_write_text(out / "areas.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    if args.dump_consistency:
        doc = result.consistency.to_json_dict() if result.consistency else {}
        if result.consistency:
            doc["areas"] = [list(e.candidate.a0.bbox) for e in result.area_matches.entries]
        _atomic_write_text(out / "consistency.json", _json_text(doc))
    if args.overlay:
        _write_overlay(out / "overlay.png", image0, image1, result)
    print(f"areas={len(result.area_matches.entries)} merged_matches={len(result.merged)} "
          f"degraded={result.degraded}")
    return EXIT_OK


def _write_overlay(path: Path, image0, image1, result) -> None:
    """Side-by-side composite with color-coded area boxes per match."""
    from PIL import Image, ImageDraw

    h = max(image0.shape[0], image1.shape[0])
    w = image0.shape[1] + image1.shape[1]
    canvas = Image.new("RGB", (w, h))
    canvas.paste(Image.fromarray(image0), (0, 0))
    canvas.paste(Image.fromarray(image1), (image0.shape[1], 0))
    draw = ImageDraw.Draw(canvas)
    palette = [
        (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
        (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 190),
    ]
    shift = image0.shape[1]
    for i, e in enumerate(result.area_matches.entries):
        color = palette[i % len(palette)]
        x0, y0, x1, y1 = e.candidate.a0.bbox
        draw.rectangle([x0, y0, x1 - 1, y1 - 1], outline=color, width=3)
        x0, y0, x1, y1 = e.candidate.a1.bbox
        draw.rectangle([x0 + shift, y0, x1 - 1 + shift, y1 - 1], outline=color, width=3)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    canvas.save(tmp, format="PNG")
    os.replace(tmp, path)


def cmd_eval(args) -> int:
    from .matchers import ClassicalMatcher, OracleMatcher, SubprocessMatcher
    from .metrics import MetricReport, load_pair_list, run_benchmark, write_report_csv

    config = _config_from_args(args)
    if not Path(args.pairs).exists():
        raise ValidationFailure(f"pair list {args.pairs} not found")
    records = load_pair_list(args.pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def factory(record):
        return _build_matcher(args.matcher, record.gt, args.seed)

    if not records:
        report = MetricReport()
        _atomic_write_text(out / "report.json", _json_text(report.to_json_dict()))
        write_report_csv({"sgam": report}, out / "report.csv")
        print("empty pair list; empty report written")
        return EXIT_OK

    reports = {
        "sgam": run_benchmark(records, factory, config, seed=args.seed, workers=args.workers)
    }
    if args.compare_bare:
        reports["bare"] = run_benchmark(
            records, factory, config, seed=args.seed, workers=args.workers, bare=True
        )
    doc = {name: r.to_json_dict() for name, r in reports.items()}
    if args.compare_bare:
        doc["delta"] = {
            "mma": {
                f"mma@{int(t)}": reports["sgam"].mma.get(t, np.nan) - reports["bare"].mma.get(t, np.nan)
                for t in sorted(reports["sgam"].mma)
            },
            "pose_auc": {
                f"auc@{int(t)}": reports["sgam"].pose_auc.get(t, np.nan)
                - reports["bare"].pose_auc.get(t, np.nan)
                for t in sorted(reports["sgam"].pose_auc)
            },
        }
    _atomic_write_text(out / "report.json", _json_text(doc))
    write_report_csv(reports, out / "report.csv")
    print(f"evaluated {len(records)} pairs -> {out/'report.json'}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from PIL import Image

    from .semantics import save_semantic_map
    from .synth import FIXTURES, generate, render_fixture, scene_from_spec

    out = Path(args.out)
    if args.scene:
        try:
            scene = scene_from_spec(json.loads(Path(args.scene).read_text()))
        except (OSError, ValueError, KeyError) as e:
            raise ValidationFailure(f"bad scene spec: {e}") from e
        pair = generate(scene)
    else:
        if args.fixture not in FIXTURES:
            raise ValidationFailure(
                f"unknown fixture {args.fixture!r}; choose from {sorted(FIXTURES)}"
            )
        pair = render_fixture(args.fixture, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)

    def _png(path: Path, arr):
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{path.name}.")
        os.close(fd)
        Image.fromarray(arr).save(tmp, format="PNG")
        os.replace(tmp, path)

    _png(out / "rgb0.png", pair.rgb0)
    _png(out / "rgb1.png", pair.rgb1)
    save_semantic_map(pair.sem0, out / "sem0.png")
    save_semantic_map(pair.sem1, out / "sem1.png")
    for name, depth in (("depth0.npy", pair.depth0), ("depth1.npy", pair.depth1)):
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".npy")
        with os.fdopen(fd, "wb") as fh:
            np.save(fh, depth)
        os.replace(tmp, out / name)
    gt_doc = pair.gt.to_json_dict(depth0_path="depth0.npy", depth1_path="depth1.npy")
    _atomic_write_text(out / "gt.json", _json_text(gt_doc))
    print(f"wrote 7 files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgam",
        description="Semantic-guided area-to-point feature matching",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_match = sub.add_parser("match", help="match one image pair")
    p_match.add_argument("--pair", required=True, help="fixture directory")
    p_match.add_argument("--binary", action="store_true", help="also write matches.bin")
    p_match.add_argument("--overlay", action="store_true", help="write overlay.png")
    p_match.add_argument("--dump-areas", action="store_true", help="write areas.jsonl")
    p_match.add_argument("--dump-consistency", action="store_true",
                         help="write consistency.json")
    _add_common_flags(p_match)
    p_match.set_defaults(func=cmd_match)

    p_eval = sub.add_parser("eval", help="run the benchmark over a pair list")
    p_eval.add_argument("--pairs", required=True, help="JSON-lines pair list")
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--compare-bare", action="store_true",
                        help="also run the bare point matcher and report deltas")
    _add_common_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic fixture pair")
    p_synth.add_argument("--fixture", default="room6")
    p_synth.add_argument("--scene", help="scene-spec JSON file instead of a named fixture")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", type=Path, default=Path("."))
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ValidationFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except MatcherError as e:
        print(f"matcher failure: {e}", file=sys.stderr)
        return EXIT_MATCHER
    except SgamError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
