"""Command-line interface.

Subcommands: ``localize`` (file-driven pipeline run), ``simulate`` (Monte
Carlo studies), ``score`` (re-score a results CSV against ground truth).
Exit codes: 0 success, 2 configuration or parse error, 3 no query localized.
"""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .dataset import load_dataset, parse_poses
from .errors import ConfigurationError, InsufficientDataError, MvlocError, ParseError
from .pipeline import (
    PipelineConfig,
    localize_run,
    read_results_csv,
    score_run,
    write_report_json,
    write_results_csv,
)
from .simulate import (
    SceneConfig,
    run_averaging_ablation,
    run_k_sweep,
    run_noise_study,
    write_study_csv,
    write_study_json,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_POSE = 3


def _load_json_config(path):
    if path is None:
        return {}
    try:
        with open(path) as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must hold a JSON object")
    return raw


def _cmd_localize(args):
    raw = _load_json_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.top_k is not None:
        raw["top_k"] = args.top_k
    config = PipelineConfig.from_dict(raw)

    dataset = load_dataset(args.manifest)
    results, failures = localize_run(dataset, config)

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(out_dir / "queries.csv", results, failures)

    report = {
        "config": asdict(config),
        "n_queries": len(results) + len(failures),
        "n_localized": len(results),
        "n_failed": len(failures),
        "failures": [
            {"query_id": f.query_id, "reason": f.reason}
            for f in sorted(failures, key=lambda f: f.query_id)
        ],
    }
    if results and dataset.ground_truth is not None:
        report["score"] = score_run(results, dataset.ground_truth, n_unlocalized=len(failures))
    write_report_json(out_dir / "report.json", report)

    print(
        f"localized {len(results)}/{len(results) + len(failures)} queries; "
        f"results in {out_dir}"
    )
    return EXIT_NO_POSE if not results else EXIT_OK


def _scene_config(raw):
    scene_raw = raw.get("scene", {})
    known = set(SceneConfig.__dataclass_fields__)
    unknown = set(scene_raw) - known
    if unknown:
        raise ConfigurationError(f"unknown scene keys: {sorted(unknown)}")
    try:
        return SceneConfig(**scene_raw) if scene_raw else None
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None


def _cmd_simulate(args):
    raw = _load_json_config(args.config)
    known = {"scene", "sigmas_deg", "sigma_deg", "sigma_feat", "k_values", "trials"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    scene = _scene_config(raw)
    trials = args.trials if args.trials is not None else raw.get("trials")

    if args.study == "noise":
        result = run_noise_study(
            scene_config=scene if scene else None,
            noise_grid=raw.get("sigmas_deg", (1.0, 2.0, 5.0, 10.0)),
            trials=trials if trials is not None else 100,
            seed=args.seed,
        )
    elif args.study == "ksweep":
        if scene is None and "k_values" in raw:
            scene = SceneConfig(n_anchors=max(int(k) for k in raw["k_values"]), layout="line")
        result = run_k_sweep(
            scene_config=scene,
            k_values=raw.get("k_values", (2, 5, 10, 25, 50)),
            sigma_feat=raw.get("sigma_feat", 1e-3),
            trials=trials if trials is not None else 20,
            seed=args.seed,
        )
    else:
        result = run_averaging_ablation(
            scene_config=scene if scene else None,
            noise=raw.get("sigma_deg", 5.0),
            trials=trials if trials is not None else 100,
            seed=args.seed,
        )

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_study_csv(result, out_dir / f"{result.name}.csv")
    write_study_json(result, out_dir / f"{result.name}.json")
    print(f"{result.name}: {len(result.rows)} rows; results in {out_dir}")
    return EXIT_OK


def _cmd_score(args):
    results, n_failed = read_results_csv(args.results)
    ground_truth = parse_poses(args.ground_truth)
    try:
        report = score_run(results, ground_truth, n_unlocalized=n_failed)
    except InsufficientDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_POSE
    if args.output:
        write_report_json(args.output, report)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mvloc",
        description="Multiview camera localization from anchor databases.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_loc = sub.add_parser("localize", help="run the localization pipeline on a dataset")
    p_loc.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p_loc.add_argument("--output-dir", required=True, help="directory for queries.csv and report.json")
    p_loc.add_argument("--config", help="pipeline config JSON (flat keys)")
    p_loc.add_argument("--seed", type=int, default=None, help="run seed (default 0)")
    p_loc.add_argument("--top-k", type=int, default=None, help="retrieval depth per query")
    p_loc.set_defaults(func=_cmd_localize)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo study on synthetic scenes")
    p_sim.add_argument("study", choices=("noise", "ksweep", "ablation"))
    p_sim.add_argument("--output-dir", required=True)
    p_sim.add_argument("--config", help="study config JSON")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--trials", type=int, default=None)
    p_sim.set_defaults(func=_cmd_simulate)

    p_score = sub.add_parser("score", help="score a results CSV against ground truth")
    p_score.add_argument("--results", required=True, help="queries.csv from a localize run")
    p_score.add_argument("--ground-truth", required=True, help="poses file")
    p_score.add_argument("--output", help="write the report JSON here instead of stdout")
    p_score.set_defaults(func=_cmd_score)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MvlocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
