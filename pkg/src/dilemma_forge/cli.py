"""Command-line entry point: run / compare / plot / validate.

Exit codes: 0 success, 2 configuration error (including refusals), 3 runtime
error.  All randomness flows from the config's seeds; trials across seeds can
run in parallel processes (--jobs, or the DILEMMA_FORGE_JOBS env var).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, config as config_mod, harness, plots
from .errors import ConfigurationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dilemma-forge",
        description="Social-dilemma incentive-learning lab with manipulation strategies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run all seeds of an experiment config")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--force", action="store_true",
                     help="allow writing into an existing non-empty directory")
    run.add_argument("--override", action="append", default=[], metavar="K=V",
                     help="override a config field, e.g. seeds=[1,2]")
    run.add_argument("--jobs", type=int, default=None,
                     help="parallel trials (default: DILEMMA_FORGE_JOBS or 1)")

    compare = sub.add_parser("compare", help="compare a baseline run with an attack run")
    compare.add_argument("baseline_dir")
    compare.add_argument("attack_dir")
    compare.add_argument("--out", default=None,
                         help="directory for the report (default: attack_dir)")

    plot = sub.add_parser("plot", help="render SVG curves from a finished run")
    plot.add_argument("run_dir")
    plot.add_argument("--metric", required=True)
    plot.add_argument("--out", default=None,
                      help="directory for SVGs (default: run_dir)")
    plot.add_argument("--smooth", type=int, default=None,
                      help="display smoothing window (default: from the run config)")

    validate = sub.add_parser("validate", help="validate a config without running")
    validate.add_argument("--config", required=True)
    return parser


def _jobs(args_jobs: int | None) -> int:
    if args_jobs is not None:
        return max(1, args_jobs)
    env = os.environ.get("DILEMMA_FORGE_JOBS")
    return max(1, int(env)) if env else 1


def _run_one(payload: tuple) -> harness.RunRecord:
    cfg, seed = payload
    return harness.run_trial(cfg, seed)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = config_mod.load_config(args.config, args.override)
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise ConfigurationError(
            f"output directory {out_dir} exists and is not empty (use --force)"
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.time()
    jobs = _jobs(args.jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, [(cfg, s) for s in cfg.seeds]))
    else:
        records = [harness.run_trial(cfg, seed) for seed in cfg.seeds]
    for record in records:
        harness.write_record(out_dir, record)
        if cfg.checkpoint_every > 0:
            pass  # checkpoints are written inside run_trial when given a dir
    summary = harness.aggregate(
        records, cfg.convergence_window, cfg.convergence_threshold
    )
    harness.write_summary(out_dir, summary)
    manifest = {
        "config": config_mod.config_to_dict(cfg),
        "config_hash": config_mod.config_hash(cfg),
        "code_version": __version__,
        "wall_time_seconds": time.time() - start,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(records)} trials to {out_dir}")
    print(f"median convergence episode: {summary.median_convergence}")
    print(f"final-window mean success: {summary.final_success_mean:.3f}")
    return EXIT_OK


def _load_run(run_dir: Path) -> tuple[dict, dict, dict[int, dict[str, np.ndarray]]]:
    manifest_path = run_dir / "manifest.json"
    summary_path = run_dir / "summary.json"
    if not manifest_path.exists() or not summary_path.exists():
        raise ConfigurationError(f"{run_dir} is not a finished run directory")
    manifest = json.loads(manifest_path.read_text())
    summary = json.loads(summary_path.read_text())
    return manifest, summary, harness.load_episode_series(run_dir)


def _fmt_conv(value) -> str:
    return "none" if value in (None, "none") else str(value)


def cmd_compare(args: argparse.Namespace) -> int:
    base_dir, attack_dir = Path(args.baseline_dir), Path(args.attack_dir)
    base_manifest, base_summary, base_series = _load_run(base_dir)
    attack_manifest, attack_summary, attack_series = _load_run(attack_dir)
    if base_manifest["config"]["game"] != attack_manifest["config"]["game"]:
        raise ConfigurationError(
            "refusing to compare runs over different games: "
            f"{base_manifest['config']['game']} vs {attack_manifest['config']['game']}"
        )
    out_dir = Path(args.out) if args.out else attack_dir

    rows = [
        ("median_convergence", _fmt_conv(base_summary["median_convergence"]),
         _fmt_conv(attack_summary["median_convergence"])),
        ("final_success_mean", f"{base_summary['final_success_mean']:.4f}",
         f"{attack_summary['final_success_mean']:.4f}"),
    ]
    base_final = np.array(base_summary["final_total_returns"]).mean(axis=0)
    attack_final = np.array(attack_summary["final_total_returns"]).mean(axis=0)
    for i, (b, a) in enumerate(zip(base_final, attack_final)):
        rows.append((f"final_total_return_agent{i}", f"{b:.4f}", f"{a:.4f}"))

    out_dir.mkdir(parents=True, exist_ok=True)
    report = out_dir / "comparison.csv"
    with report.open("w") as fh:
        fh.write("metric,baseline,attack,delta\n")
        print(f"{'metric':<32}{'baseline':>14}{'attack':>14}")
        for name, b, a in rows:
            try:
                delta = f"{float(a) - float(b):.4f}"
            except ValueError:
                delta = f"{b} vs {a}"
            fh.write(f"{name},{b},{a},{delta}\n")
            print(f"{name:<32}{b:>14}{a:>14}")
    for metric in ("success", "total_return"):
        plots.plot_metric(
            {
                "baseline": plots.metric_series(base_series, metric),
                "attack": plots.metric_series(attack_series, metric),
            },
            metric,
            out_dir / f"compare_{plots.METRIC_FILES[metric]}",
            smoothing_window=base_manifest["config"].get("smoothing_window", 1),
        )
    print(f"report written to {report}")
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if args.metric not in plots.METRIC_FILES:
        raise ConfigurationError(
            f"unknown metric {args.metric!r}; valid metrics: "
            f"{sorted(plots.METRIC_FILES)}"
        )
    manifest, _, series = _load_run(run_dir)
    if not series:
        raise ConfigurationError(f"{run_dir} contains no episode records")
    out_dir = Path(args.out) if args.out else run_dir
    window = (
        args.smooth if args.smooth is not None
        else manifest["config"].get("smoothing_window", 1)
    )
    path = plots.plot_metric(
        {"run": plots.metric_series(series, args.metric)},
        args.metric,
        out_dir / plots.METRIC_FILES[args.metric],
        smoothing_window=window,
    )
    print(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = config_mod.load_config(args.config)
    print(f"config OK: hash {config_mod.config_hash(cfg)}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "compare": cmd_compare,
        "plot": cmd_plot,
        "validate": cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
