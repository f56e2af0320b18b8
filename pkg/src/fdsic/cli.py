"""Command-line entry point: ``fdsic {generate,tune,run,count,report}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import harness, metrics
from .adapt import TuningError
from .baseband import ConfigError
from .hwmodel import save_dataset


def _csv_list(text: str, conv=str) -> list:
    return [conv(v.strip()) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config (every field optional)")
    common.add_argument("--seeds", type=int, help="number of seeds, tuning seeds included")
    common.add_argument("--betas", help="comma-separated AR(1) coefficients")
    common.add_argument("--methods", help=f"comma-separated subset of {','.join(harness.METHODS)}, or 'all'")
    common.add_argument("--out", type=Path, help=f"output directory (default ${harness.OUT_ENV} or ./results)")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--quick", action="store_true", help="reduced preset: 10 seeds, 2 tuning seeds")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fdsic", description="Tracking / complexity study of digital SI cancelers.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write the datasets as CSV")
    sub.add_parser("tune", parents=[common], help="hyperparameter search only; writes tuned.json")
    sub.add_parser("run", parents=[common], help="full sweep (reuses tuned.json when present)")
    sub.add_parser("count", parents=[common], help="per-sample operation counts (Table 1 layout)")
    sub.add_parser("report", parents=[common], help="re-aggregate an existing runs.csv")
    return p


def config_from_args(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    if args.quick:
        cfg = harness.quick_config(cfg)
    if args.seeds is not None:
        cfg.n_seeds = args.seeds
        cfg.n_tuning_seeds = min(cfg.n_tuning_seeds, max(args.seeds - 1, 0))
    if args.betas:
        cfg.betas = _csv_list(args.betas, float)
    if args.methods and args.methods != "all":
        cfg.methods = _csv_list(args.methods)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.out is not None:
        cfg.out_dir = str(args.out)
    elif os.environ.get(harness.OUT_ENV):
        cfg.out_dir = os.environ[harness.OUT_ENV]
    cfg.validate()
    return cfg


def _generate(cfg):
    out = Path(cfg.out_dir) / "datasets"
    out.mkdir(parents=True, exist_ok=True)
    for beta in cfg.betas:
        for seed in cfg.seeds:
            path, _ = save_dataset(harness.make_dataset(cfg, seed, beta), out / f"seed{seed:03d}_beta{beta:g}.csv")
    print(f"wrote {len(cfg.betas) * len(cfg.seeds)} datasets to {out}")


def _tune(cfg):
    chosen = harness.tune(cfg)
    path = harness.save_tuned(cfg, chosen)
    for m, per_beta in chosen.items():
        print(m + ": " + ", ".join(f"beta={b:g} -> {v:.6g}" for b, v in per_beta.items()))
    print(f"wrote {path}")


def _run(cfg):
    chosen = harness.load_tuned(cfg)
    if chosen is None:
        chosen = harness.tune(cfg)
        harness.save_tuned(cfg, chosen)
    summary, results = harness.run_sweep(cfg, chosen)
    out = harness.emit_results(summary, results, cfg.out_dir)
    _print_summary(summary)
    if summary.diverged_runs:
        print(f"{len(summary.diverged_runs)} diverged run(s) recorded as -inf dB")
    print(f"wrote results to {out}")


def _count(cfg):
    reports = {m: metrics.count_ops_instrumented(m, cfg.hw.memory_len, cfg.hw.nonlin_order) for m in cfg.methods}
    sys.stdout.write(metrics.reports_to_csv(reports))
    if (cfg.hw.memory_len, cfg.hw.nonlin_order) == (3, 5):
        for line in metrics.convention_diff(reports, tolerance=0.0):
            print("# " + line)


def _report(cfg):
    summary = harness.report(cfg.out_dir)
    _print_summary(summary)


def _print_summary(summary):
    print(f"{'method':<11} {'over':>6} {'static':>8} {'dynamic':>8} {'+-':>6} {'drop':>7} {'hyper':>10} {'div':>4}")
    for r in summary.rows:
        print(f"{r.method:<11} {r.oversampling:>6} {r.mean_static_db:8.2f} {r.mean_dynamic_db:8.2f} "
              f"{r.std_dynamic_db:6.2f} {r.mean_drop_db:7.2f} {r.hyperparam:10.4g} {r.n_diverged:>4}")


COMMANDS = {"generate": _generate, "tune": _tune, "run": _run, "count": _count, "report": _report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command](cfg)
    except (ValueError, ConfigError, TuningError, OSError) as e:
        print(f"fdsic {args.command}: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
