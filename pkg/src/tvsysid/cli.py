"""Command-line interface.

Verbs:

``run``
    Execute a Monte-Carlo study and write result files.
``report``
    Re-aggregate stored run records into summary/plot files.
``demo``
    Single-seed verbose trace with the hyper-parameter trajectories.
``validate``
    Run the built-in oracle battery.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .bench import (
    ConfigError,
    ExperimentConfig,
    emit_plot_data,
    load_records,
    run_experiment,
    run_single,
    write_summary,
)
from .validation import run_validation


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--runs", type=int, metavar="N", help="number of Monte-Carlo runs")
    p.add_argument("--methods", metavar="LIST", help="comma-separated method names")
    p.add_argument("--seed", type=int, metavar="N", help="base seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--parallelism", type=int, metavar="N", help="worker processes")
    p.add_argument("--checkpoints", metavar="LIST", help="comma-separated sample counts")


def _config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.runs is not None:
        overrides["n_runs"] = args.runs
    if args.methods is not None:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.parallelism is not None:
        overrides["parallelism"] = args.parallelism
    if args.checkpoints is not None:
        overrides["checkpoints"] = tuple(int(x) for x in args.checkpoints.split(","))
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    records = run_experiment(cfg)
    print(f"wrote {len(records)} run records and summaries to {cfg.output_dir}")
    return 0


def _cmd_report(args) -> int:
    cfg = _config_from_args(args)
    records = load_records(cfg.output_dir)
    write_summary(records, cfg.checkpoints, cfg.output_dir)
    emit_plot_data(records, cfg.checkpoints, cfg.output_dir)
    print(f"aggregated {len(records)} records into {cfg.output_dir}")
    return 0


def _cmd_demo(args) -> int:
    cfg = _config_from_args(args)
    if args.methods is None:
        cfg = dataclasses.replace(cfg, methods=("tc_ff", "tc_est_ff"))
    cfg = dataclasses.replace(cfg, n_runs=1)
    cfg.validate()
    seed = cfg.base_seed
    print(f"demo run, seed {seed}, methods: {', '.join(cfg.methods)}")
    rec = run_single(cfg, seed)
    for method in cfg.methods:
        print(f"\n== {method} ==")
        hypers = {k: (s, d, g) for k, s, d, g in rec.hypers.get(method, [])}
        for k, f in rec.fits[method]:
            line = f"  k={k:5d}  fit={f:8.3f}"
            if k in hypers:
                s, d, g = hypers[k]
                line += f"  scale={s:10.4g}  decay={d:8.6f}"
                if g is not None:
                    line += f"  forgetting={g:8.6f}"
            print(line)
        secs = rec.update_seconds[method]
        print(f"  cumulative update time: {secs:.3f} s (init {rec.init_seconds[method]:.3f} s)")
    return 0


def _cmd_validate(args) -> int:
    return 0 if run_validation(verbose=True) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvsysid",
        description="Online Bayesian identification of time-varying FIR systems: benchmark CLI",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, fn, desc in [
        ("run", _cmd_run, "execute a Monte-Carlo study"),
        ("report", _cmd_report, "aggregate stored run records"),
        ("demo", _cmd_demo, "single-seed verbose trace"),
        ("validate", _cmd_validate, "run the built-in oracle battery"),
    ]:
        p = sub.add_parser(verb, help=desc)
        if verb != "validate":
            _add_override_flags(p)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, FileNotFoundError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
