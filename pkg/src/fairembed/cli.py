"""Command-line front end.

Verbs: gen-data, train, eval, study, sweep, grid, report.
Exit codes: 0 success, 2 configuration error, 3 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .experiments import (
    ConfigError,
    cli_eval,
    cli_gen_data,
    cli_train,
    emit_report,
    parse_config,
    run_experiment,
    run_grid,
    run_study,
    run_sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3


def _parse_floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairembed",
        description="Fairness workbench for metric embeddings")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_text in (
        ("gen-data", "generate the configured dataset as CSV"),
        ("train", "train upstream models; dump checkpoints and embeddings"),
        ("eval", "metrics and gaps for a precomputed embedding dump"),
        ("study", "balanced-vs-imbalanced gap study"),
        ("sweep", "imbalance sweep over retention levels"),
        ("grid", "alpha/rho grid for the de-correlation trainer"),
        ("report", "re-emit report files from an existing aggregate"),
    ):
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("--config", required=(verb != "report"), help="config file path")
        p.add_argument("--seeds", help="override seed list, e.g. 0..9 or 0,3,5")
        p.add_argument("--out", help="output directory (default from config)")
        p.add_argument("--format", default="csv,json,svg",
                       help="report formats: any of csv,json,svg")
        if verb == "sweep":
            p.add_argument("--retentions", default="0.5,0.4,0.3,0.2,0.1",
                           help="comma-separated retention fractions")
        if verb == "grid":
            p.add_argument("--alphas", default="0.1,0.3,0.5,0.7,0.9")
            p.add_argument("--rhos", default="1,10,100,500,1000,1500,3000")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "report":
            out_dir = args.out
            if not out_dir:
                raise ConfigError("report", "--out is required for report")
            agg_path = os.path.join(out_dir, "aggregate.json")
            if not os.path.exists(agg_path):
                raise ConfigError(agg_path, "aggregate.json not found")
            with open(agg_path, encoding="utf-8") as fh:
                aggregate = json.load(fh)
            written = emit_report(aggregate, out_dir,
                                  formats=tuple(args.format.split(",")))
            for path in written:
                print(path)
            return EXIT_OK

        overrides = {}
        if args.seeds:
            overrides["seeds"] = args.seeds
        if args.out:
            overrides["out"] = args.out
        cfg = parse_config(args.config, overrides)
        out_dir = cfg.out
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.verb == "gen-data":
            print(cli_gen_data(cfg, out_dir))
        elif args.verb == "train":
            written = cli_train(cfg, out_dir)
            for seed, files in written.items():
                print(f"seed {seed}: {files['checkpoint']} {files['embeddings']}")
        elif args.verb == "eval":
            result = cli_eval(cfg, out_dir)
            for metric, entry in result.items():
                print(f"{metric}: overall={entry['overall']:.4f} gap={entry['gap']:.4f}")
        elif args.verb == "study":
            aggregate = run_study(cfg, out_dir)
            emit_report(aggregate, out_dir, formats=tuple(args.format.split(",")))
            print(os.path.join(out_dir, "aggregate.json"))
        elif args.verb == "sweep":
            summary = run_sweep(cfg, retentions=_parse_floats(args.retentions),
                                out_dir=out_dir)
            print(os.path.join(out_dir, "sweep.json"))
            for label, flagged in sorted(summary["monotonicity_flags"].items()):
                if flagged:
                    print(f"warning: non-monotone gap trend for {label}")
        elif args.verb == "grid":
            summary = run_grid(cfg, alphas=_parse_floats(args.alphas),
                               rhos=_parse_floats(args.rhos), out_dir=out_dir)
            sel = summary["selected"]
            print(f"selected alpha_sa={sel['alpha_sa']} rho={sel['rho']}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - pipeline failures map to exit 3
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
