"""Command line entry point: ``mflab run | list | check``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError
from .experiments import REGISTRY, run_experiment
from .models import model_from_config
from .results import write_table
from .svg import write_chart

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="mflab", description="McKean-Vlasov simulation and verification experiments")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", type=Path, default=None, help="output directory (default: config 'out' or ./results)")
    run.add_argument("--no-plots", action="store_true", help="skip SVG output")
    sub.add_parser("list", help="list the registered experiments")
    chk = sub.add_parser("check", help="validate a config without running it")
    chk.add_argument("config", type=Path)
    return p


def _validate(cfg):
    if cfg.get("model") is not None:
        model_from_config(cfg)


def cmd_run(args, out=None, err=None):
    out, err = out or sys.stdout, err or sys.stderr
    try:
        cfg = load_config(args.config, REGISTRY)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be a 64-bit unsigned integer")
            cfg.seed = args.seed
        if args.no_plots:
            cfg.plots = False
        _validate(cfg)
        table = run_experiment(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    out_dir = args.out if args.out is not None else Path(cfg.out)
    try:
        paths = write_table(table, out_dir)
        if cfg.plots and table.rows:
            paths += [write_chart(ch, out_dir) for ch in table.plots]
    except OSError as exc:
        print(f"I/O error: {exc}", file=err)
        return EXIT_IO
    for c in table.checks:
        print(c.line(), file=out)
    for p in paths:
        print(f"wrote {p}", file=out)
    if table.status != "ok":
        print(f"diverged: {table.meta.get('error', {}).get('message')}", file=err)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_list(out=None):
    out = out or sys.stdout
    width = max(len(n) for n in REGISTRY)
    for name, exp in REGISTRY.items():
        print(f"{name:<{width}}  {exp.claim}", file=out)
    return EXIT_OK


def cmd_check(args, out=None, err=None):
    out, err = out or sys.stdout, err or sys.stderr
    try:
        cfg = load_config(args.config, REGISTRY)
        _validate(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    print(f"ok: {cfg.experiment} ({len(cfg.params)} parameters, seed {cfg.seed})", file=out)
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "list":
        return cmd_list()
    return cmd_check(args)


if __name__ == "__main__":
    sys.exit(main())
