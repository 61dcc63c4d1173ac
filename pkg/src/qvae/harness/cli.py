"""Command-line entry point: ``qvae <subcommand> --config PATH --out DIR``.

Exit status is 0 on success and 1 when any trial or check failed, unless
``--keep-going`` is given. Configuration errors exit with status 2.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from ..errors import ConfigError, FormatError
from . import gradcheck, runner
from .config import config_from_text, load_config

SUBCOMMANDS = {
    "gen-data": "gen_data",
    "train-mnist": "mnist_train",
    "sweep": "mnist_sweep",
    "train-dynamics": "dynamics_train",
    "eval-dynamics": "dynamics_eval",
    "grad-check": "grad_check",
    "divergence-check": "divergence_check",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="qvae", description="q-VAE experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--out", default="runs", help="output directory")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--parallel", type=int, help="concurrent trials")
        p.add_argument("--keep-going", action="store_true",
                       help="exit 0 even if some trials fail")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args):
    kind = SUBCOMMANDS[args.command]
    if args.config:
        cfg = load_config(args.config)
        if cfg.kind != kind:
            cfg = replace(cfg, kind=kind)
    else:
        cfg = config_from_text(f"[experiment]\nkind = {kind}\n")
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.parallel is not None:
        overrides["parallel"] = args.parallel
    if any(v < 1 for k, v in overrides.items() if k != "base_seed"):
        raise ConfigError("--trials and --parallel must be positive")
    return replace(cfg, **overrides) if overrides else cfg


def dispatch(cfg, out):
    """Run the experiment named by ``cfg.kind``; returns the number of failures."""
    if cfg.kind == "gen_data":
        res = runner.gen_data(cfg, out)
    elif cfg.kind == "mnist_train":
        res = runner.run_training(cfg, out)
    elif cfg.kind == "mnist_sweep":
        res = runner.run_sweep(cfg, out)
    elif cfg.kind == "dynamics_train":
        res = runner.run_dynamics_experiment(cfg, out)
    elif cfg.kind == "dynamics_eval":
        res = runner.eval_dynamics(cfg, out)
    elif cfg.kind == "divergence_check":
        res = runner.divergence_check(cfg, out)
    elif cfg.kind == "grad_check":
        results, control, path = gradcheck.grad_check(out, seed=cfg.base_seed)
        for r in results:
            print(f"{r.component:24s} {r.relative_error:.3e} {'ok' if r.passed else 'FAIL'}")
        print(f"{'negative control':24s} {control.relative_error:.3e} "
              f"{'detected' if not control.passed else 'MISSED'}")
        return sum(not r.passed for r in results) + int(control.passed)
    else:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}")
    for name, path in res.paths.items():
        print(f"{name}: {path}")
    return res.failures


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        failures = dispatch(cfg, args.out)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if failures:
        print(f"{failures} failure(s)", file=sys.stderr)
        return 0 if args.keep_going else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
