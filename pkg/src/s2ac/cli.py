"""Command line entry point: ``s2ac <subcommand> [--config PATH | --preset NAME] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import sys

from . import config as config_mod
from . import experiments
from .agent import NumericAbortError
from .core import OracleFailureError
from .entropy import NonInvertibleStepError
from .samplers import DivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

RUNNERS = {
    "entropy-eval": experiments.run_entropy_eval,
    "train-multigoal": experiments.run_train_multigoal,
    "eval-multigoal": experiments.run_eval_multigoal,
    "robustness": experiments.run_robustness,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2ac", description="Entropy-tracked SVGD actor-critic experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="TOML experiment config")
        src.add_argument("--preset", choices=config_mod.PRESETS)
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", metavar="DIR", help="override the output directory")
    return parser


def resolve(args) -> config_mod.ExperimentConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.preset(args.preset)
    if cfg.kind != args.command:
        if args.preset and args.command in ("eval-multigoal", "robustness") and cfg.kind == "train-multigoal":
            raw = cfg.to_dict()
            raw["train"].setdefault("checkpoint", cfg.out)
            raw.update(kind=args.command, out=f"{cfg.out}/{args.command}")
            cfg = config_mod.from_dict(raw)
        else:
            raise config_mod.ConfigError(f"config describes a {cfg.kind!r} experiment, not {args.command!r}")
    if args.seed is not None:
        if args.seed < 0:
            raise config_mod.ConfigError("--seed must be non-negative")
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        RUNNERS[args.command](cfg)
    except config_mod.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericAbortError, DivergenceError, NonInvertibleStepError, OracleFailureError, FloatingPointError) as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
