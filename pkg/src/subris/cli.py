"""Command-line front end: `subris run` executes an experiment sweep,
`subris validate` checks a config without running it."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness import ConfigError, PRESETS, default_config, load_config, run_experiment


def _build_parser():
    parser = argparse.ArgumentParser(prog="subris",
                                     description="Sub-connected active-RIS experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep")
    run.add_argument("--config", help="config file (key = value lines)")
    run.add_argument("--preset", choices=PRESETS,
                     help="built-in preset (desk scale) used when no config is given, "
                          "or to override the config's preset")
    run.add_argument("--scale", choices=("desk", "paper"), default="desk",
                     help="built-in preset scale (paper scale is slow)")
    run.add_argument("--trials", type=int, help="override trial count")
    run.add_argument("--seed", type=int, help="override master seed")
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--workers", type=int, help="worker processes")

    val = sub.add_parser("validate", help="validate a config file")
    val.add_argument("--config", required=True)
    return parser


def _load(args):
    if args.config:
        cfg = load_config(args.config)
        if getattr(args, "preset", None):
            cfg = replace(default_config(args.preset, args.scale),
                          trials=cfg.trials, seed=cfg.seed, workers=cfg.workers,
                          timing=cfg.timing)
    elif getattr(args, "preset", None):
        cfg = default_config(args.preset, args.scale)
    else:
        raise ConfigError("either --config or --preset is required")
    overrides = {}
    for key in ("trials", "seed", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"ok: preset={cfg.preset} sweep={cfg.sweep} "
                  f"architectures={cfg.architectures} trials={cfg.trials}")
            if cfg.M >= 128:
                print("note: paper-scale dimensions; runs will be slow")
            return 0
        cfg = _load(args)
        if cfg.M >= 128:
            print("note: paper-scale dimensions; runs will be slow", file=sys.stderr)
        n_errors = run_experiment(cfg, args.out)
        print(f"wrote {args.out}/results.csv and {args.out}/aggregate.csv")
        if n_errors:
            print(f"{n_errors} trial(s) raised errors", file=sys.stderr)
            return 1
        return 0
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
