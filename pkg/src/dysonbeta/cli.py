"""Command-line entry point: ``dysonbeta <experiment> [--config F] [--seed N] [--threads N] [--out DIR]``."""
import argparse
import sys

from .config import ConfigError, parse_config
from .experiments import REGISTRY, RegistryError, run_experiment


def build_parser():
    ap = argparse.ArgumentParser(prog="dysonbeta", description="Run a named verification experiment.")
    ap.add_argument("experiment", nargs="?", help="experiment name; see --list")
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--seed", type=lambda s: int(s, 0), help="master seed (DYSONBETA_SEED overrides)")
    ap.add_argument("--threads", type=int, help="worker processes")
    ap.add_argument("--out", help="output directory (default: out/<experiment>)")
    ap.add_argument("--list", action="store_true", help="list experiment names and exit")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.list:
        print("\n".join(REGISTRY))
        return 0
    if not args.experiment:
        print("error: an experiment name is required; valid names: " + ", ".join(REGISTRY), file=sys.stderr)
        return 2
    try:
        text = ""
        if args.config:
            with open(args.config) as f:
                text = f.read()
        cfg = parse_config(text, experiment=args.experiment)
        if args.experiment not in REGISTRY:
            raise RegistryError(f"unknown experiment {args.experiment!r}; valid names: {', '.join(REGISTRY)}")
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads: must be >= 1")
            cfg.threads = args.threads
        cfg.out = args.out or cfg.out or f"out/{args.experiment}"
        report = run_experiment(cfg)
    except (ConfigError, RegistryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for line in report.summary_lines():
        print(line)
    print(f"{'PASS' if report.passed else 'FAIL'} {report.experiment} -> {cfg.out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
