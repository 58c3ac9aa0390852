"""Command-line entry point: ``gossip-langevin <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import GossipLangevinError

log = logging.getLogger("gossip_langevin")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="config JSON, run manifest, or preset:NAME")
    p.add_argument("--out", required=True, type=Path, help="output directory (or .csv file for curves)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--strict", action="store_true", default=None, help="refuse parameters outside the guaranteed range")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gossip-langevin", description="Decentralized Langevin samplers over gossip networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a sampler and write traces, curves and a manifest")
    _common(p)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes for replicas")

    p = sub.add_parser("bounds", help="write the convergence-bound curve with its term breakdown")
    _common(p)
    p.add_argument("--k-grid", default=None, help="start:stop:step or comma list (default: every recorded k)")
    p.add_argument("--traces", type=Path, default=None, help="simulate output with momenta, used to estimate c5")

    p = sub.add_parser("wasserstein", help="W2 curve of stored traces against a Gaussian target")
    p.add_argument("--traces", required=True, type=Path, help="simulate output directory")
    p.add_argument("--target", default="posterior", help="'posterior' or a JSON file with mean and cov")
    p.add_argument("--subject", default="average", help="'average' or 'agent:<i>'")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("dataset-prepare", help="normalize a CSV and persist a train/test partition")
    p.add_argument("--csv", required=True, type=Path)
    p.add_argument("--schema", required=True, help=f"one of {sorted(harness.datasets.SCHEMAS)} or a JSON file")
    p.add_argument("--test-fraction", type=float, default=0.0)
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--out", required=True, type=Path)

    sub.add_parser("presets", help="list shipped presets")
    return parser


def _dispatch(args) -> None:
    if args.command == "simulate":
        cfg = harness.load_config(args.config)
        m = harness.simulate(cfg, args.out, jobs=max(1, args.jobs), seed=args.seed, strict=args.strict)
        print(f"wrote {m['n_replicas']} replica traces to {args.out} in {m['wall_clock_seconds']:.1f}s")
    elif args.command == "bounds":
        cfg = harness.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        path = harness.bounds(cfg, args.out, args.k_grid, args.traces)
        print(f"wrote {path}")
    elif args.command == "wasserstein":
        path = harness.wasserstein(args.traces, args.target, args.subject, args.out)
        print(f"wrote {path}")
    elif args.command == "dataset-prepare":
        meta = harness.dataset_prepare(
            args.csv, args.schema, args.test_fraction, args.agents, args.seed, args.out, not args.no_standardize
        )
        print(f"train {meta['train_size']} / test {meta['test_size']}; shard sizes {meta['shard_sizes']}")
    else:
        for name in sorted(harness.PRESETS):
            print(name)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            _dispatch(args)
    except GossipLangevinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
