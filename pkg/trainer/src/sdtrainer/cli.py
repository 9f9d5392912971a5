"""Training entry point: consume a solver export, emit run artifacts."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .model import NetworkSpec
from .training import Divergence, load_export, train


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sdtrainer",
        description="Structure-guided network training for dominance-constrained quantiles",
    )
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train")
    t.add_argument("--export", required=True, help="solver export JSON")
    t.add_argument("--mode", choices=("piecewise", "monolithic"), default="piecewise")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="train-out")
    t.add_argument("--steps", type=int, default=20_000)
    t.add_argument("--samples", type=int, default=2048)
    t.add_argument("--width", type=int, default=256)
    t.add_argument("--hidden-layers", type=int, default=8)
    t.add_argument("--learning-rate", type=float, default=1e-3)
    t.add_argument("--w1", type=float, default=10.0)
    t.add_argument("--w2", type=float, default=100.0)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    export = load_export(args.export)
    spec = NetworkSpec(
        mode=args.mode,
        hidden_layers=args.hidden_layers,
        width=args.width,
        learning_rate=args.learning_rate,
        samples=args.samples,
        max_steps=args.steps,
        w1=args.w1,
        w2=args.w2,
    )
    try:
        run = train(spec, export, seed=args.seed)
    except Divergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.json", "w") as fh:
        json.dump(run.summary(), fh, indent=2, sort_keys=True)
    with open(out / "trajectory.csv", "w") as fh:
        fh.write("step,objective,penalty_budget,penalty_dominance,total\n")
        for rec in run.steps:
            fh.write(
                f"{rec['step']},{rec['objective']:.10g},{rec['penalty_budget']:.10g},"
                f"{rec['penalty_dominance']:.10g},{rec['total']:.10g}\n"
            )
    with open(out / "quantile.csv", "w") as fh:
        fh.write("rank,value\n")
        for r, v in zip(run.eval_ranks, run.eval_quantile):
            fh.write(f"{r:.10g},{v:.10g}\n")
    print(json.dumps(run.summary(), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
