"""Run a desk-scale benchmark grid and fit both cost equations.

    python3 scripts/run_desk_grid.py --out runs/desk --provider auto --clock timer

The grid varies algorithm, training-set size, feature count, data type and
one guardrail at a time, so every coefficient is identifiable. The run is
resumable: rerunning with the same ``--out`` skips cells already on disk.
"""

import argparse
import json
import logging
from pathlib import Path

from infercost.guardrails import GUARDRAILS
from infercost.measurement import (GridPlan, RecordSink, read_records, resolve_clock,
                                   resolve_provider, run_grid)
from infercost.model import evaluate, fit, split_records


def desk_plan(reps: int, warmup: int) -> GridPlan:
    guardrails = [{}] + [{name: level} for name in GUARDRAILS for level in (0.5, 1.0)]
    return GridPlan(algorithms=("SVM", "kNN", "RF", "NN"), n_values=(100, 300, 1000, 3000),
                    p_values=(8, 16), t_values=(0, 1, 2), guardrails=tuple(guardrails),
                    reps=reps, warmup=warmup)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--provider", default="auto")
    ap.add_argument("--clock", default="timer")
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--warmup", type=int, default=10)
    ap.add_argument("--limit", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    args.out.mkdir(parents=True, exist_ok=True)
    plan = desk_plan(args.reps, args.warmup)
    records_path = args.out / "records.csv"
    sink = RecordSink(records_path)
    provider = resolve_provider(args.provider)
    clock = resolve_clock(args.clock)
    print(f"{len(plan)} cells, {len(sink)} already done; provider={provider.tag} clock={clock}")

    def progress(index, total, cell):
        if index % 25 == 0:
            print(f"  cell {index + 1}/{total}")

    run_grid(plan, provider, sink, clock=clock, limit=args.limit, progress=progress)
    records = read_records(records_path)
    train, holdout = split_records(records, 0.25, seed=0)
    for target in ("latency", "energy"):
        eq = fit(train, target)
        (args.out / f"eq.{target}.json").write_text(eq.to_json())
        scores = evaluate(eq, holdout)
        print(f"\n{target}: r^2={eq.diagnostics['r_squared']:.4f} "
              f"holdout r^2={scores['r_squared_holdout']:.4f} sigma_eps={eq.sigma_eps:.4g}")
        print(json.dumps({k: round(v, 6) for k, v in eq.coefficients.items()}, indent=2))


if __name__ == "__main__":
    main()
