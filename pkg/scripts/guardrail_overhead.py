"""Marginal cost of each guardrail as its intensity grows.

For every family and guardrail, prints the closed-form operation count,
cost-model energy and (optionally) timed median latency at a sweep of
intensities, relative to the unguarded inference.

    python3 scripts/guardrail_overhead.py --timed
"""

import argparse

from infercost.classifiers import ALGORITHMS, train
from infercost.datasets import generate
from infercost.guardrails import GUARDRAILS, OFF, GuardrailConfig, guarded_ops
from infercost.measurement import BenchTask, CostModelProvider, measure_interleaved

LEVELS = (0.1, 0.25, 0.5, 0.75, 1.0)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--p", type=int, default=10)
    ap.add_argument("--timed", action="store_true", help="also time each configuration")
    ap.add_argument("--reps", type=int, default=100)
    args = ap.parse_args()

    data = generate(args.n, args.p, 0, 3.0, seed=0)
    queries = generate(32, args.p, 0, 3.0, seed=1)
    energy = CostModelProvider()
    for kind in ALGORITHMS:
        model = train(kind, data, seed=0)
        base = energy.energy_nj(guarded_ops(model, OFF))
        print(f"\n{kind.value}: bare inference {base:.0f} nJ")
        for name in GUARDRAILS:
            configs = [GuardrailConfig.single(name, x) for x in LEVELS]
            ratios = [energy.energy_nj(guarded_ops(model, c)) / base for c in configs]
            line = f"  {name:8s} energy x" + " ".join(f"{r:8.2f}" for r in ratios)
            if args.timed:
                tasks = [BenchTask(model, queries.samples, queries.protected, c, seed=0)
                         for c in (OFF, *configs)]
                off, *on = measure_interleaved(tasks, warmup=10, reps=args.reps)
                line += "  | latency x" + " ".join(
                    f"{s.median_ms / off.median_ms:6.2f}" for s in on)
            print(line)
    print(f"\nintensities: {list(LEVELS)}")


if __name__ == "__main__":
    main()
