"""Latency versus energy across a records CSV.

Prints the Pearson correlation per algorithm and overall, plus the fitted
log-log slope, and optionally writes the scatter pairs for plotting.

    python3 scripts/latency_energy_correlation.py runs/desk/records.csv --scatter pairs.csv
"""

import argparse
import statistics
from collections import defaultdict

import numpy as np

from infercost.measurement import read_records


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("records")
    ap.add_argument("--scatter", help="CSV of (algo, latency_ms, energy_mj) pairs")
    args = ap.parse_args()

    records = read_records(args.records)
    if len(records) < 3:
        raise SystemExit("need at least three records")
    groups = defaultdict(list)
    for r in records:
        groups[r.algorithm.value].append(r)
    groups["all"] = records
    for name, rs in groups.items():
        lat = np.array([r.latency_ms for r in rs])
        en = np.array([r.energy_mj for r in rs])
        if len(rs) < 3 or lat.std() == 0 or en.std() == 0:
            print(f"{name:5s} n={len(rs):4d}  correlation undefined")
            continue
        r = statistics.correlation(lat.tolist(), en.tolist())
        slope = np.polyfit(np.log(lat), np.log(np.maximum(en, 1e-300)), 1)[0]
        print(f"{name:5s} n={len(rs):4d}  pearson={r:.4f}  log-log slope={slope:.3f}")
    if args.scatter:
        with open(args.scatter, "w") as fh:
            fh.write("algo,latency_ms,energy_mj\n")
            for r in records:
                fh.write(f"{r.algorithm.value},{r.latency_ms!r},{r.energy_mj!r}\n")


if __name__ == "__main__":
    main()
