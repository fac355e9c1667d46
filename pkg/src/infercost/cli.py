"""Command-line interface: ``infercost {gen,bench,fit,predict,report}``.

Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import statistics
import sys
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from infercost import datasets
from infercost._io import atomic_write_text
from infercost.guardrails import GUARDRAILS, GuardrailConfig
from infercost.measurement import (
    CLOCKS, PROVIDER_NAMES, EnergyUnavailable, GridPlan, RecordSink, read_records,
    resolve_clock, resolve_provider, run_grid,
)
from infercost.model import (
    TARGETS, FittedEquation, PredictorInputs, RankDeficientError, UnderdeterminedError,
    design_row, fit, predict,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("infercost")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class RunConfig:
    plan: GridPlan
    energy_provider: str = "auto"
    clock: str = "timer"
    output: Path = Path("records.csv")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        provider = doc.pop("energy_provider", "auto")
        clock = doc.pop("clock", "timer")
        output = Path(doc.pop("output", "records.csv"))
        if "guardrail_constants" in doc:
            doc["constants"] = doc.pop("guardrail_constants")
        try:
            plan = GridPlan.from_dict(doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid grid: {exc}") from exc
        return cls(plan=plan, energy_provider=provider, clock=clock, output=output)

    def validate(self) -> None:
        if self.energy_provider not in PROVIDER_NAMES:
            raise ConfigError(f"unknown energy provider {self.energy_provider!r}; "
                              f"expected one of {', '.join(PROVIDER_NAMES)}")
        if self.clock not in CLOCKS:
            raise ConfigError(f"unknown clock {self.clock!r}; expected one of {', '.join(CLOCKS)}")
        parent = self.output.resolve().parent
        probe = parent
        while not probe.exists():
            probe = probe.parent
        if not os.access(probe, os.W_OK):
            raise ConfigError(f"output location {parent} is not writable")
        if self.output.exists() and not os.access(self.output, os.W_OK):
            raise ConfigError(f"output file {self.output} is not writable")


# --------------------------------------------------------------------------
# commands

def cmd_gen(args) -> int:
    ds = datasets.generate(args.n, args.p, args.t, args.separation, args.seed)
    csv_path, meta_path = datasets.write_csv(ds, args.out)
    print(f"wrote {csv_path} and {meta_path}")
    return EXIT_OK


def _load_run_config(args) -> RunConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {
        "output": args.out, "energy_provider": args.energy_provider, "clock": args.clock,
        "reps": args.reps, "warmup": args.warmup,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig.from_dict(doc)
    cfg.validate()
    return cfg


def cmd_bench(args) -> int:
    cfg = _load_run_config(args)
    try:
        clock = resolve_clock(cfg.clock)
        provider = resolve_provider(cfg.energy_provider)
    except EnergyUnavailable as exc:
        raise ConfigError(str(exc)) from exc
    sink = RecordSink(cfg.output)
    before = len(sink)

    def progress(index, total, cell):
        if not args.quiet:
            algo, n, p, t, g, seed = cell
            print(f"[{index + 1}/{total}] {algo.value} n={n} p={p} t={int(t)} "
                  f"g={list(g.as_tuple())} seed={seed}", file=sys.stderr)

    written = run_grid(cfg.plan, provider, sink, clock=clock, limit=args.limit, progress=progress)
    print(f"{written} new record(s); {before + written} total in {cfg.output} "
          f"(provider={provider.tag}, clock={clock})")
    return EXIT_OK


def _target_path(out: Path, target: str, both: bool) -> Path:
    if not both:
        return out
    suffix = out.suffix or ".json"
    return out.with_name(f"{out.stem if out.suffix else out.name}.{target}{suffix}")


def cmd_fit(args) -> int:
    records = read_records(args.records)
    targets = TARGETS if args.target == "both" else (args.target,)
    columns = args.columns.split(",") if args.columns else None
    out = Path(args.out)
    for target in targets:
        eq = fit(records, target, columns=columns, drop_constant=args.drop_constant,
                 t_onehot=args.t_onehot)
        path = _target_path(out, target, len(targets) > 1)
        atomic_write_text(path, eq.to_json())
        print(f"{target}: r^2={eq.diagnostics['r_squared']:.6g} "
              f"sigma_eps={eq.sigma_eps:.6g} records={eq.diagnostics['record_count']} -> {path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    eq = FittedEquation.from_json(Path(args.equation).read_text())
    g = GuardrailConfig(**{name: getattr(args, name) for name in GUARDRAILS})
    inputs = PredictorInputs(algorithm=args.algo, n=args.n, p=args.p, t=args.t, g=g)
    result = predict(eq, inputs)
    doc = {"target": eq.target, **result.to_dict(),
           "design_row": design_row(inputs, eq.target, eq.t_onehot).tolist()}
    print(f"{eq.target}: {result.point!r} +/- {2 * eq.sigma_eps!r} "
          f"[{result.low!r}, {result.high!r}]")
    text = json.dumps(doc, sort_keys=True)
    print(text)
    if args.json_out:
        atomic_write_text(args.json_out, text + "\n")
    return EXIT_OK


def _g_label(g: GuardrailConfig) -> str:
    active = [f"{name}={value:g}" for name, value in zip(GUARDRAILS, g.as_tuple()) if value]
    return ",".join(active) or "off"


def summarize(records) -> dict:
    """Aggregates behind ``infercost report``: per-configuration cells,
    per (algorithm x guardrail) groups, totals and latency/energy pairs."""
    cells = defaultdict(list)
    groups = defaultdict(list)
    for r in records:
        cells[(r.algorithm.value, r.n, r.p, int(r.t), r.g.as_tuple())].append(r)
        groups[(r.algorithm.value, _g_label(r.g))].append(r)

    def agg(rs):
        lat = [r.latency_ms for r in rs]
        en = [r.energy_mj for r in rs]
        return {"records": len(rs), "latency_ms_mean": math.fsum(lat) / len(rs),
                "energy_mj_mean": math.fsum(en) / len(rs),
                "latency_ms_sum": math.fsum(lat), "energy_mj_sum": math.fsum(en)}

    cell_rows = [{"algo": k[0], "n": k[1], "p": k[2], "t": k[3],
                  **{f"g_{name}": v for name, v in zip(GUARDRAILS, k[4])}, **agg(rs)}
                 for k, rs in cells.items()]
    group_rows = [{"algo": k[0], "guardrails": k[1], **agg(rs)} for k, rs in groups.items()]
    by_algo = defaultdict(list)
    for r in records:
        by_algo[r.algorithm.value].append(r)
    correlation = {}
    for algo, rs in by_algo.items():
        lat = [r.latency_ms for r in rs]
        en = [r.energy_mj for r in rs]
        if len(rs) >= 3 and statistics.pstdev(lat) > 0 and statistics.pstdev(en) > 0:
            correlation[algo] = statistics.correlation(lat, en)
        else:
            correlation[algo] = None
    totals = {"records": len(records),
              "latency_ms": math.fsum(r.latency_ms for r in records),
              "energy_mj": math.fsum(r.energy_mj for r in records)}
    scatter = [{"algo": r.algorithm.value, "n": r.n, "p": r.p, "t": int(r.t),
                "guardrails": _g_label(r.g), "latency_ms": r.latency_ms,
                "energy_mj": r.energy_mj} for r in records]
    return {"cells": cell_rows, "groups": group_rows, "totals": totals,
            "correlation": correlation, "scatter": scatter}


def _csv_text(rows: list[dict]) -> str:
    if not rows:
        return ""
    header = list(rows[0])
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row.values()))
    return "\n".join(lines) + "\n"


def _table(rows: list[dict], columns: list[str]) -> str:
    def fmt(v):
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    cells = [[fmt(row[c]) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def cmd_report(args) -> int:
    records = read_records(args.records)
    if not records:
        print("no records: nothing to report")
        return EXIT_OK
    summary = summarize(records)
    print(f"cells ({len(summary['cells'])})")
    print(_table(summary["cells"], ["algo", "n", "p", "t", *(f"g_{g}" for g in GUARDRAILS),
                                    "records", "latency_ms_mean", "energy_mj_mean"]))
    print()
    print(f"by algorithm x guardrail ({len(summary['groups'])})")
    print(_table(summary["groups"], ["algo", "guardrails", "records",
                                     "latency_ms_mean", "energy_mj_mean"]))
    print()
    print("latency/energy correlation (Pearson, per algorithm)")
    for algo, r in summary["correlation"].items():
        print(f"  {algo}: {'n/a' if r is None else f'{r:.4f}'}")
    totals = summary["totals"]
    print()
    print(f"totals: records={totals['records']} latency_ms={totals['latency_ms']!r} "
          f"energy_mj={totals['energy_mj']!r}")
    if args.csv:
        atomic_write_text(args.csv, _csv_text(summary["cells"]))
    if args.scatter:
        atomic_write_text(args.scatter, _csv_text(summary["scatter"]))
    if args.json:
        atomic_write_text(args.json, json.dumps(
            {k: summary[k] for k in ("groups", "totals", "correlation")},
            indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def _unit(value: str) -> float:
    x = float(value)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is outside [0, 1]")
    return x


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infercost",
        description="Benchmark classifier inference latency/energy and fit linear cost models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset (CSV + JSON sidecar)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--t", type=int, default=0, choices=(0, 1, 2))
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path; metadata goes beside it as .json")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", help="run a benchmark grid (resumable)")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="records CSV (overrides config 'output')")
    p.add_argument("--energy-provider", dest="energy_provider")
    p.add_argument("--clock", help="timer (default) or cost-model")
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--limit", type=int, help="stop after this many new records")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fit", help="fit the latency and/or energy equation")
    p.add_argument("records")
    p.add_argument("--target", choices=(*TARGETS, "both"), default="both")
    p.add_argument("--out", required=True,
                   help="equation JSON; with --target both, '.latency'/'.energy' is inserted")
    p.add_argument("--drop-constant", action="store_true",
                   help="estimate only regressors that vary in the records")
    p.add_argument("--columns", help="comma-separated coefficient names to estimate")
    p.add_argument("--t-onehot", action="store_true", help="indicator columns for data type")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="evaluate a fitted equation")
    p.add_argument("equation")
    p.add_argument("--algo", required=True)
    p.add_argument("--n", type=float, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--t", type=int, default=0, choices=(0, 1, 2))
    for name in GUARDRAILS:
        p.add_argument(f"--{name}", type=_unit, default=0.0)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="summarize a records CSV")
    p.add_argument("records")
    p.add_argument("--csv", help="write the per-cell table as CSV")
    p.add_argument("--scatter", help="write per-record latency/energy pairs as CSV")
    p.add_argument("--json", help="write group table, totals and correlations as JSON")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnderdeterminedError, RankDeficientError, ValueError, TypeError,
            FileNotFoundError) as exc:
        print(f"infercost {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"infercost {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
