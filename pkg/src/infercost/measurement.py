"""Latency and energy measurement, benchmark records, and the grid runner.

Latency is the median wall time of single inferences after an untimed warmup.
Energy comes from an :class:`EnergyProvider`: either hardware package-energy
counters (Linux powercap / RAPL) or a deterministic cost model that prices the
closed-form operation counts of the timed unit.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from infercost._io import atomic_write_text
from infercost.classifiers import ALGORITHMS, AlgorithmKind, Hyper, OpCount, TrainedModel, train
from infercost.datasets import DataType, generate
from infercost.guardrails import (
    DEFAULTS, GUARDRAILS, OFF, FairnessWindow, GuardrailConfig, GuardrailConstants,
    guarded_ops, guarded_predict,
)

log = logging.getLogger(__name__)

RECORD_HEADER = (
    "algo", "n", "p", "t", "g_expl", "g_fair", "g_interp", "g_safety", "g_privacy",
    "latency_ms", "energy_mj", "reps", "warmup", "provider", "seed", "timestamp",
)
FIT_GRADE_REPS = 30
DEFAULT_REPS = 200
DEFAULT_WARMUP = 50

ENV_FORCE_COST_MODEL = "INFERCOST_FORCE_COST_MODEL"
ENV_CLOCK = "INFERCOST_CLOCK"
CLOCKS = ("timer", "cost-model")


class EnergyUnavailable(RuntimeError):
    """Hardware energy counters cannot be read on this platform."""


# --------------------------------------------------------------------------
# latency

@dataclass
class LatencyStats:
    median_ms: float
    mad_ms: float
    min_ms: float
    samples: list[float]
    low_confidence: bool = False


def _summarize(samples_ms: list[float], resolution_ms: float) -> LatencyStats:
    median = statistics.median(samples_ms)
    mad = statistics.median([abs(s - median) for s in samples_ms])
    return LatencyStats(median_ms=median, mad_ms=mad, min_ms=min(samples_ms),
                        samples=samples_ms, low_confidence=resolution_ms > 0.01 * median)


def _timed_reps(task: Callable[[], object], reps: int) -> list[float]:
    clock = time.perf_counter_ns
    samples = []
    for _ in range(reps):
        start = clock()
        task()
        samples.append((clock() - start) / 1e6)
    return samples


def clock_resolution_ms() -> float:
    return time.get_clock_info("perf_counter").resolution * 1e3


def measure_latency(task: Callable[[], object], warmup: int = DEFAULT_WARMUP,
                    reps: int = DEFAULT_REPS) -> LatencyStats:
    """Run ``warmup`` untimed executions, then time ``reps`` single executions."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if warmup < 0:
        raise ValueError("warmup must be non-negative")
    for _ in range(warmup):
        task()
    return _summarize(_timed_reps(task, reps), clock_resolution_ms())


def measure_interleaved(tasks: Sequence[Callable[[], object]], warmup: int = DEFAULT_WARMUP,
                        reps: int = DEFAULT_REPS) -> list[LatencyStats]:
    """Time several tasks in round-robin so slow drift in machine load hits
    all of them alike; use this when comparing configurations."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if warmup < 0:
        raise ValueError("warmup must be non-negative")
    for _ in range(warmup):
        for task in tasks:
            task()
    clock = time.perf_counter_ns
    samples: list[list[float]] = [[] for _ in tasks]
    for _ in range(reps):
        for task, out in zip(tasks, samples):
            start = clock()
            task()
            out.append((clock() - start) / 1e6)
    resolution = clock_resolution_ms()
    return [_summarize(s, resolution) for s in samples]


@dataclass(frozen=True)
class CostModelClock:
    """Virtual clock pricing operation counts in nanoseconds.

    Gives reproducible latencies for CI runs where bit-identical outputs matter
    more than wall time.
    """

    mult_ns: float = 1.0
    add_ns: float = 1.0
    compare_ns: float = 1.0
    overhead_ns: float = 1000.0

    def latency_ms(self, ops: OpCount) -> float:
        ns = (ops.mults * self.mult_ns + ops.adds * self.add_ns
              + ops.compares * self.compare_ns + self.overhead_ns)
        return ns / 1e6

    def measure(self, ops: OpCount, reps: int) -> LatencyStats:
        value = self.latency_ms(ops)
        return LatencyStats(median_ms=value, mad_ms=0.0, min_ms=value, samples=[value] * reps)


# --------------------------------------------------------------------------
# energy

class EnergyProvider:
    """Energy source with counter semantics: ``read()`` never decreases."""

    name = "abstract"
    capability = "none"

    def read(self) -> float:
        """Cumulative energy in millijoules since the provider was created."""
        raise NotImplementedError

    @property
    def tag(self) -> str:
        return self.name


@dataclass
class CostModelProvider(EnergyProvider):
    """Prices operation counts with fixed per-operation energies (nanojoules)."""

    mult_nj: float = 1.0
    add_nj: float = 0.5
    compare_nj: float = 0.5
    overhead_nj: float = 50.0
    fallback: bool = False
    _counter_mj: float = field(default=0.0, repr=False)

    name = "cost-model"
    capability = "cost-model"

    @property
    def tag(self) -> str:
        return "cost-model(fallback)" if self.fallback else "cost-model"

    def energy_nj(self, ops: OpCount) -> float:
        return (ops.mults * self.mult_nj + ops.adds * self.add_nj
                + ops.compares * self.compare_nj + self.overhead_nj)

    def energy_mj(self, ops: OpCount) -> float:
        return self.energy_nj(ops) / 1e6

    def charge(self, ops: OpCount, times: int = 1) -> None:
        self._counter_mj += self.energy_mj(ops) * times

    def read(self) -> float:
        return self._counter_mj


class RaplProvider(EnergyProvider):
    """Package-energy counter from the Linux powercap interface.

    The raw counter wraps at ``max_energy_range_uj``; wraps are folded into a
    running offset so :meth:`read` stays monotone.
    """

    name = "rapl"
    capability = "hardware-counter"

    def __init__(self, domain: str | Path = "/sys/class/powercap/intel-rapl:0"):
        self.domain = Path(domain)
        self._energy = self.domain / "energy_uj"
        try:
            self._range_uj = int((self.domain / "max_energy_range_uj").read_text())
            self._last_uj = int(self._energy.read_text())
        except (OSError, ValueError) as exc:
            raise EnergyUnavailable(f"cannot read package energy counter at {self.domain}: {exc}") from exc
        self._start_uj = self._last_uj
        self._offset_uj = 0

    def read(self) -> float:
        try:
            raw = int(self._energy.read_text())
        except (OSError, ValueError) as exc:
            raise EnergyUnavailable(f"energy counter became unreadable: {exc}") from exc
        if raw < self._last_uj:
            self._offset_uj += self._range_uj
        self._last_uj = raw
        return (raw + self._offset_uj - self._start_uj) * 1e-3


PROVIDER_NAMES = ("auto", "cost-model", "rapl")


def resolve_provider(name: str = "auto", rapl_domain: str | Path | None = None) -> EnergyProvider:
    """Build the named provider.

    ``auto`` tries RAPL and falls back to the cost model (tagged as a
    fallback). Setting ``INFERCOST_FORCE_COST_MODEL=1`` forces the cost model.
    """
    if name not in PROVIDER_NAMES:
        raise ValueError(f"unknown energy provider {name!r}; expected one of {', '.join(PROVIDER_NAMES)}")
    if os.environ.get(ENV_FORCE_COST_MODEL, "") not in ("", "0"):
        return CostModelProvider()
    if name == "cost-model":
        return CostModelProvider()
    kwargs = {} if rapl_domain is None else {"domain": rapl_domain}
    if name == "rapl":
        return RaplProvider(**kwargs)
    try:
        return RaplProvider(**kwargs)
    except EnergyUnavailable:
        log.info("hardware energy counters unavailable; using the cost model")
        return CostModelProvider(fallback=True)


def measure_energy(provider: EnergyProvider, task: Callable[[], object], reps: int,
                   ops: OpCount | None = None) -> float:
    """Energy per execution of ``task`` in millijoules.

    Hardware counters are read around ``reps`` executions. The cost model
    needs the task's operation count (``ops`` or a ``task.ops`` attribute)
    and is exact; the task is not executed.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if isinstance(provider, CostModelProvider):
        ops = ops if ops is not None else getattr(task, "ops", None)
        if ops is None:
            raise ValueError("the cost-model provider needs the task's operation count")
        provider.charge(ops, reps)
        return provider.energy_mj(ops)
    before = provider.read()
    for _ in range(reps):
        task()
    return (provider.read() - before) / reps


def measure_pair(task, warmup: int, reps: int, provider: EnergyProvider,
                 clock: str = "timer") -> tuple[LatencyStats, float]:
    """Latency and energy from the same block of timed executions."""
    if clock == "cost-model":
        stats = CostModelClock().measure(task.ops, reps)
        return stats, measure_energy(provider, task, reps)
    for _ in range(warmup):
        task()
    if isinstance(provider, CostModelProvider):
        samples = _timed_reps(task, reps)
        energy = measure_energy(provider, task, reps)
    else:
        before = provider.read()
        samples = _timed_reps(task, reps)
        energy = (provider.read() - before) / reps
    return _summarize(samples, clock_resolution_ms()), energy


# --------------------------------------------------------------------------
# records

@dataclass(frozen=True)
class MeasurementRecord:
    algorithm: AlgorithmKind
    n: int
    p: int
    t: DataType
    g: GuardrailConfig
    latency_ms: float
    energy_mj: float
    reps: int
    warmup: int
    provider: str
    seed: int
    timestamp: str = ""

    def __post_init__(self):
        object.__setattr__(self, "algorithm", AlgorithmKind.parse(self.algorithm))
        object.__setattr__(self, "t", DataType.parse(self.t))
        if not self.latency_ms > 0:
            raise ValueError(f"latency must be positive, got {self.latency_ms}")
        if not self.energy_mj >= 0:
            raise ValueError(f"energy must be non-negative, got {self.energy_mj}")

    @property
    def fit_grade(self) -> bool:
        return self.reps >= FIT_GRADE_REPS

    def key(self) -> tuple:
        return cell_key(self.algorithm, self.n, self.p, self.t, self.g, self.seed)

    def to_row(self) -> list[str]:
        return [self.algorithm.value, str(self.n), str(self.p), str(int(self.t)),
                *(repr(v) for v in self.g.as_tuple()),
                repr(float(self.latency_ms)), repr(float(self.energy_mj)),
                str(self.reps), str(self.warmup), self.provider, str(self.seed), self.timestamp]

    @classmethod
    def from_row(cls, row: dict) -> "MeasurementRecord":
        g = GuardrailConfig(**{name: float(row[f"g_{name}"]) for name in GUARDRAILS})
        return cls(algorithm=row["algo"], n=int(row["n"]), p=int(row["p"]), t=int(row["t"]),
                   g=g, latency_ms=float(row["latency_ms"]), energy_mj=float(row["energy_mj"]),
                   reps=int(row["reps"]), warmup=int(row["warmup"]), provider=row["provider"],
                   seed=int(row["seed"]), timestamp=row["timestamp"])


def cell_key(algorithm, n, p, t, g: GuardrailConfig, seed) -> tuple:
    return (AlgorithmKind.parse(algorithm).value, int(n), int(p), int(t), g.as_tuple(), int(seed))


def records_to_csv(records: Iterable[MeasurementRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_HEADER)
    for rec in records:
        writer.writerow(rec.to_row())
    return buf.getvalue()


def read_records(path: str | Path) -> list[MeasurementRecord]:
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        return []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [MeasurementRecord.from_row(row) for row in reader]


class RecordSink:
    """Append-only record store. With a path, every append rewrites the CSV
    atomically, so an interrupted run leaves a valid file to resume from."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[MeasurementRecord] = read_records(self.path) if self.path else []
        self._keys = {r.key() for r in self.records}

    def __contains__(self, key: tuple) -> bool:
        return key in self._keys

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: MeasurementRecord) -> None:
        self.records.append(record)
        self._keys.add(record.key())
        if self.path is not None:
            atomic_write_text(self.path, records_to_csv(self.records))


def timestamp_now() -> str:
    """UTC ISO-8601 timestamp; honours ``SOURCE_DATE_EPOCH`` for reproducible runs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch
              else datetime.now(tz=timezone.utc))
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------
# grid

@dataclass(frozen=True)
class GridPlan:
    algorithms: tuple[AlgorithmKind, ...] = ALGORITHMS
    n_values: tuple[int, ...] = (1000,)
    p_values: tuple[int, ...] = (10,)
    t_values: tuple[DataType, ...] = (DataType.TABULAR,)
    guardrails: tuple[GuardrailConfig, ...] = (OFF,)
    seeds: tuple[int, ...] = (0,)
    separation: float = 3.0
    n_queries: int = 32
    reps: int = DEFAULT_REPS
    warmup: int = DEFAULT_WARMUP
    hyper: Hyper = Hyper()
    constants: GuardrailConstants = DEFAULTS

    def __post_init__(self):
        object.__setattr__(self, "algorithms", tuple(AlgorithmKind.parse(a) for a in self.algorithms))
        object.__setattr__(self, "t_values", tuple(DataType.parse(t) for t in self.t_values))
        object.__setattr__(self, "guardrails", tuple(
            g if isinstance(g, GuardrailConfig) else GuardrailConfig.from_dict(g)
            for g in self.guardrails))
        for name in ("algorithms", "n_values", "p_values", "t_values", "guardrails", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"grid axis {name} is empty")
        if min(self.n_values) < 2 or min(self.p_values) < 1:
            raise ValueError("grid needs n >= 2 and p >= 1")
        if self.reps < 1 or self.warmup < 0 or self.n_queries < 1:
            raise ValueError("grid needs reps >= 1, warmup >= 0, n_queries >= 1")

    def cells(self) -> Iterator[tuple]:
        """(algorithm, n, p, t, g, seed) tuples; guardrails vary fastest so
        consecutive cells can share one trained model."""
        for algo, n, p, t, seed, g in itertools.product(
                self.algorithms, self.n_values, self.p_values, self.t_values,
                self.seeds, self.guardrails):
            yield algo, n, p, t, g, seed

    def __len__(self) -> int:
        return (len(self.algorithms) * len(self.n_values) * len(self.p_values)
                * len(self.t_values) * len(self.guardrails) * len(self.seeds))

    @classmethod
    def from_dict(cls, doc: dict) -> "GridPlan":
        doc = dict(doc)
        known = {"algorithms", "n_values", "p_values", "t_values", "guardrails", "seeds",
                 "separation", "n_queries", "reps", "warmup", "hyper", "constants"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown grid plan key(s): {', '.join(sorted(unknown))}")
        for name in ("algorithms", "n_values", "p_values", "t_values", "guardrails", "seeds"):
            if name in doc:
                doc[name] = tuple(doc[name])
        if "hyper" in doc:
            doc["hyper"] = Hyper(**doc["hyper"])
        if "constants" in doc:
            doc["constants"] = GuardrailConstants.from_dict(doc["constants"])
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            "algorithms": [a.value for a in self.algorithms],
            "n_values": list(self.n_values), "p_values": list(self.p_values),
            "t_values": [int(t) for t in self.t_values],
            "guardrails": [g.to_dict() for g in self.guardrails],
            "seeds": list(self.seeds), "separation": self.separation,
            "n_queries": self.n_queries, "reps": self.reps, "warmup": self.warmup,
            "hyper": asdict(self.hyper), "constants": asdict(self.constants),
        }


def load_plan(path: str | Path) -> GridPlan:
    return GridPlan.from_dict(json.loads(Path(path).read_text()))


class BenchTask:
    """One guarded inference per call, cycling through held-out queries.

    ``ops`` is the closed-form operation count of a single call.
    """

    def __init__(self, model: TrainedModel, queries: np.ndarray, groups: np.ndarray,
                 cfg: GuardrailConfig, seed: int, constants: GuardrailConstants = DEFAULTS):
        self.model = model
        self.queries = queries
        self.groups = groups
        self.cfg = cfg
        self.seed = seed
        self.constants = constants
        self.window = FairnessWindow.for_intensity(cfg.fair, constants) if cfg.fair > 0 else None
        self.ops = guarded_ops(model, cfg, constants)
        self._i = 0

    def __call__(self):
        i = self._i % len(self.queries)
        self._i += 1
        return guarded_predict(self.model, self.queries[i], self.cfg, self.window,
                               rng_seed=self.seed, group=int(self.groups[i]),
                               constants=self.constants)


def resolve_clock(clock: str | None = None) -> str:
    clock = os.environ.get(ENV_CLOCK) or clock or "timer"
    if clock not in CLOCKS:
        raise ValueError(f"unknown clock {clock!r}; expected one of {', '.join(CLOCKS)}")
    return clock


def run_cell(plan: GridPlan, cell: tuple, provider: EnergyProvider,
             clock: str = "timer", model_cache: dict | None = None) -> MeasurementRecord:
    algo, n, p, t, g, seed = cell
    key = (algo, n, p, t, seed)
    model = model_cache.get(key) if model_cache is not None else None
    if model is None:
        data = generate(n, p, t, plan.separation, seed)
        model = train(algo, data, plan.hyper, seed)
        if model_cache is not None:
            model_cache.clear()
            model_cache[key] = model
    queries = generate(max(2, plan.n_queries), p, t, plan.separation, (seed + 1) % 2**64)
    task = BenchTask(model, queries.samples[:plan.n_queries], queries.protected, g, seed,
                     plan.constants)
    stats, energy = measure_pair(task, plan.warmup, plan.reps, provider, clock)
    if stats.low_confidence:
        log.warning("cell %s: clock resolution is coarse relative to the median", cell)
    return MeasurementRecord(algorithm=algo, n=n, p=p, t=t, g=g, latency_ms=stats.median_ms,
                             energy_mj=energy, reps=plan.reps, warmup=plan.warmup,
                             provider=provider.tag, seed=seed, timestamp=timestamp_now())


def run_grid(plan: GridPlan, provider: EnergyProvider, sink: RecordSink,
             clock: str = "timer", limit: int | None = None,
             progress: Callable[[int, int, tuple], None] | None = None) -> int:
    """Measure every cell of ``plan`` not already in ``sink``.

    Cells run one at a time on the calling thread. A failing cell is logged
    and skipped. ``limit`` stops after that many new records (used to
    simulate interruption). Returns the number of records written.
    """
    written = 0
    total = len(plan)
    cache: dict = {}
    for index, cell in enumerate(plan.cells()):
        algo, n, p, t, g, seed = cell
        if cell_key(algo, n, p, t, g, seed) in sink:
            continue
        if limit is not None and written >= limit:
            break
        if progress is not None:
            progress(index, total, cell)
        try:
            record = run_cell(plan, cell, provider, clock, cache)
        except Exception as exc:
            log.error("cell %s failed: %s", cell, exc)
            continue
        sink.append(record)
        written += 1
    return written
