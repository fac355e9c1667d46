import csv

import numpy as np
import pytest

from infercost.classifiers import Hyper, OpCount, linear_svm, train
from infercost.datasets import generate
from infercost.guardrails import OFF, GuardrailConfig, guarded_ops
from infercost.measurement import (RECORD_HEADER, BenchTask, CostModelClock,
                                   CostModelProvider, EnergyUnavailable, GridPlan,
                                   MeasurementRecord, RaplProvider, RecordSink,
                                   measure_energy, measure_interleaved, measure_latency,
                                   measure_pair,
                                   read_records, records_to_csv, resolve_clock,
                                   resolve_provider, run_grid, timestamp_now)


def spin(iterations):
    def task():
        acc = 0
        for i in range(iterations):
            acc += i
        return acc
    return task


def test_noop_latency_is_small_and_non_negative():
    stats = measure_latency(lambda: None, warmup=5, reps=50)
    assert stats.min_ms >= 0
    assert stats.median_ms < 1.0
    assert len(stats.samples) == 50


def test_spin_latency_is_stable_and_scales():
    # platform gate for an idle machine; a shared CI box gets three chances
    for _ in range(3):
        one, two = measure_interleaved([spin(20_000), spin(40_000)], warmup=5, reps=100)
        stable = one.mad_ms / one.median_ms < 0.2
        if stable:
            break
    assert stable
    assert 1.6 <= two.median_ms / one.median_ms <= 2.4


def test_interleaved_matches_single_task_shape():
    stats = measure_interleaved([lambda: None, lambda: None], warmup=0, reps=7)
    assert [len(s.samples) for s in stats] == [7, 7]
    with pytest.raises(ValueError):
        measure_interleaved([lambda: None], reps=0)


def test_latency_argument_checks():
    with pytest.raises(ValueError):
        measure_latency(lambda: None, reps=0)
    with pytest.raises(ValueError):
        measure_latency(lambda: None, warmup=-1)


def test_cost_model_energy_linear_svm():
    provider = CostModelProvider()
    ops = OpCount(10, 10, 1)
    assert provider.energy_nj(ops) == 10 * 1.0 + 10 * 0.5 + 1 * 0.5 + 50.0
    assert provider.energy_mj(ops) == provider.energy_nj(ops) / 1e6


def test_cost_model_knn_n_term_doubles():
    provider = CostModelProvider()
    small = train("kNN", generate(100, 10, 0, 3.0, seed=0), Hyper(k=1))
    big = train("kNN", generate(200, 10, 0, 3.0, seed=0), Hyper(k=1))
    n_term = lambda m: provider.energy_nj(guarded_ops(m, OFF)) - provider.overhead_nj - 0.5  # noqa: E731
    assert n_term(big) / n_term(small) == 2.0


def test_cost_model_counter_is_monotone_and_exact():
    provider = CostModelProvider()
    ops = OpCount(4, 2, 1)
    e = measure_energy(provider, lambda: None, 10, ops)
    assert e == provider.energy_mj(ops)
    assert provider.read() == pytest.approx(10 * e)
    with pytest.raises(ValueError):
        measure_energy(CostModelProvider(), lambda: None, 10)


def test_cost_model_clock_is_deterministic():
    clock = CostModelClock()
    assert clock.latency_ms(OpCount(10, 10, 1)) == 1021 / 1e6
    stats = clock.measure(OpCount(1, 1, 1), 5)
    assert stats.mad_ms == 0 and stats.samples == [stats.median_ms] * 5


def _fake_rapl(tmp_path, value, limit=1000):
    (tmp_path / "max_energy_range_uj").write_text(str(limit))
    (tmp_path / "energy_uj").write_text(str(value))
    return tmp_path


def test_rapl_counter_folds_wraparound(tmp_path):
    domain = _fake_rapl(tmp_path, 900)
    provider = RaplProvider(domain)
    (domain / "energy_uj").write_text("950")
    assert provider.read() == pytest.approx(0.05)
    (domain / "energy_uj").write_text("100")  # wrapped past 1000
    assert provider.read() == pytest.approx(0.2)


def test_rapl_missing_is_unavailable(tmp_path):
    with pytest.raises(EnergyUnavailable):
        RaplProvider(tmp_path / "absent")


def test_auto_provider_falls_back(tmp_path, monkeypatch):
    monkeypatch.delenv("INFERCOST_FORCE_COST_MODEL", raising=False)
    provider = resolve_provider("auto", tmp_path / "absent")
    assert provider.tag == "cost-model(fallback)"
    assert resolve_provider("auto", _fake_rapl(tmp_path, 5)).tag == "rapl"
    monkeypatch.setenv("INFERCOST_FORCE_COST_MODEL", "1")
    assert resolve_provider("rapl").tag == "cost-model"
    with pytest.raises(ValueError):
        resolve_provider("wattmeter")


def test_clock_resolution(monkeypatch):
    monkeypatch.delenv("INFERCOST_CLOCK", raising=False)
    assert resolve_clock(None) == "timer"
    monkeypatch.setenv("INFERCOST_CLOCK", "cost-model")
    assert resolve_clock("timer") == "cost-model"
    monkeypatch.setenv("INFERCOST_CLOCK", "sundial")
    with pytest.raises(ValueError):
        resolve_clock()


def test_measure_pair_cost_model_clock():
    model = linear_svm(np.ones(4))
    task = BenchTask(model, np.zeros((3, 4)), np.zeros(3, dtype=int), OFF, seed=0)
    stats, energy = measure_pair(task, 2, 7, CostModelProvider(), "cost-model")
    assert stats.median_ms == CostModelClock().latency_ms(task.ops)
    assert energy == CostModelProvider().energy_mj(task.ops)


def test_record_validation():
    common = dict(algorithm="SVM", n=10, p=2, t=0, g=OFF, reps=30, warmup=0,
                  provider="x", seed=0)
    with pytest.raises(ValueError):
        MeasurementRecord(latency_ms=0.0, energy_mj=1.0, **common)
    with pytest.raises(ValueError):
        MeasurementRecord(latency_ms=1.0, energy_mj=-1.0, **common)
    rec = MeasurementRecord(latency_ms=1.0, energy_mj=0.0, **common)
    assert rec.fit_grade
    assert not MeasurementRecord(latency_ms=1.0, energy_mj=0.0,
                                 **{**common, "reps": 29}).fit_grade


def test_record_csv_round_trip(tmp_path):
    rec = MeasurementRecord("RF", 100, 5, 2, GuardrailConfig(expl=0.7), 0.1 + 0.2,
                            6.549999999999999e-05, 200, 50, "cost-model", 3, "2026-01-01T00:00:00Z")
    path = tmp_path / "r.csv"
    path.write_text(records_to_csv([rec]))
    with open(path) as fh:
        assert tuple(next(csv.reader(fh))) == RECORD_HEADER
    assert read_records(path) == [rec]


def test_read_records_rejects_bad_header(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_records(path)
    assert read_records(tmp_path / "missing.csv") == []


def test_timestamp_honours_source_date_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert timestamp_now() == "1970-01-01T00:00:00Z"


def _plan(**kw):
    base = dict(n_values=(60,), p_values=(4,), reps=3, warmup=1, n_queries=4,
                hyper=Hyper(nn_epochs=5, svm_epochs=2, n_trees=2))
    return GridPlan(**{**base, **kw})


def test_one_cell_plan_yields_one_record():
    sink = RecordSink()
    assert run_grid(_plan(algorithms=("SVM",)), CostModelProvider(), sink, "cost-model") == 1
    assert len(sink) == 1


def test_grid_cardinality_and_zero_guardrails():
    sink = RecordSink()
    plan = _plan(n_values=(40, 60, 80))
    run_grid(plan, CostModelProvider(), sink, "cost-model")
    assert len(sink) == 12 == len(plan)
    assert all(r.g.is_off for r in sink.records)


def test_resume_matches_uninterrupted(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    plan = _plan(guardrails=({}, {"fair": 1.0}))
    full = RecordSink(tmp_path / "full.csv")
    run_grid(plan, CostModelProvider(), full, "cost-model")
    part = RecordSink(tmp_path / "part.csv")
    assert run_grid(plan, CostModelProvider(), part, "cost-model", limit=3) == 3
    resumed = RecordSink(tmp_path / "part.csv")
    assert len(resumed) == 3
    run_grid(plan, CostModelProvider(), resumed, "cost-model")
    assert sorted((tmp_path / "part.csv").read_text().splitlines()) == \
        sorted((tmp_path / "full.csv").read_text().splitlines())
    assert run_grid(plan, CostModelProvider(), resumed, "cost-model") == 0


def test_failing_cell_is_skipped():
    plan = _plan(algorithms=("kNN", "SVM"), hyper=Hyper(k=101))  # k > n fails for kNN only
    sink = RecordSink()
    assert run_grid(plan, CostModelProvider(), sink, "cost-model") == 1
    assert sink.records[0].algorithm.value == "SVM"


def test_plan_dict_round_trip_and_unknown_keys():
    plan = _plan(guardrails=({"expl": 0.5},))
    assert GridPlan.from_dict(plan.to_dict()) == plan
    with pytest.raises(ValueError):
        GridPlan.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        GridPlan(n_values=())
