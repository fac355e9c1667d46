import csv
import json
import math

import numpy as np
import pytest

from infercost.cli import main
from infercost.measurement import read_records, records_to_csv
from infercost.model import synthetic_records

THETA = [2.0, 0.5, -0.3, 1.2, 0.8, 0.01, 0.4, 1.5, 0.2, 0.9, 0.6, 0.3]


@pytest.fixture
def det_env(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    monkeypatch.setenv("INFERCOST_CLOCK", "cost-model")
    monkeypatch.setenv("INFERCOST_FORCE_COST_MODEL", "1")


def _config(tmp_path, **kw):
    doc = {"algorithms": ["SVM"], "n_values": [50], "p_values": [4], "reps": 3, "warmup": 0,
           "n_queries": 4, "energy_provider": "cost-model", "output": str(tmp_path / "r.csv"),
           "hyper": {"svm_epochs": 2}}
    doc.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def test_gen_writes_two_identical_file_pairs(tmp_path):
    args = ["gen", "--n", "100", "--p", "10", "--t", "0", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_gen_rejects_tiny_n(tmp_path, capsys):
    assert main(["gen", "--n", "1", "--p", "3", "--out", str(tmp_path / "a.csv")]) == 2
    assert "n must be at least 2" in capsys.readouterr().err


def test_bench_one_cell(tmp_path, det_env):
    assert main(["bench", "--config", str(_config(tmp_path)), "--quiet"]) == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 2


def test_bench_unknown_provider_fails_before_running(tmp_path, capsys):
    cfg = _config(tmp_path, energy_provider="wattmeter")
    assert main(["bench", "--config", str(cfg)]) == 2
    assert not (tmp_path / "r.csv").exists()
    assert "unknown energy provider" in capsys.readouterr().err


def test_bench_resume_equals_uninterrupted(tmp_path, det_env):
    cfg = _config(tmp_path, algorithms=["SVM", "kNN"], n_values=[40, 60])
    full = tmp_path / "full.csv"
    assert main(["bench", "--config", str(cfg), "--out", str(full), "--quiet"]) == 0
    part = tmp_path / "part.csv"
    assert main(["bench", "--config", str(cfg), "--out", str(part), "--limit", "1", "--quiet"]) == 0
    assert len(part.read_text().splitlines()) == 2
    assert main(["bench", "--config", str(cfg), "--out", str(part), "--quiet"]) == 0
    assert sorted(part.read_text().splitlines()) == sorted(full.read_text().splitlines())


def _write_synthetic(tmp_path, count, target="latency"):
    path = tmp_path / "syn.csv"
    path.write_text(records_to_csv(synthetic_records(THETA, count, target, seed=3)))
    return path


def test_fit_noiseless_matches_generator(tmp_path):
    path = _write_synthetic(tmp_path, 60)
    assert main(["fit", str(path), "--target", "latency", "--out", str(tmp_path / "eq.json")]) == 0
    doc = json.loads((tmp_path / "eq.json").read_text())
    names = ["alpha", "beta_kNN", "beta_RF", "beta_NN", "beta_D", "gamma_D", "delta_D",
             "phi_expl", "phi_fair", "phi_interp", "phi_safety", "phi_privacy"]
    np.testing.assert_allclose([doc[n] for n in names], THETA, rtol=1e-8)
    assert doc["encoding_version"] == "ref-svm/t-code/v1"


def test_fit_both_writes_two_files(tmp_path):
    path = _write_synthetic(tmp_path, 60)
    assert main(["fit", str(path), "--out", str(tmp_path / "eq.json")]) == 0
    assert (tmp_path / "eq.latency.json").exists() and (tmp_path / "eq.energy.json").exists()


def test_fit_underdetermined(tmp_path, capsys):
    path = _write_synthetic(tmp_path, 12)
    assert main(["fit", str(path), "--out", str(tmp_path / "eq.json")]) == 2
    assert "cannot determine" in capsys.readouterr().err


def _intercept_eq(tmp_path, alpha=3.5):
    names = ["alpha", "beta_kNN", "beta_RF", "beta_NN", "beta_D", "gamma_D", "delta_D",
             "phi_expl", "phi_fair", "phi_interp", "phi_safety", "phi_privacy"]
    doc = {n: 0.0 for n in names}
    doc.update(alpha=alpha, target="latency", sigma_eps=0.0)
    path = tmp_path / "eq.json"
    path.write_text(json.dumps(doc))
    return path


def test_predict_intercept_only(tmp_path, capsys):
    eq = _intercept_eq(tmp_path)
    assert main(["predict", str(eq), "--algo", "RF", "--n", "500", "--p", "7", "--t", "1",
                 "--fair", "0.4", "--privacy", "1"]) == 0
    doc = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert doc["point"] == 3.5 and doc["interval"] == [3.5, 3.5]


def test_predict_echoes_expl_into_slot_eight(tmp_path, capsys):
    eq = _intercept_eq(tmp_path)
    assert main(["predict", str(eq), "--algo", "SVM", "--n", "10", "--p", "10",
                 "--expl", "0.7", "--json-out", str(tmp_path / "p.json")]) == 0
    row = json.loads((tmp_path / "p.json").read_text())["design_row"]
    assert row[7] == 0.7  # 8th slot, 1-based


def test_predict_rejects_out_of_range_intensity(tmp_path):
    eq = _intercept_eq(tmp_path)
    assert main(["predict", str(eq), "--algo", "SVM", "--n", "10", "--p", "2",
                 "--safety", "1.5"]) == 2


def test_report_empty_records(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert main(["report", str(path)]) == 0
    assert "no records" in capsys.readouterr().out


def test_report_twelve_rows_and_totals(tmp_path, det_env, capsys):
    cfg = _config(tmp_path, algorithms=["SVM", "kNN", "RF", "NN"], n_values=[40, 60, 80],
                  hyper={"svm_epochs": 2, "nn_epochs": 5, "n_trees": 2})
    assert main(["bench", "--config", str(cfg), "--quiet"]) == 0
    capsys.readouterr()
    out_csv = tmp_path / "cells.csv"
    assert main(["report", str(tmp_path / "r.csv"), "--csv", str(out_csv)]) == 0
    text = capsys.readouterr().out
    assert "cells (12)" in text
    assert len(out_csv.read_text().splitlines()) == 13
    # independent pass over the raw file with plain string splitting
    raw = (tmp_path / "r.csv").read_text().splitlines()
    header = raw[0].split(",")
    li, ei = header.index("latency_ms"), header.index("energy_mj")
    lat = math.fsum(float(line.split(",")[li]) for line in raw[1:])
    en = math.fsum(float(line.split(",")[ei]) for line in raw[1:])
    totals = [line for line in text.splitlines() if line.startswith("totals:")][0]
    fields = dict(part.split("=") for part in totals.split()[1:])
    assert int(fields["records"]) == 12
    assert float(fields["latency_ms"]) == lat and float(fields["energy_mj"]) == en


def test_unknown_command_is_usage_error():
    assert main(["launch"]) == 2


def test_missing_records_file(tmp_path):
    assert main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "e.json")]) == 2


def test_read_back_bench_records(tmp_path, det_env):
    main(["bench", "--config", str(_config(tmp_path)), "--quiet"])
    recs = read_records(tmp_path / "r.csv")
    assert recs[0].provider == "cost-model" and recs[0].timestamp == "1970-01-01T00:00:00Z"
    with open(tmp_path / "r.csv") as fh:
        assert next(csv.reader(fh))[0] == "algo"
