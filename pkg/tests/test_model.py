import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infercost.classifiers import AlgorithmKind
from infercost.guardrails import GuardrailConfig
from infercost.measurement import MeasurementRecord
from infercost.model import (FittedEquation, PredictorInputs, RankDeficientError,
                             UnderdeterminedError, coefficient_names, design_row, evaluate,
                             fit, predict, split_records, synthetic_records)

THETA = np.array([2.0, 0.5, -0.3, 1.2, 0.8, 0.01, 0.4, 1.5, 0.2, 0.9, 0.6, 0.3])


def equation(target="latency", **coef):
    values = dict.fromkeys(coefficient_names(), 0.0)
    values.update(coef)
    return FittedEquation(target=target, coefficients=values, sigma_eps=0.0)


def test_reference_rows():
    row = design_row(PredictorInputs("SVM", 1, 1, 0), "latency")
    assert row.tolist() == [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    row = design_row(PredictorInputs("RF", 100, 5, 2, GuardrailConfig(expl=0.7)), "energy")
    assert row.tolist() == [1, 0, 1, 0, 100, 5, 2, 0.7, 0, 0, 0, 0]


def test_onehot_t_mode():
    row = design_row(PredictorInputs("NN", 10, 3, 2), "latency", t_onehot=True)
    assert row.shape == (13,) and row[6:8].tolist() == [0.0, 1.0]


def test_invalid_inputs():
    with pytest.raises(ValueError):
        PredictorInputs("SVM", 0, 1, 0)
    with pytest.raises(ValueError):
        PredictorInputs("SVM", 10, 0, 0)
    with pytest.raises(ValueError):
        design_row(PredictorInputs("SVM", 10, 1, 0), "throughput")


def test_noiseless_recovery():
    recs = synthetic_records(THETA, 80, "latency", seed=1)
    eq = fit(recs, "latency")
    np.testing.assert_allclose(eq.vector(), THETA, rtol=1e-8)
    for r in recs[:20]:
        assert predict(eq, PredictorInputs.from_record(r)).point == pytest.approx(r.latency_ms, abs=1e-8)
    assert evaluate(eq, recs)["rmse"] <= 1e-8


def test_noisy_recovery_and_holdout_rmse():
    recs = synthetic_records(THETA, 1000, "energy", noise_sigma=0.1, seed=2)
    train, test = split_records(recs, 0.5, seed=0)
    assert len(train) == len(test) == 500
    eq = fit(train, "energy")
    se = np.array([eq.std_errors[c] for c in coefficient_names()])
    assert np.all(np.abs(eq.vector() - THETA) <= 5 * se)
    assert abs(eq.sigma_eps - 0.1) <= 0.02
    assert 0.08 <= evaluate(eq, test)["rmse"] <= 0.13


def test_standard_errors_match_normal_equations():
    recs = synthetic_records(THETA, 200, "latency", noise_sigma=0.1, seed=3)
    eq = fit(recs, "latency")
    from infercost.model import design_matrix, response
    x = design_matrix([PredictorInputs.from_record(r) for r in recs], "latency")
    y = response(recs, "latency")
    beta = np.linalg.solve(x.T @ x, x.T @ y)
    resid = y - x @ beta
    sigma = math.sqrt(resid @ resid / (len(y) - 12))
    se = sigma * np.sqrt(np.diag(np.linalg.inv(x.T @ x)))
    np.testing.assert_allclose(eq.vector(), beta, rtol=1e-7)
    np.testing.assert_allclose([eq.std_errors[c] for c in coefficient_names()], se, rtol=1e-6)


@settings(max_examples=15)
@given(st.floats(0.01, 100.0))
def test_scale_equivariance(c):
    recs = synthetic_records(THETA, 60, "latency", noise_sigma=0.05, seed=4)
    scaled = [replace(r, latency_ms=r.latency_ms * c) for r in recs]
    a, b = fit(recs, "latency"), fit(scaled, "latency")
    np.testing.assert_allclose(b.vector(), c * a.vector(), rtol=1e-9, atol=1e-12)
    assert b.sigma_eps == pytest.approx(c * a.sigma_eps, rel=1e-9)


def test_single_n_names_size_column():
    recs = [replace(r, n=500) for r in synthetic_records(THETA, 40, "latency", seed=5)]
    with pytest.raises(RankDeficientError) as info:
        fit(recs, "latency")
    assert "log_n" in info.value.columns
    assert "log_n" in str(info.value)


def test_too_few_records():
    with pytest.raises(UnderdeterminedError):
        fit(synthetic_records(THETA, 12, "latency"), "latency")


def test_reduced_fit_with_dropped_constants():
    recs = [replace(r, p=10, t=0, g=GuardrailConfig(), algorithm="kNN")
            for r in synthetic_records(THETA, 40, "energy", seed=6)]
    recs = [replace(r, energy_mj=3.0 + 0.002 * r.n) for r in recs]
    eq = fit(recs, "energy", drop_constant=True)
    assert eq.diagnostics["free_coefficients"] == ["alpha", "beta_D"]
    assert eq.beta_D == pytest.approx(0.002, rel=1e-10)
    assert eq.gamma_D == 0.0 and eq.std_errors["gamma_D"] == 0.0


def test_intercept_only_prediction_is_constant():
    eq = equation(alpha=1.0)
    for algo in AlgorithmKind:
        assert predict(eq, PredictorInputs(algo, 777, 9, 2, GuardrailConfig(0.3, 0, 1, 0, 0))).point == 1.0


def test_natural_log_step():
    eq = equation(beta_D=2.0)
    a = predict(eq, PredictorInputs("SVM", math.e, 4, 0)).point
    b = predict(eq, PredictorInputs("SVM", 1, 4, 0)).point
    assert a - b == 2.0


def test_prediction_interval_width():
    eq = replace(equation(alpha=1.0), sigma_eps=0.25)
    pp = predict(eq, PredictorInputs("SVM", 10, 4, 0))
    assert (pp.low, pp.high) == (0.5, 1.5)


def test_constant_response_r_squared_is_zero():
    recs = [replace(r, latency_ms=4.0) for r in synthetic_records(THETA, 20, "latency", seed=7)]
    eq = fit(recs, "latency", columns=["alpha"])
    assert eq.alpha == pytest.approx(4.0)
    assert eq.diagnostics["r_squared"] == 0.0
    assert evaluate(eq, recs)["r_squared_holdout"] == 0.0


def test_json_round_trip():
    eq = fit(synthetic_records(THETA, 50, "energy", noise_sigma=0.1, seed=8), "energy")
    back = FittedEquation.from_json(eq.to_json())
    assert back.to_json() == eq.to_json()
    doc = eq.to_dict()
    doc["encoding_version"] = "bogus"
    with pytest.raises(ValueError):
        FittedEquation.from_dict(doc)


def test_algorithm_weights_read_back_one_hot():
    eq = equation(alpha=1.0, beta_kNN=0.5, beta_RF=-0.25, beta_NN=2.0)
    assert eq.algorithm_weights() == {"SVM": 1.0, "kNN": 1.5, "RF": 0.75, "NN": 3.0}


def test_split_is_disjoint_by_key():
    recs = synthetic_records(THETA, 30, "latency", seed=9)
    recs = recs + [replace(recs[0], latency_ms=9.0)]
    train, test = split_records(recs, 0.3, seed=1)
    assert not {r.key() for r in train} & {r.key() for r in test}
    assert len(train) + len(test) == len(recs)


def test_records_are_measurement_records():
    assert all(isinstance(r, MeasurementRecord) for r in synthetic_records(THETA, 3, "latency"))


def test_refit_is_bit_identical():
    recs = synthetic_records(THETA, 120, "latency", noise_sigma=0.1, seed=10)
    assert fit(recs, "latency").to_json() == fit(list(recs), "latency").to_json()
