"""Linear cost models for inference latency and energy.

Both equations share one additive form over algorithm, dataset and guardrail
terms and differ only in how dataset size enters::

    latency = alpha + beta_A[a] + beta_D * ln(n) + gamma_D * p + delta_D * t + sum_i phi_i * g_i + eps
    energy  = alpha + beta_A[a] + beta_D * n     + gamma_D * p + delta_D * t + sum_i phi_i * g_i + eps

Each target gets its own, separately fitted, coefficient set.

Algorithm encoding: the four-way one-hot ``(SVM, kNN, RF, NN)`` is collinear
with the intercept, so SVM is the reference level. ``alpha`` is the SVM
baseline and ``beta_kNN`` etc. are contrasts against it; the one-hot weight
of family ``a`` is ``alpha + beta_a`` (``alpha`` for SVM).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from infercost.classifiers import AlgorithmKind
from infercost.datasets import DataType
from infercost.guardrails import GUARDRAILS, GuardrailConfig

TARGETS = ("latency", "energy")
MIN_RECORDS = 13
COND_LIMIT = 1e10

_BASE_NAMES = ("alpha", "beta_kNN", "beta_RF", "beta_NN", "beta_D", "gamma_D")
_G_NAMES = tuple(f"phi_{g}" for g in GUARDRAILS)
_CONTRASTS = (AlgorithmKind.KNN, AlgorithmKind.RF, AlgorithmKind.NN)


class UnderdeterminedError(ValueError):
    """Too few records to estimate the requested coefficients."""


class RankDeficientError(ValueError):
    """The design matrix has collinear columns."""

    def __init__(self, columns: Sequence[str], condition: float):
        self.columns = tuple(columns)
        self.condition = condition
        super().__init__(
            f"design matrix is rank deficient (condition estimate {condition:.3g}); "
            f"collinear columns: {', '.join(self.columns)}")


def coefficient_names(t_onehot: bool = False) -> tuple[str, ...]:
    t_names = ("delta_text", "delta_image") if t_onehot else ("delta_D",)
    return _BASE_NAMES + t_names + _G_NAMES


def column_labels(target: str, t_onehot: bool = False) -> tuple[str, ...]:
    size = "log_n" if target == "latency" else "n"
    t_cols = ("t_text", "t_image") if t_onehot else ("t",)
    return ("intercept", "algo_kNN", "algo_RF", "algo_NN", size, "p") + t_cols + tuple(
        f"g_{g}" for g in GUARDRAILS)


def encoding_version(t_onehot: bool = False) -> str:
    return "ref-svm/t-onehot/v1" if t_onehot else "ref-svm/t-code/v1"


def _check_target(target: str) -> str:
    if target not in TARGETS:
        raise ValueError(f"target must be 'latency' or 'energy', got {target!r}")
    return target


@dataclass(frozen=True)
class PredictorInputs:
    algorithm: AlgorithmKind
    n: float
    p: int
    t: DataType
    g: GuardrailConfig = GuardrailConfig()

    def __post_init__(self):
        object.__setattr__(self, "algorithm", AlgorithmKind.parse(self.algorithm))
        object.__setattr__(self, "t", DataType.parse(self.t))
        if isinstance(self.g, dict):
            object.__setattr__(self, "g", GuardrailConfig.from_dict(self.g))
        # n may be real for what-if predictions; records always carry integers
        n = float(self.n)
        if not (math.isfinite(n) and n >= 1) or int(self.p) < 1:
            raise ValueError(f"need n >= 1 and p >= 1, got n={self.n}, p={self.p}")
        object.__setattr__(self, "n", int(n) if n.is_integer() else n)
        object.__setattr__(self, "p", int(self.p))

    @classmethod
    def from_record(cls, record) -> "PredictorInputs":
        return cls(record.algorithm, record.n, record.p, record.t, record.g)


def design_row(inputs: PredictorInputs, target: str, t_onehot: bool = False) -> np.ndarray:
    """Regressor vector for one configuration.

    Order: intercept, kNN, RF, NN contrasts, size term (ln n or n), p, t
    (code 0/1/2, or text/image indicators when ``t_onehot``), then the five
    guardrail intensities.
    """
    _check_target(target)
    algo = [1.0 if inputs.algorithm is k else 0.0 for k in _CONTRASTS]
    size = math.log(inputs.n) if target == "latency" else float(inputs.n)
    if t_onehot:
        t_cols = [float(inputs.t is DataType.TEXT), float(inputs.t is DataType.IMAGE)]
    else:
        t_cols = [float(int(inputs.t))]
    return np.array([1.0, *algo, size, float(inputs.p), *t_cols, *inputs.g.as_tuple()])


def design_matrix(inputs: Iterable[PredictorInputs], target: str, t_onehot: bool = False) -> np.ndarray:
    rows = [design_row(i, target, t_onehot) for i in inputs]
    width = len(coefficient_names(t_onehot))
    return np.array(rows).reshape(len(rows), width)


def response(records, target: str) -> np.ndarray:
    _check_target(target)
    attr = "latency_ms" if target == "latency" else "energy_mj"
    return np.array([float(getattr(r, attr)) for r in records])


@dataclass(frozen=True)
class FittedEquation:
    target: str
    coefficients: dict[str, float]
    sigma_eps: float
    std_errors: dict[str, float] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    t_onehot: bool = False

    @property
    def encoding_version(self) -> str:
        return encoding_version(self.t_onehot)

    @property
    def alpha(self) -> float:
        return self.coefficients["alpha"]

    @property
    def beta_A(self) -> dict[str, float]:
        return {k.value: self.coefficients[f"beta_{k.value}"] for k in _CONTRASTS}

    @property
    def beta_D(self) -> float:
        return self.coefficients["beta_D"]

    @property
    def gamma_D(self) -> float:
        return self.coefficients["gamma_D"]

    @property
    def delta_D(self) -> float | dict[str, float]:
        if self.t_onehot:
            return {"text": self.coefficients["delta_text"], "image": self.coefficients["delta_image"]}
        return self.coefficients["delta_D"]

    @property
    def phi_G(self) -> dict[str, float]:
        return {g: self.coefficients[f"phi_{g}"] for g in GUARDRAILS}

    def algorithm_weights(self) -> dict[str, float]:
        """Per-family baseline, i.e. the coefficients of a four-way one-hot encoding."""
        out = {AlgorithmKind.SVM.value: self.alpha}
        for name, contrast in self.beta_A.items():
            out[name] = self.alpha + contrast
        return out

    def vector(self) -> np.ndarray:
        return np.array([self.coefficients[c] for c in coefficient_names(self.t_onehot)])

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            **{name: self.coefficients[name] for name in coefficient_names(self.t_onehot)},
            "sigma_eps": self.sigma_eps,
            "std_errors": dict(self.std_errors),
            "diagnostics": dict(self.diagnostics),
            "encoding_version": self.encoding_version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedEquation":
        version = doc.get("encoding_version", encoding_version(False))
        if version not in (encoding_version(False), encoding_version(True)):
            raise ValueError(f"unsupported encoding version {version!r}")
        onehot = version == encoding_version(True)
        names = coefficient_names(onehot)
        missing = [n for n in names if n not in doc]
        if missing:
            raise ValueError(f"fitted equation lacks coefficient(s): {', '.join(missing)}")
        return cls(target=_check_target(doc["target"]),
                   coefficients={n: float(doc[n]) for n in names},
                   sigma_eps=float(doc.get("sigma_eps", 0.0)),
                   std_errors={k: float(v) for k, v in doc.get("std_errors", {}).items()},
                   diagnostics=dict(doc.get("diagnostics", {})), t_onehot=onehot)

    @classmethod
    def from_json(cls, text: str) -> "FittedEquation":
        return cls.from_dict(json.loads(text))


def _collinear_columns(x: np.ndarray, labels: Sequence[str], cond_limit: float):
    """(condition estimate, labels of columns involved in a near-dependency)."""
    norms = np.linalg.norm(x, axis=0)
    zero = norms == 0
    involved = set(np.flatnonzero(zero).tolist())
    live = np.flatnonzero(~zero)
    _, s, vt = np.linalg.svd(x[:, live] / norms[live], full_matrices=False)
    cond = s[0] / s[-1] if s[-1] > 0 else math.inf
    if cond > cond_limit:
        null = vt[s < s[0] / cond_limit]
        if null.size == 0:
            null = vt[-1:]
        involved |= {int(live[j]) for j in np.flatnonzero(np.abs(null).max(axis=0) > 1e-6)}
    if involved:
        cond = math.inf if zero.any() else cond
    return cond, [labels[j] for j in sorted(involved)]


def fit(records: Sequence, target: str, columns: Sequence[str] | None = None,
        drop_constant: bool = False, t_onehot: bool = False,
        cond_limit: float = COND_LIMIT) -> FittedEquation:
    """Ordinary least squares via Householder QR.

    By default all coefficients are estimated and a collinear design raises
    :class:`RankDeficientError`. ``columns`` restricts estimation to the named
    coefficients (``alpha`` is always kept); ``drop_constant`` additionally
    drops every regressor that does not vary across ``records``. Coefficients
    left out of the estimate are reported as 0 with a standard error of 0.
    """
    _check_target(target)
    names = coefficient_names(t_onehot)
    labels = column_labels(target, t_onehot)
    records = list(records)
    x = design_matrix((PredictorInputs.from_record(r) for r in records), target, t_onehot)
    y = response(records, target)

    free = list(range(len(names)))
    if columns is not None:
        unknown = set(columns) - set(names)
        if unknown:
            raise ValueError(f"unknown coefficient(s): {', '.join(sorted(unknown))}")
        free = [j for j in free if j == 0 or names[j] in columns]
    if drop_constant and len(records):
        free = [j for j in free if j == 0 or np.ptp(x[:, j]) > 0]

    rows, k = x.shape[0], len(free)
    if rows < max(MIN_RECORDS, k + 1):
        raise UnderdeterminedError(
            f"{rows} records cannot determine {k} coefficients (need at least {max(MIN_RECORDS, k + 1)})")
    xf = x[:, free]
    cond, bad = _collinear_columns(xf, [labels[j] for j in free], cond_limit)
    if bad:
        raise RankDeficientError(bad, cond)

    q, r = np.linalg.qr(xf)
    beta = solve_triangular(r, q.T @ y)
    resid = y - xf @ beta
    rss = float(resid @ resid)
    dof = rows - k
    sigma = math.sqrt(rss / dof)
    r_inv = solve_triangular(r, np.eye(k))
    se = sigma * np.sqrt((r_inv ** 2).sum(axis=1))
    tss = float(((y - y.mean()) ** 2).sum())

    coefficients = dict.fromkeys(names, 0.0)
    std_errors = dict.fromkeys(names, 0.0)
    for j, b, s in zip(free, beta, se):
        coefficients[names[j]] = float(b)
        std_errors[names[j]] = float(s)
    diagnostics = {
        "r_squared": 1.0 - rss / tss if tss > 0 else 0.0,
        "record_count": rows,
        "condition_estimate": float(cond),
        "free_coefficients": [names[j] for j in free],
        "residual_dof": dof,
    }
    return FittedEquation(target=target, coefficients=coefficients, sigma_eps=sigma,
                          std_errors=std_errors, diagnostics=diagnostics, t_onehot=t_onehot)


@dataclass(frozen=True)
class PointPrediction:
    point: float
    low: float
    high: float

    def to_dict(self) -> dict:
        return {"point": self.point, "interval": [self.low, self.high]}


def predict(eq: FittedEquation, inputs: PredictorInputs) -> PointPrediction:
    """Point estimate (error term at its zero mean) with a +/- 2 sigma band.

    The dot product is a correctly rounded ``math.fsum``, so results do not
    depend on summation order or BLAS.
    """
    row = design_row(inputs, eq.target, eq.t_onehot)
    point = math.fsum(c * v for c, v in zip(eq.vector().tolist(), row.tolist()))
    band = 2.0 * eq.sigma_eps
    return PointPrediction(point=point, low=point - band, high=point + band)


def evaluate(eq: FittedEquation, holdout: Sequence) -> dict[str, float]:
    """RMSE, MAE and R^2 on held-out records (R^2 is 0 when the response is constant)."""
    holdout = list(holdout)
    if not holdout:
        raise ValueError("holdout set is empty")
    y = response(holdout, eq.target)
    yhat = np.array([predict(eq, PredictorInputs.from_record(r)).point for r in holdout])
    err = y - yhat
    tss = float(((y - y.mean()) ** 2).sum())
    rss = float(err @ err)
    return {
        "rmse": math.sqrt(rss / len(y)),
        "mae": float(np.abs(err).mean()),
        "r_squared_holdout": 1.0 - rss / tss if tss > 0 else 0.0,
        "count": len(y),
    }


def split_records(records: Sequence, holdout_fraction: float = 0.5, seed: int = 0):
    """Random train/holdout split that never puts one record key on both sides."""
    if not 0 < holdout_fraction < 1:
        raise ValueError("holdout_fraction must be in (0, 1)")
    keys = sorted({r.key() for r in records})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(keys))
    cut = int(round(len(keys) * holdout_fraction))
    held = {keys[i] for i in order[:cut]}
    train = [r for r in records if r.key() not in held]
    test = [r for r in records if r.key() in held]
    return train, test


def random_inputs(count: int, rng: np.random.Generator, n_max: int = 10_000,
                  p_max: int = 64) -> list[PredictorInputs]:
    """Random configurations spanning every regressor (for oracles and demos)."""
    algos = list(AlgorithmKind)
    out = []
    for _ in range(count):
        g = [0.0 if rng.random() < 0.4 else float(rng.random()) for _ in GUARDRAILS]
        out.append(PredictorInputs(
            algorithm=algos[int(rng.integers(4))],
            n=int(np.exp(rng.uniform(0.0, math.log(n_max)))),
            p=int(rng.integers(1, p_max + 1)),
            t=int(rng.integers(3)),
            g=GuardrailConfig(*g)))
    return out


def synthetic_records(coefficients: Sequence[float], count: int, target: str,
                      noise_sigma: float = 0.0, seed: int = 0, t_onehot: bool = False):
    """Records whose ``target`` response follows the linear model exactly,
    plus optional Gaussian noise. The other metric is filled with 1.0."""
    from infercost.measurement import MeasurementRecord

    _check_target(target)
    theta = np.asarray(coefficients, dtype=np.float64)
    rng = np.random.default_rng(seed)
    inputs = random_inputs(count, rng)
    x = design_matrix(inputs, target, t_onehot)
    y = x @ theta + noise_sigma * rng.standard_normal(count)
    records = []
    for i, (inp, value) in enumerate(zip(inputs, y)):
        metrics = {"latency_ms": float(value), "energy_mj": 1.0} if target == "latency" else \
            {"latency_ms": 1.0, "energy_mj": float(value)}
        records.append(MeasurementRecord(
            algorithm=inp.algorithm, n=inp.n, p=inp.p, t=inp.t, g=inp.g, reps=200, warmup=50,
            provider="synthetic", seed=i, timestamp="", **metrics))
    return records
