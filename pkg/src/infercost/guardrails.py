"""Runtime responsible-AI guardrails wrapped around a single prediction.

Five guardrails (explainability, fairness, interpretability, safety, privacy)
each take an intensity in [0, 1]. Zero disables a guardrail; a positive value
sets the fraction of that guardrail's maximum effort. Effort is expressed in
extra ``predict`` calls or window size, so cost grows with intensity and the
guardrails never interact: running several costs the sum of running each.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable

import numpy as np

from infercost.classifiers import (
    AlgorithmKind, OpCount, Prediction, TrainedModel, decision_path, inference_ops,
    kneighbors,
)

GUARDRAILS = ("expl", "fair", "interp", "safety", "privacy")
EXECUTION_ORDER = ("safety", "expl", "interp", "fair", "privacy")
# independent RNG stream per guardrail, keyed off the caller's seed
_STREAM = {"safety": 1, "expl": 2, "privacy": 5}


@dataclass(frozen=True)
class GuardrailConfig:
    expl: float = 0.0
    fair: float = 0.0
    interp: float = 0.0
    safety: float = 0.0
    privacy: float = 0.0

    def __post_init__(self):
        for name in GUARDRAILS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError(f"guardrail {name} must be a number, got {value!r}")
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"guardrail {name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, float(value))

    @classmethod
    def single(cls, name: str, intensity: float) -> "GuardrailConfig":
        if name not in GUARDRAILS:
            raise ValueError(f"unknown guardrail {name!r}")
        return cls(**{name: intensity})

    @classmethod
    def from_dict(cls, doc: dict) -> "GuardrailConfig":
        unknown = set(doc) - set(GUARDRAILS)
        if unknown:
            raise ValueError(f"unknown guardrail(s): {', '.join(sorted(unknown))}")
        return cls(**doc)

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in GUARDRAILS)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def is_off(self) -> bool:
        return not any(self.as_tuple())


OFF = GuardrailConfig()


@dataclass(frozen=True)
class GuardrailConstants:
    """Effort caps and noise scales. Every value is overridable from config."""

    k_max: int = 64           # perturbed samples for the explanation surrogate
    w_max: int = 1024         # fairness sliding-window length
    m_max: int = 32           # safety perturbation probes
    flip_ceiling: float = 0.25
    score_noise: float = 0.1
    probe_radius: float = 0.01
    explain_sigma: float = 1.0
    fd_step: float = 1e-3

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not value > 0:
                raise ValueError(f"guardrail constant {f.name} must be positive, got {value}")
        if self.flip_ceiling > 0.5:
            raise ValueError("flip_ceiling above 0.5 would invert labels on average")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "GuardrailConstants":
        if not doc:
            return cls()
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown guardrail constant(s): {', '.join(sorted(unknown))}")
        return cls(**doc)


DEFAULTS = GuardrailConstants()


def effort(intensity: float, cap: int) -> int:
    """``ceil(intensity * cap)``, at least 1 when enabled, 0 when disabled.

    The product is rounded to 9 decimals first so that e.g. 0.7 * 10 counts as
    7 rather than the 8 that binary floating point would give.
    """
    if intensity <= 0:
        return 0
    return max(1, math.ceil(round(intensity * cap, 9)))


class CountingModel:
    """Proxy that counts ``predict`` calls on a wrapped model."""

    def __init__(self, model: TrainedModel):
        self._model = model
        self.calls = 0

    def predict(self, sample) -> Prediction:
        self.calls += 1
        return self._model.predict(sample)

    def __getattr__(self, name):
        return getattr(self._model, name)


# --------------------------------------------------------------------------
# fairness

class FairnessWindow:
    """Sliding window of (group, predicted label) pairs with O(1) updates.

    Single-writer state: give each benchmark stream its own window.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be at least 1")
        self.capacity = int(capacity)
        self._items: deque[tuple[int, int]] = deque()
        self._pos = [0, 0]
        self._tot = [0, 0]

    @classmethod
    def for_intensity(cls, intensity: float, constants: GuardrailConstants = DEFAULTS):
        return cls(max(1, effort(intensity, constants.w_max)))

    def __len__(self) -> int:
        return len(self._items)

    def _evict(self) -> None:
        g, y = self._items.popleft()
        self._tot[g] -= 1
        self._pos[g] -= y

    def resize(self, capacity: int) -> None:
        self.capacity = max(1, int(capacity))
        while len(self._items) > self.capacity:
            self._evict()

    def push(self, group: int, label: int) -> None:
        g, y = int(group), int(label)
        if g not in (0, 1) or y not in (0, 1):
            raise ValueError("group and label must be 0 or 1")
        self._items.append((g, y))
        self._tot[g] += 1
        self._pos[g] += y
        if len(self._items) > self.capacity:
            self._evict()

    def rates(self) -> tuple[float | None, float | None]:
        return tuple(self._pos[g] / self._tot[g] if self._tot[g] else None for g in (0, 1))

    def gap(self) -> float:
        """|P(label=1 | group 1) - P(label=1 | group 0)|; 0 until both groups are seen."""
        r0, r1 = self.rates()
        if r0 is None or r1 is None:
            return 0.0
        return abs(r1 - r0)


def audit_fairness(window: FairnessWindow, group: int, label: int, intensity: float,
                   constants: GuardrailConstants = DEFAULTS) -> float:
    capacity = max(1, effort(intensity, constants.w_max))
    if window.capacity != capacity:
        window.resize(capacity)
    window.push(group, label)
    return window.gap()


# --------------------------------------------------------------------------
# explainability

@dataclass(frozen=True)
class Explanation:
    features: list[int]
    weights: list[float]
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def perturbation_set(model, sample, n_samples: int, rng: np.random.Generator,
                     constants: GuardrailConstants = DEFAULTS) -> np.ndarray:
    x = np.asarray(sample, dtype=np.float64)
    noise = rng.standard_normal((n_samples, x.shape[0]))
    return x + noise * (constants.explain_sigma * np.asarray(model.input_scale))


def local_surrogate(sample, perturbed: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Least-squares slope of ``scores`` on the perturbation offsets (minimum-norm)."""
    offsets = perturbed - np.asarray(sample, dtype=np.float64)
    design = np.hstack([np.ones((offsets.shape[0], 1)), offsets])
    coef, *_ = np.linalg.lstsq(design, scores, rcond=None)
    return coef[1:]


def rank_features(weights: np.ndarray) -> np.ndarray:
    """Feature indices by decreasing |weight|; ties keep index order."""
    return np.lexsort((np.arange(weights.shape[0]), -np.abs(weights)))


def explain(model, sample, intensity: float, rng_seed: int = 0,
            constants: GuardrailConstants = DEFAULTS) -> Explanation:
    """Perturbation-based local linear attribution over the top features.

    Draws ``ceil(intensity * k_max)`` Gaussian perturbations of ``sample``,
    scores each with ``model.predict`` and keeps the ``ceil(intensity * p)``
    features with the largest surrogate weights.
    """
    if not 0 < intensity <= 1:
        raise ValueError("explain needs an intensity in (0, 1]")
    p = model.meta.p
    k = effort(intensity, constants.k_max)
    rng = np.random.default_rng([rng_seed, _STREAM["expl"]])
    perturbed = perturbation_set(model, sample, k, rng, constants)
    scores = np.array([model.predict(row).score for row in perturbed])
    weights = local_surrogate(sample, perturbed, scores)
    top = rank_features(weights)[:effort(intensity, p)]
    return Explanation(features=[int(j) for j in top],
                       weights=[float(weights[j]) for j in top], n_samples=k)


# --------------------------------------------------------------------------
# interpretability

def interpret(model, sample, intensity: float, base: Prediction | None = None,
              constants: GuardrailConstants = DEFAULTS) -> dict:
    """Family-specific trace of why the model decided as it did.

    RF: decision paths of the first ``ceil(intensity * n_trees)`` trees.
    kNN: the ``ceil(intensity * k)`` nearest stored rows.
    SVM / NN: finite-difference score sensitivity for the first
    ``ceil(intensity * p)`` features, one ``predict`` per feature; pass
    ``base`` to reuse an existing prediction at ``sample``.
    """
    kind = model.kind
    if kind is AlgorithmKind.RF:
        n_paths = effort(intensity, len(model.params["trees"]))
        paths = [decision_path(model, sample, i) for i in range(n_paths)]
        return {"kind": "paths",
                "paths": [[{"feature": f, "threshold": thr, "left": lft} for f, thr, lft in path]
                          for path in paths]}
    if kind is AlgorithmKind.KNN:
        idx, dist = kneighbors(model, sample, effort(intensity, model.params["k"]))
        return {"kind": "neighbors", "indices": idx.tolist(), "distances": dist.tolist()}
    x = np.asarray(sample, dtype=np.float64)
    if base is None:
        base = model.predict(x)
    n_feat = effort(intensity, model.meta.p)
    grads = []
    for j in range(n_feat):
        h = constants.fd_step * float(model.input_scale[j])
        probe = x.copy()
        probe[j] += h
        grads.append((model.predict(probe).score - base.score) / h)
    return {"kind": "sensitivity", "features": list(range(n_feat)), "gradients": grads}


# --------------------------------------------------------------------------
# safety

@dataclass(frozen=True)
class SafetyReport:
    stable: bool
    flips: int
    probes: int
    in_bounds: bool

    def to_dict(self) -> dict:
        return asdict(self)


def safety_probe(model, sample, intensity: float, rng_seed: int = 0,
                 base: Prediction | None = None,
                 constants: GuardrailConstants = DEFAULTS) -> SafetyReport:
    """Check the input against the training range, then probe label stability.

    ``ceil(intensity * m_max)`` uniform perturbations of radius ``probe_radius``
    times the per-feature training scale are scored; the prediction is stable
    iff none of them changes the label.
    """
    x = np.asarray(sample, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    scale = np.asarray(model.input_scale)
    span = np.asarray(model.input_high) - np.asarray(model.input_low)
    slack = np.where(np.isfinite(span), span, 0.0)
    in_bounds = bool(np.all((x >= model.input_low - slack) & (x <= model.input_high + slack)))
    if base is None:
        base = model.predict(x)
    m = effort(intensity, constants.m_max)
    rng = np.random.default_rng([rng_seed, _STREAM["safety"]])
    noise = rng.uniform(-1.0, 1.0, size=(m, x.shape[0])) * (constants.probe_radius * scale)
    flips = sum(model.predict(x + d).label != base.label for d in noise)
    return SafetyReport(stable=flips == 0, flips=int(flips), probes=m, in_bounds=in_bounds)


# --------------------------------------------------------------------------
# privacy

def randomized_response(labels: np.ndarray, scores: np.ndarray, intensity: float,
                        rng: np.random.Generator,
                        constants: GuardrailConstants = DEFAULTS) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized privatization: flip each label w.p. ``intensity * flip_ceiling``
    and add uniform noise of half-width ``intensity * score_noise`` to each score.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    flip = rng.random(labels.shape) < intensity * constants.flip_ceiling
    half = intensity * constants.score_noise
    noise = rng.uniform(-half, half, size=scores.shape)
    return np.where(flip, 1 - labels, labels), np.clip(scores + noise, 0.0, 1.0)


def privatize(score: float, label: int, intensity: float, rng_seed: int = 0,
              constants: GuardrailConstants = DEFAULTS) -> tuple[float, int]:
    if intensity <= 0:
        return score, label
    rng = np.random.default_rng([rng_seed, _STREAM["privacy"]])
    labels, scores = randomized_response(np.array([label]), np.array([score]),
                                         intensity, rng, constants)
    return float(scores[0]), int(labels[0])


# --------------------------------------------------------------------------
# composition

@dataclass
class GuardedPrediction:
    label: int
    score: float
    explanation: dict | None = None
    interpretation: dict | None = None
    fairness_report: dict | None = None
    safety_report: dict | None = None
    overhead_marks: dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_marks: bool = False) -> dict:
        out: dict[str, Any] = {"label": self.label, "score": self.score}
        for name in ("explanation", "interpretation", "fairness_report", "safety_report"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if include_marks and self.overhead_marks:
            out["overhead_marks"] = self.overhead_marks
        return out

    def to_json(self, include_marks: bool = False) -> str:
        return json.dumps(self.to_dict(include_marks), sort_keys=True)


def _guarded(name: str, marks: dict, fn: Callable[[], Any]) -> Any:
    start = time.perf_counter()
    try:
        return fn()
    except Exception as exc:  # guardrail faults degrade to a marked report
        return {"error": f"{type(exc).__name__}: {exc}"}
    finally:
        marks[name] = time.perf_counter() - start


def guarded_predict(model, sample, cfg: GuardrailConfig = OFF,
                    state: FairnessWindow | None = None, rng_seed: int = 0,
                    group: int = 0, constants: GuardrailConstants = DEFAULTS) -> GuardedPrediction:
    """One inference with every enabled guardrail applied.

    The bare prediction runs first; errors from it propagate. Guardrails then
    run in the order safety, expl, interp, fair, privacy. The fairness audit
    sees the unprivatized label. ``state`` is the stream's fairness window;
    a throwaway window is used when it is omitted.
    """
    base = model.predict(sample)
    out = GuardedPrediction(label=base.label, score=base.score)
    if cfg.is_off:
        return out
    marks = out.overhead_marks
    if cfg.safety > 0:
        report = _guarded("safety", marks, lambda: safety_probe(
            model, sample, cfg.safety, rng_seed, base, constants))
        out.safety_report = report.to_dict() if isinstance(report, SafetyReport) else report
    if cfg.expl > 0:
        expl = _guarded("expl", marks, lambda: explain(model, sample, cfg.expl, rng_seed, constants))
        out.explanation = expl.to_dict() if isinstance(expl, Explanation) else expl
    if cfg.interp > 0:
        out.interpretation = _guarded("interp", marks, lambda: interpret(
            model, sample, cfg.interp, base, constants))
    if cfg.fair > 0:
        window = state if state is not None else FairnessWindow.for_intensity(cfg.fair, constants)

        def audit():
            gap = audit_fairness(window, group, base.label, cfg.fair, constants)
            return {"gap": gap, "window": len(window)}

        out.fairness_report = _guarded("fair", marks, audit)
    if cfg.privacy > 0:
        noisy = _guarded("privacy", marks, lambda: privatize(
            base.score, base.label, cfg.privacy, rng_seed, constants))
        if isinstance(noisy, tuple):
            out.score, out.label = noisy
    return out


# --------------------------------------------------------------------------
# closed-form cost

def extra_predict_calls(model, cfg: GuardrailConfig,
                        constants: GuardrailConstants = DEFAULTS) -> dict[str, int]:
    """Extra ``predict`` calls each guardrail makes beyond the bare prediction."""
    kind = model.kind
    p = model.meta.p
    interp_calls = 0
    if kind in (AlgorithmKind.SVM, AlgorithmKind.NN):
        interp_calls = effort(cfg.interp, p)
    return {
        "safety": effort(cfg.safety, constants.m_max),
        "expl": effort(cfg.expl, constants.k_max),
        "interp": interp_calls,
        "fair": 0,
        "privacy": 0,
    }


def guardrail_ops(model, cfg: GuardrailConfig,
                  constants: GuardrailConstants = DEFAULTS) -> dict[str, OpCount]:
    """Arithmetic each guardrail adds, including the predict calls it makes."""
    p = model.meta.p
    per_call = inference_ops(model)
    calls = extra_predict_calls(model, cfg, constants)
    ops = {name: per_call * calls[name] for name in GUARDRAILS}
    if cfg.safety > 0:
        m = calls["safety"]
        ops["safety"] += OpCount(mults=m * p, adds=m * p, compares=2 * p + m)
    if cfg.expl > 0:
        k = calls["expl"]
        q = p + 1
        ranked = math.ceil(math.log2(p)) if p > 1 else 1
        ops["expl"] += OpCount(mults=k * p + k * q * q, adds=k * p + k * q * q,
                               compares=p * ranked)
    if cfg.interp > 0:
        kind = model.kind
        if kind is AlgorithmKind.RF:
            trees = model.params["trees"]
            used = trees[:effort(cfg.interp, len(trees))]
            ops["interp"] += OpCount(compares=sum(t["depth"] for t in used))
        elif kind is AlgorithmKind.KNN:
            n = model.params["X"].shape[0]
            ops["interp"] += OpCount(mults=n * model.meta.p_effective,
                                     adds=n * model.meta.p_effective, compares=n)
        else:
            c = calls["interp"]
            ops["interp"] += OpCount(mults=2 * c, adds=2 * c)
    if cfg.fair > 0:
        ops["fair"] += OpCount(adds=4, compares=3)
    if cfg.privacy > 0:
        ops["privacy"] += OpCount(mults=2, adds=2, compares=3)
    return ops


def guarded_ops(model, cfg: GuardrailConfig, constants: GuardrailConstants = DEFAULTS) -> OpCount:
    """Total arithmetic of one ``guarded_predict`` call."""
    total = inference_ops(model)
    for ops in guardrail_ops(model, cfg, constants).values():
        total = total + ops
    return total
