"""Trainable inference engines for the four classifier families.

Training is intentionally plain (sub-gradient hinge descent, CART with Gini,
a two-layer perceptron, memorization); what matters downstream is that the
resulting models are deployable and that their per-inference work is known in
closed form via :func:`op_count`.

Every model consumes raw feature rows and applies the data-type transform from
:mod:`infercost.datasets` itself, so preprocessing is part of the timed unit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Any

import numpy as np

from infercost.datasets import DataType, Dataset, effective_dim, preprocess, preprocess_batch

MODEL_FORMAT = "infercost-model"
MODEL_VERSION = 1


class AlgorithmKind(str, Enum):
    SVM = "SVM"
    KNN = "kNN"
    RF = "RF"
    NN = "NN"

    @classmethod
    def parse(cls, value) -> "AlgorithmKind":
        if isinstance(value, AlgorithmKind):
            return value
        key = str(value).strip().replace("-", "").upper()
        for kind in cls:
            if kind.value.upper() == key:
                return kind
        raise ValueError(f"unknown algorithm {value!r}; expected one of SVM, kNN, RF, NN")

    def one_hot(self) -> tuple[int, int, int, int]:
        """Four-slot indicator in (SVM, kNN, RF, NN) order."""
        return tuple(int(k is self) for k in AlgorithmKind)


ALGORITHMS = tuple(AlgorithmKind)


@dataclass(frozen=True)
class Hyper:
    """Family hyperparameters. Defaults are the fixed treatment per family."""

    k: int = 5
    n_trees: int = 16
    max_depth: int = 8
    bootstrap: bool = True
    hidden: int = 32
    nn_epochs: int = 200
    nn_lr: float = 0.5
    kernel: str = "linear"
    rbf_gamma: float | None = None
    svm_lambda: float = 1e-3
    svm_epochs: int = 30
    svm_batch: int = 32
    rbf_iters: int = 2000

    def validate(self, kind: AlgorithmKind, n: int) -> None:
        if kind is AlgorithmKind.KNN:
            if self.k < 1 or self.k % 2 == 0:
                raise ValueError(f"k must be a positive odd integer, got {self.k}")
            if self.k > n:
                raise ValueError(f"k={self.k} exceeds the training set size {n}")
        elif kind is AlgorithmKind.RF:
            if self.n_trees < 1:
                raise ValueError(f"RF needs at least one tree, got {self.n_trees}")
            if self.max_depth < 0:
                raise ValueError(f"max_depth must be non-negative, got {self.max_depth}")
        elif kind is AlgorithmKind.NN:
            if self.hidden < 1:
                raise ValueError(f"NN hidden width must be at least 1, got {self.hidden}")
            if self.nn_epochs < 0 or self.nn_lr <= 0:
                raise ValueError("NN needs nn_epochs >= 0 and nn_lr > 0")
        elif kind is AlgorithmKind.SVM:
            if self.kernel not in ("linear", "rbf"):
                raise ValueError(f"SVM kernel must be 'linear' or 'rbf', got {self.kernel!r}")
            if self.svm_lambda <= 0 or self.svm_epochs < 1 or self.svm_batch < 1:
                raise ValueError("SVM needs svm_lambda > 0, svm_epochs >= 1, svm_batch >= 1")
            if self.rbf_gamma is not None and self.rbf_gamma <= 0:
                raise ValueError("rbf_gamma must be positive")


@dataclass(frozen=True)
class TrainMeta:
    n_train: int
    p: int
    t: int
    seed: int
    p_effective: int


@dataclass(frozen=True)
class OpCount:
    mults: int = 0
    adds: int = 0
    compares: int = 0

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(self.mults + other.mults, self.adds + other.adds,
                       self.compares + other.compares)

    def __mul__(self, factor: int) -> "OpCount":
        return OpCount(self.mults * factor, self.adds * factor, self.compares * factor)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Prediction:
    label: int
    score: float

    def to_dict(self) -> dict:
        return {"label": self.label, "score": self.score}


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """A fitted classifier. Immutable; safe to share between threads."""

    kind: AlgorithmKind
    params: dict[str, Any]
    meta: TrainMeta
    hyper: Hyper
    # per-feature statistics of the raw training rows
    input_scale: np.ndarray
    input_low: np.ndarray
    input_high: np.ndarray

    @property
    def p(self) -> int:
        return self.meta.p

    @property
    def t(self) -> DataType:
        return DataType(self.meta.t)

    def predict(self, sample) -> Prediction:
        return predict(self, sample)


def _sigmoid(m: float) -> float:
    if m >= 0:
        return 1.0 / (1.0 + math.exp(-m))
    e = math.exp(m)
    return e / (1.0 + e)


def _sigmoid_vec(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# --------------------------------------------------------------------------
# training

def train(kind, data: Dataset, hyper: Hyper | None = None, seed: int = 0) -> TrainedModel:
    """Fit a model of family ``kind`` on ``data``; deterministic given ``seed``."""
    kind = AlgorithmKind.parse(kind)
    hyper = hyper or Hyper()
    hyper.validate(kind, data.n)
    y = np.asarray(data.labels, dtype=np.int64)
    if np.unique(y).size < 2:
        raise ValueError("training data contains a single class")
    rng = np.random.default_rng(seed)
    z = preprocess_batch(data.samples, data.t)
    trainer = {
        AlgorithmKind.SVM: _train_svm,
        AlgorithmKind.KNN: _train_knn,
        AlgorithmKind.RF: _train_rf,
        AlgorithmKind.NN: _train_nn,
    }[kind]
    params = trainer(z, y, hyper, rng)
    scale = data.samples.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    meta = TrainMeta(n_train=data.n, p=data.p, t=int(data.t), seed=int(seed),
                     p_effective=effective_dim(data.p, data.t))
    return TrainedModel(kind=kind, params=params, meta=meta, hyper=hyper,
                        input_scale=scale, input_low=data.samples.min(axis=0),
                        input_high=data.samples.max(axis=0))


def _train_knn(z, y, hyper, rng):
    return {"X": z.copy(), "y": y.astype(np.float64), "k": hyper.k}


def _train_svm(z, y, hyper, rng):
    ys = 2.0 * y - 1.0
    n, p = z.shape
    lam = hyper.svm_lambda
    if hyper.kernel == "rbf":
        return _train_svm_rbf(z, ys, hyper, rng)
    w = np.zeros(p)
    b = 0.0
    w_avg = np.zeros(p)
    b_avg = 0.0
    steps = 0
    averaged = 0
    total = hyper.svm_epochs * math.ceil(n / hyper.svm_batch)
    for _ in range(hyper.svm_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.svm_batch):
            idx = order[start:start + hyper.svm_batch]
            steps += 1
            eta = 1.0 / (lam * (steps + 100))
            zb, yb = z[idx], ys[idx]
            viol = yb * (zb @ w + b) < 1.0
            grad_w = lam * w - (yb[viol, None] * zb[viol]).sum(axis=0) / len(idx)
            grad_b = -yb[viol].sum() / len(idx)
            w = w - eta * grad_w
            b = b - eta * grad_b
            # Polyak averaging over the second half of training
            if steps > total // 2:
                averaged += 1
                w_avg += (w - w_avg) / averaged
                b_avg += (b - b_avg) / averaged
    if averaged:
        w, b = w_avg, b_avg
    support = ys * (z @ w + b) <= 1.0
    return {"kernel": "linear", "w": w, "b": float(b), "support_vectors": z[support].copy()}


def _train_svm_rbf(z, ys, hyper, rng):
    n, p = z.shape
    gamma = hyper.rbf_gamma if hyper.rbf_gamma is not None else 1.0 / p
    lam = hyper.svm_lambda
    alpha = np.zeros(n)
    for step in range(1, hyper.rbf_iters + 1):
        i = int(rng.integers(n))
        nz = np.flatnonzero(alpha)
        if nz.size:
            k = np.exp(-gamma * ((z[nz] - z[i]) ** 2).sum(axis=1))
            dec = (alpha[nz] * ys[nz] * k).sum() / (lam * step)
        else:
            dec = 0.0
        if ys[i] * dec < 1.0:
            alpha[i] += 1.0
    sv = np.flatnonzero(alpha)
    coef = alpha[sv] * ys[sv] / (lam * hyper.rbf_iters)
    return {"kernel": "rbf", "gamma": float(gamma), "b": 0.0,
            "support_vectors": z[sv].copy(), "dual_coef": coef}


def _gini_split(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float] | None:
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], ys[order]
    m = xs.shape[0]
    cum = np.cumsum(ys)
    left_n = np.arange(1, m, dtype=np.float64)
    right_n = m - left_n
    left_pos = cum[:-1]
    right_pos = cum[-1] - left_pos
    ql = left_pos / left_n
    qr = right_pos / right_n
    impurity = (left_n * 2 * ql * (1 - ql) + right_n * 2 * qr * (1 - qr)) / m
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    i = int(np.argmin(impurity))
    return float(impurity[i]), float(0.5 * (xs[i] + xs[i + 1]))


def _build_tree(z, y, idx, max_depth, max_features, rng) -> dict:
    feature, threshold, left, right, value = [], [], [], [], []
    depth_reached = 0

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), idx, 0)]
    while stack:
        node, rows, depth = stack.pop()
        yr = y[rows]
        q = float(yr.mean())
        value[node] = q
        depth_reached = max(depth_reached, depth)
        if depth >= max_depth or q in (0.0, 1.0) or rows.size < 2:
            continue
        parent = 2 * q * (1 - q)
        best = None
        for f in rng.choice(z.shape[1], size=max_features, replace=False):
            found = _gini_split(z[rows, f], yr)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], found[1], int(f))
        if best is None or best[0] >= parent - 1e-12:
            continue
        _, thr, f = best
        go_left = z[rows, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], rows[~go_left], depth + 1))
        stack.append((left[node], rows[go_left], depth + 1))
    return {"feature": feature, "threshold": threshold, "left": left, "right": right,
            "value": value, "depth": depth_reached}


def _train_rf(z, y, hyper, rng):
    n, p = z.shape
    max_features = max(1, int(round(math.sqrt(p))))
    yf = y.astype(np.float64)
    trees = []
    for _ in range(hyper.n_trees):
        rows = rng.integers(0, n, size=n) if hyper.bootstrap else np.arange(n)
        trees.append(_build_tree(z, yf, rows, hyper.max_depth, max_features, rng))
    return {"trees": trees}


def _train_nn(z, y, hyper, rng):
    n, p = z.shape
    h = hyper.hidden
    w1 = rng.standard_normal((h, p)) * math.sqrt(2.0 / p)
    b1 = np.zeros(h)
    w2 = rng.standard_normal(h) * math.sqrt(1.0 / h)
    b2 = 0.0
    yf = y.astype(np.float64)
    for _ in range(hyper.nn_epochs):
        pre = z @ w1.T + b1
        act = np.maximum(pre, 0.0)
        out = _sigmoid_vec(act @ w2 + b2)
        d_out = (out - yf) / n
        g_w2 = act.T @ d_out
        g_b2 = d_out.sum()
        d_act = np.outer(d_out, w2) * (pre > 0)
        g_w1 = d_act.T @ z
        g_b1 = d_act.sum(axis=0)
        w1 -= hyper.nn_lr * g_w1
        b1 -= hyper.nn_lr * g_b1
        w2 -= hyper.nn_lr * g_w2
        b2 -= hyper.nn_lr * g_b2
    return {"w1": w1, "b1": b1, "w2": w2, "b2": float(b2)}


# --------------------------------------------------------------------------
# inference

def _check_sample(model: TrainedModel, sample) -> np.ndarray:
    x = np.asarray(sample, dtype=np.float64)
    if x.shape != (model.meta.p,):
        raise ValueError(f"expected a row of {model.meta.p} features, got shape {x.shape}")
    return x


def _tree_leaf(tree: dict, z: np.ndarray) -> int:
    feature, threshold, left, right = tree["feature"], tree["threshold"], tree["left"], tree["right"]
    node = 0
    while feature[node] >= 0:
        node = left[node] if z[feature[node]] <= threshold[node] else right[node]
    return node


def _score(model: TrainedModel, z: np.ndarray) -> float:
    prm = model.params
    kind = model.kind
    if kind is AlgorithmKind.SVM:
        if prm["kernel"] == "linear":
            return _sigmoid(float(prm["w"] @ z) + prm["b"])
        k = np.exp(-prm["gamma"] * ((prm["support_vectors"] - z) ** 2).sum(axis=1))
        return _sigmoid(float(prm["dual_coef"] @ k) + prm["b"])
    if kind is AlgorithmKind.KNN:
        d = ((prm["X"] - z) ** 2).sum(axis=1)
        k = prm["k"]
        nearest = np.argpartition(d, k - 1)[:k] if k < d.shape[0] else np.arange(d.shape[0])
        return float(prm["y"][nearest].mean())
    if kind is AlgorithmKind.RF:
        trees = prm["trees"]
        return sum(t["value"][_tree_leaf(t, z)] for t in trees) / len(trees)
    hidden = np.maximum(prm["w1"] @ z + prm["b1"], 0.0)
    return _sigmoid(float(prm["w2"] @ hidden) + prm["b2"])


def predict(model: TrainedModel, sample) -> Prediction:
    """Label and score for one raw feature row; ``label == 1`` iff ``score >= 0.5``."""
    z = preprocess(_check_sample(model, sample), model.meta.t)
    score = _score(model, z)
    return Prediction(label=int(score >= 0.5), score=score)


def predict_scores(model: TrainedModel, rows) -> np.ndarray:
    return np.array([predict(model, r).score for r in np.asarray(rows, dtype=np.float64)])


def accuracy(model: TrainedModel, data: Dataset) -> float:
    labels = (predict_scores(model, data.samples) >= 0.5).astype(np.int64)
    return float((labels == data.labels).mean())


def kneighbors(model: TrainedModel, sample, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and Euclidean distances of the ``k`` nearest stored rows, nearest first."""
    if model.kind is not AlgorithmKind.KNN:
        raise ValueError("kneighbors needs a kNN model")
    z = preprocess(_check_sample(model, sample), model.meta.t)
    d = ((model.params["X"] - z) ** 2).sum(axis=1)
    k = min(int(k), d.shape[0])
    idx = np.argpartition(d, k - 1)[:k] if k < d.shape[0] else np.arange(d.shape[0])
    idx = idx[np.lexsort((idx, d[idx]))]
    return idx, np.sqrt(d[idx])


def decision_path(model: TrainedModel, sample, tree: int) -> list[tuple[int, float, bool]]:
    """(feature, threshold, went_left) for each split visited in one tree."""
    if model.kind is not AlgorithmKind.RF:
        raise ValueError("decision_path needs an RF model")
    z = preprocess(_check_sample(model, sample), model.meta.t)
    t = model.params["trees"][tree]
    path = []
    node = 0
    while t["feature"][node] >= 0:
        f, thr = t["feature"][node], t["threshold"][node]
        went_left = bool(z[f] <= thr)
        path.append((f, thr, went_left))
        node = t["left"][node] if went_left else t["right"][node]
    return path


# --------------------------------------------------------------------------
# analytic operation counts

def preprocess_ops(p: int, t) -> OpCount:
    t = DataType.parse(t)
    if t is DataType.TEXT:
        return OpCount(mults=p, adds=p)
    if t is DataType.IMAGE:
        return OpCount(mults=effective_dim(p, t), adds=p)
    return OpCount()


def op_count(model: TrainedModel, p_effective: int | None = None) -> OpCount:
    """Closed-form arithmetic work of one call to the family engine.

    linear SVM: one dot product plus the threshold. RBF SVM: one squared
    distance and exponent per support vector. kNN: an exhaustive scan over the
    stored rows plus linear-time selection. RF: one compare per level of each
    tree (bounded by the tree's depth). NN: both mat-vecs, ReLU and threshold.
    """
    p = model.meta.p_effective if p_effective is None else int(p_effective)
    prm = model.params
    kind = model.kind
    if kind is AlgorithmKind.SVM:
        if prm["kernel"] == "linear":
            return OpCount(mults=p, adds=p, compares=1)
        n_sv = prm["support_vectors"].shape[0]
        return OpCount(mults=n_sv * (p + 1), adds=n_sv * (p + 1), compares=1)
    if kind is AlgorithmKind.KNN:
        n = prm["X"].shape[0]
        return OpCount(mults=n * p, adds=n * p, compares=n + 1)
    if kind is AlgorithmKind.RF:
        trees = prm["trees"]
        return OpCount(mults=1, adds=len(trees), compares=sum(t["depth"] for t in trees))
    h = prm["w1"].shape[0]
    return OpCount(mults=p * h + h, adds=p * h + h, compares=h + 1)


def inference_ops(model: TrainedModel) -> OpCount:
    """Preprocessing plus engine work for one bare ``predict``."""
    return preprocess_ops(model.meta.p, model.meta.t) + op_count(model)


# --------------------------------------------------------------------------
# serialization

def _encode(value):
    if isinstance(value, np.ndarray):
        return {"__array__": value.tolist(), "shape": list(value.shape)}
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_encode(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _decode(value):
    if isinstance(value, dict):
        if "__array__" in value:
            return np.array(value["__array__"], dtype=np.float64).reshape(value["shape"])
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind.value,
        "hyper": asdict(model.hyper),
        "meta": asdict(model.meta),
        "input_stats": _encode({"scale": model.input_scale, "low": model.input_low,
                                "high": model.input_high}),
        "params": _encode(model.params),
    }


def model_from_dict(doc: dict) -> TrainedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a serialized infercost model")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    stats = _decode(doc["input_stats"])
    params = _decode(doc["params"])
    if "k" in params:
        params["k"] = int(params["k"])
    return TrainedModel(kind=AlgorithmKind.parse(doc["kind"]), params=params,
                        meta=TrainMeta(**doc["meta"]), hyper=Hyper(**doc["hyper"]),
                        input_scale=stats["scale"], input_low=stats["low"],
                        input_high=stats["high"])


def model_to_json(model: TrainedModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True)


def model_from_json(text: str) -> TrainedModel:
    return model_from_dict(json.loads(text))


def with_params(model: TrainedModel, **params) -> TrainedModel:
    """Copy of ``model`` with some parameters replaced (testing and what-if use)."""
    return replace(model, params={**model.params, **params})


def linear_svm(w, b: float = 0.0, t=DataType.TABULAR) -> TrainedModel:
    """Hand-built linear SVM with the given weights; input scale is taken as 1."""
    w = np.asarray(w, dtype=np.float64)
    p = w.shape[0]
    t = DataType.parse(t)
    if effective_dim(p, t) != p:
        raise ValueError("hand-built SVMs need a dimension-preserving data type")
    meta = TrainMeta(n_train=0, p=p, t=int(t), seed=0, p_effective=p)
    return TrainedModel(kind=AlgorithmKind.SVM,
                        params={"kernel": "linear", "w": w, "b": float(b),
                                "support_vectors": np.zeros((0, p))},
                        meta=meta, hyper=Hyper(), input_scale=np.ones(p),
                        input_low=np.full(p, -np.inf), input_high=np.full(p, np.inf))
