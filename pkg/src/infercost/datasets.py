"""Synthetic binary-classification datasets and type-dependent preprocessing.

A dataset is described by its size ``n``, dimensionality ``p`` and data type
``t``. The data type is not just a label: :func:`preprocess` runs a different
transform per type, and that transform sits inside the timed inference path.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from infercost._io import atomic_write_text

# tokens are values quantized on this grid before hashing
TOKEN_RESOLUTION = 2.0
HASH_SEED = 0x9E3779B9
_HASH_MULT = np.uint64(2654435761)
_POS_MULT = np.int64(1_000_003)
_MASK32 = np.uint64(0xFFFFFFFF)


class DataType(IntEnum):
    TABULAR = 0
    TEXT = 1
    IMAGE = 2

    @classmethod
    def parse(cls, value) -> "DataType":
        if isinstance(value, DataType):
            return value
        if isinstance(value, str) and not value.strip().lstrip("-").isdigit():
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ValueError(f"unknown data type {value!r}") from None
        try:
            return cls(int(value))
        except ValueError:
            raise ValueError(f"data type code must be 0, 1 or 2, got {value!r}") from None


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    protected: np.ndarray
    t: DataType
    separation: float
    seed: int

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def p(self) -> int:
        return self.samples.shape[1]

    def metadata(self) -> dict:
        return {"n": self.n, "p": self.p, "t": int(self.t),
                "separation": self.separation, "seed": self.seed}

    def same_as(self, other: "Dataset") -> bool:
        """Bit-level equality of every array and all metadata."""
        return (
            self.metadata() == other.metadata()
            and self.samples.tobytes() == other.samples.tobytes()
            and self.labels.tobytes() == other.labels.tobytes()
            and self.protected.tobytes() == other.protected.tobytes()
        )


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def generate(n: int, p: int, t: DataType | int = DataType.TABULAR,
             separation: float = 2.0, seed: int = 0) -> Dataset:
    """Two unit-variance Gaussian clouds whose means are ``separation`` apart.

    The class means sit at ``-separation/2`` and ``+separation/2`` along the
    all-ones diagonal, so datasets drawn with different seeds share one
    distribution. Labels are balanced to within one sample and the protected
    attribute is an independent fair coin per row.
    """
    n, p = int(n), int(p)
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if p < 1:
        raise ValueError(f"p must be at least 1, got {p}")
    separation = float(separation)
    if not (separation >= 0 and math.isfinite(separation)):
        raise ValueError(f"separation must be a finite non-negative number, got {separation}")
    t = DataType.parse(t)
    seed = _check_seed(seed)

    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[n // 2:] = 1
    labels = rng.permutation(labels)
    direction = np.full(p, 1.0 / math.sqrt(p))
    offsets = np.where(labels == 1, 0.5, -0.5) * separation
    samples = rng.standard_normal((n, p)) + offsets[:, None] * direction[None, :]
    protected = rng.integers(0, 2, size=n, dtype=np.int64)
    return Dataset(samples=samples, labels=labels, protected=protected,
                   t=t, separation=separation, seed=seed)


def effective_dim(p: int, t: DataType | int) -> int:
    """Length of the vector :func:`preprocess` returns for a ``p``-value row."""
    t = DataType.parse(t)
    if t is DataType.IMAGE:
        side = _pool_side(p)
        return (side // 2) ** 2
    return int(p)


def _pool_side(p: int) -> int:
    side = math.isqrt(p - 1) + 1 if p > 0 else 1  # ceil(sqrt(p))
    return side + side % 2


def hash_slots(p: int, raw: np.ndarray) -> np.ndarray:
    """Output slot for each input value under the text featurizer."""
    tokens = np.floor(raw * TOKEN_RESOLUTION).astype(np.int64)
    keys = (np.arange(raw.shape[-1], dtype=np.int64) * _POS_MULT + tokens).astype(np.uint64)
    mixed = (keys * _HASH_MULT + np.uint64(HASH_SEED)) & _MASK32
    mixed ^= mixed >> np.uint64(15)
    return (mixed % np.uint64(p)).astype(np.int64)


def preprocess(raw, t: DataType | int) -> np.ndarray:
    """Apply the data-type transform to one feature row.

    tabular: identity. text: every value becomes a token hashed into one of
    ``p`` count buckets. image: the row is zero-padded onto the smallest even
    square grid that holds it and 2x2 mean-pooled.
    """
    x = np.asarray(raw, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("preprocess expects a single feature row")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature row contains non-finite values")
    t = DataType.parse(t)
    if t is DataType.TABULAR:
        return x
    p = x.shape[0]
    if t is DataType.TEXT:
        return np.bincount(hash_slots(p, x), minlength=p).astype(np.float64)
    side = _pool_side(p)
    grid = np.zeros(side * side)
    grid[:p] = x
    half = side // 2
    return grid.reshape(half, 2, half, 2).mean(axis=(1, 3)).ravel()


def preprocess_batch(rows: np.ndarray, t: DataType | int) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    return np.stack([preprocess(r, t) for r in rows]) if len(rows) else rows


def write_csv(ds: Dataset, path: str | Path) -> tuple[Path, Path]:
    """Write ``path`` (CSV) and ``path`` with a ``.json`` suffix (metadata)."""
    path = Path(path)
    header = [f"f{j}" for j in range(ds.p)] + ["label", "protected"]
    lines = [",".join(header)]
    for row, y, g in zip(ds.samples, ds.labels, ds.protected):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(y)), str(int(g))]))
    atomic_write_text(path, "\n".join(lines) + "\n")
    meta_path = path.with_suffix(".json")
    atomic_write_text(meta_path, json.dumps(ds.metadata(), indent=2, sort_keys=True) + "\n")
    return path, meta_path


def read_csv(path: str | Path) -> Dataset:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        p = len(header) - 2
        rows = [r for r in reader if r]
    samples = np.array([[float(v) for v in r[:p]] for r in rows], dtype=np.float64).reshape(len(rows), p)
    labels = np.array([int(r[p]) for r in rows], dtype=np.int64)
    protected = np.array([int(r[p + 1]) for r in rows], dtype=np.int64)
    return Dataset(samples=samples, labels=labels, protected=protected,
                   t=DataType.parse(meta["t"]), separation=float(meta["separation"]),
                   seed=int(meta["seed"]))
