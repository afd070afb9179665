"""LIBSVM-format datasets, train/test splits and synthetic benchmark data."""

import gzip
import math
import warnings
from dataclasses import dataclass
from decimal import ROUND_FLOOR, Decimal
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import LogisticInstance

__all__ = [
    "LibsvmFormatError",
    "RawDataset",
    "SplitSpec",
    "parse_libsvm",
    "load_libsvm",
    "write_libsvm",
    "split",
    "make_logistic_data",
    "make_adult_like",
]


class LibsvmFormatError(ValueError):
    pass


@dataclass
class RawDataset:
    """Binary-labelled sparse rows in CSR layout with 0-based feature indices."""

    labels: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    declared_dim: Optional[int] = None

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        observed = int(self.indices.max()) + 1 if len(self.indices) else 0
        return max(observed, self.declared_dim or 0)

    def rows(self):
        """Yield ``(label, [(index, value), ...])`` per row."""
        for i, label in enumerate(self.labels):
            a, b = self.indptr[i], self.indptr[i + 1]
            yield int(label), list(zip(self.indices[a:b].tolist(), self.values[a:b].tolist()))

    def matrix(self):
        return sp.csr_matrix(
            (self.values, self.indices, self.indptr), shape=(len(self), self.dim)
        )

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        X = self.matrix()[idx]
        return RawDataset(self.labels[idx], X.indptr, X.indices, X.data, self.dim)

    def to_instance(self, unit_norm=False):
        X = self.matrix()
        if unit_norm:
            norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
            norms[norms == 0] = 1.0
            X = sp.diags(1.0 / norms) @ X
        return LogisticInstance(X, self.labels)

    @classmethod
    def from_arrays(cls, X, labels):
        X = sp.csr_matrix(X, dtype=float)
        return cls(np.asarray(labels, dtype=int), X.indptr, X.indices, X.data, X.shape[1])


_LABEL_SCHEMES = ({-1.0: 0, 1.0: 1}, {0.0: 0, 1.0: 1}, {1.0: 0, 2.0: 1})


def _map_labels(raw):
    seen = set(raw)
    if -1.0 in seen:
        scheme = _LABEL_SCHEMES[0]
    elif 2.0 in seen:
        scheme = _LABEL_SCHEMES[2]
    else:
        scheme = _LABEL_SCHEMES[1]
    bad = seen - set(scheme)
    if bad:
        raise LibsvmFormatError(f"unsupported labels {sorted(bad)}; expected {{-1,+1}}, {{0,1}} or {{1,2}}")
    return np.array([scheme[v] for v in raw], dtype=int)


def parse_libsvm(stream, declared_dim=None):
    """Parse ``label idx:val idx:val ...`` lines into a :class:`RawDataset`.

    File indices are 1-based. Blank lines and ``#`` comments are skipped.
    Labels in {-1,+1}, {0,1} or {1,2} are mapped to {0,1}. A row whose
    indices are not strictly increasing only triggers a warning; duplicate
    entries are summed. Malformed lines raise :class:`LibsvmFormatError`
    listing every offending line number.
    """
    raw_labels, indptr, indices, values = [], [0], [], []
    errors = []
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
            pairs = []
            for tok in tokens[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise ValueError(f"token {tok!r} is not idx:val")
                idx = int(key)
                if idx < 1:
                    raise ValueError(f"feature index {idx} < 1")
                pairs.append((idx - 1, float(val)))
        except ValueError as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        if any(b[0] <= a[0] for a, b in zip(pairs, pairs[1:])):
            warnings.warn(f"line {lineno}: feature indices not increasing", stacklevel=2)
        raw_labels.append(label)
        for i, v in pairs:
            indices.append(i)
            values.append(v)
        indptr.append(len(indices))
    if errors:
        shown = "; ".join(errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        raise LibsvmFormatError(f"malformed LIBSVM input: {shown}{more}")
    if not raw_labels:
        raise LibsvmFormatError("empty LIBSVM input")

    labels = _map_labels(raw_labels)
    dim = max(declared_dim or 0, (max(indices) + 1) if indices else 0)
    X = sp.csr_matrix(
        (np.array(values, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(labels), dim),
    )
    X.sum_duplicates()
    return RawDataset(labels, X.indptr, X.indices, X.data, declared_dim)


def load_libsvm(path, declared_dim=None):
    """Read a LIBSVM file; gzip input is detected by magic bytes or ``.gz``."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    opener = gzip.open if magic == b"\x1f\x8b" or path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        return parse_libsvm(fh, declared_dim)


def write_libsvm(dataset, stream, label_format="pm1"):
    """Write ``dataset`` as LIBSVM text; values use ``repr`` so they round-trip."""
    to_label = {"pm1": ("-1", "+1"), "01": ("0", "1")}[label_format]
    for label, pairs in dataset.rows():
        parts = [to_label[label]] + [f"{i + 1}:{v!r}" for i, v in pairs]
        stream.write(" ".join(parts) + "\n")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction <= 1:
            raise ValueError(f"train fraction must be in (0, 1], got {self.train_fraction}")


def split(dataset, spec=SplitSpec()):
    """Seeded shuffle, then the first ``floor(fraction * T)`` rows train.

    Returns ``(train, test)``; ``test`` is ``None`` when the fraction is 1.
    """
    T = len(dataset)
    n_train = int((Decimal(repr(spec.train_fraction)) * T).to_integral_value(ROUND_FLOOR))
    if n_train < 1:
        raise ValueError(f"train fraction {spec.train_fraction} leaves no training rows")
    perm = np.random.default_rng(spec.shuffle_seed).permutation(T)
    train = dataset.subset(perm[:n_train])
    test = dataset.subset(perm[n_train:]) if n_train < T else None
    return train, test


# -- synthetic data ----------------------------------------------------------


def make_logistic_data(n, d, seed=0, scale=1.0, density=1.0, noise=True):
    """Gaussian design with labels drawn from a logistic model.

    Returns ``(X, y, theta_true)``; ``X`` is dense unless ``density < 1``.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    if density < 1:
        X *= rng.random((n, d)) < density
    theta = rng.standard_normal(d) * scale / math.sqrt(max(d * density, 1))
    p = 1.0 / (1.0 + np.exp(-(X @ theta)))
    y = (rng.random(n) < p).astype(int) if noise else (p >= 0.5).astype(int)
    if density < 1:
        X = sp.csr_matrix(X)
    return X, y, theta


# Cardinalities of the one-hot groups in the 123-feature adult encoding.
_ADULT_GROUPS = (5, 8, 5, 16, 5, 7, 14, 6, 5, 2, 3, 3, 4, 40)


def make_adult_like(n=5000, seed=0):
    """Sparse binary data shaped like the 123-feature one-hot adult encoding.

    Each row picks one level from each of 14 categorical groups (14 nonzeros,
    d = 123). Labels come from a sparse logistic model with a negative offset,
    giving about a third positives.
    """
    rng = np.random.default_rng(seed)
    d = sum(_ADULT_GROUPS)
    offsets = np.cumsum((0,) + _ADULT_GROUPS[:-1])
    cols = np.empty((n, len(_ADULT_GROUPS)), dtype=np.int64)
    for g, (off, size) in enumerate(zip(offsets, _ADULT_GROUPS)):
        pop = rng.dirichlet(np.full(size, 0.7))
        cols[:, g] = off + rng.choice(size, size=n, p=pop)
    theta = rng.standard_normal(d) * 0.9
    X = sp.csr_matrix(
        (np.ones(cols.size), cols.ravel(), np.arange(0, cols.size + 1, cols.shape[1])),
        shape=(n, d),
    )
    s = X @ theta
    s += -1.3 - np.median(s)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-s))).astype(int)
    return RawDataset.from_arrays(X, y)
