"""Finite-outcome log-linear models and the L2-regularized likelihood objective.

A model assigns each example ``j`` a finite outcome set with feature vectors
``f_j(y)`` and a nonnegative base measure ``h_j(y)``::

    p(y | x_j, theta) = h_j(y) exp(theta . f_j(y)) / Z_j(theta)

Two concrete models are provided: :class:`TabularModel`, which stores the
per-example feature tables explicitly (any outcome count), and
:class:`LogisticInstance`, binary logistic regression on a sparse design
matrix with ``f_j(1) = x_j``, ``f_j(0) = 0`` and ``h = 1``.
"""

import abc

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp

__all__ = [
    "DENSE_HESSIAN_LIMIT",
    "DenseLimitError",
    "LogLinearModel",
    "TabularModel",
    "LogisticInstance",
    "Objective",
    "partition_value",
    "log_partition_value",
    "objective_value",
    "full_gradient",
    "full_hessian",
    "predict_error",
]

DENSE_HESSIAN_LIMIT = 2000


class DenseLimitError(RuntimeError):
    """Raised when a dense d x d oracle is requested above the size limit."""


def _check_theta(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dim,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({dim},)")
    return theta


class LogLinearModel(abc.ABC):
    """Abstract finite-outcome log-linear model over ``num_examples`` examples.

    Subclasses provide the per-example outcome tables. The batch methods
    below are generic loops; subclasses with structure override them.
    """

    num_examples: int
    dim: int

    @abc.abstractmethod
    def outcome_count(self, j: int) -> int: ...

    @abc.abstractmethod
    def features(self, j: int) -> np.ndarray:
        """Dense ``(outcome_count(j), dim)`` array whose row ``y`` is ``f_j(y)``."""

    @abc.abstractmethod
    def measures(self, j: int) -> np.ndarray:
        """Base measure ``h_j(y)`` for every outcome, shape ``(outcome_count(j),)``."""

    @abc.abstractmethod
    def observed_label(self, j: int) -> int: ...

    def feature(self, j, y):
        return self.features(j)[y]

    def measure(self, j, y):
        return float(self.measures(j)[y])

    def __len__(self):
        return self.num_examples

    # -- per-example quantities -------------------------------------------

    def _log_weights(self, j, theta):
        h = self.measures(j)
        with np.errstate(divide="ignore"):
            return np.log(h) + self.features(j) @ theta

    def log_partition(self, j, theta):
        return float(logsumexp(self._log_weights(j, theta)))

    def probabilities(self, j, theta):
        a = self._log_weights(j, theta)
        return np.exp(a - logsumexp(a))

    def example_loss(self, j, theta):
        f = self.features(j)
        return self.log_partition(j, theta) - float(f[self.observed_label(j)] @ theta)

    def example_gradient(self, j, theta):
        """Gradient of ``log Z_j - theta . f_j(y_j)``: ``E_p[f] - f(y_j)``."""
        f = self.features(j)
        return self.probabilities(j, theta) @ f - f[self.observed_label(j)]

    def example_covariance(self, j, theta):
        f = self.features(j)
        p = self.probabilities(j, theta)
        m = p @ f
        c = f - m
        return (c * p[:, None]).T @ c

    # -- batch reductions ---------------------------------------------------

    def _indices(self, idx):
        return range(self.num_examples) if idx is None else idx

    def loss_sum(self, theta, idx=None):
        return sum(self.example_loss(j, theta) for j in self._indices(idx))

    def gradient_sum(self, theta, idx=None):
        g = np.zeros(self.dim)
        for j in self._indices(idx):
            g += self.example_gradient(j, theta)
        return g

    def covariance_sum(self, theta, idx=None):
        h = np.zeros((self.dim, self.dim))
        for j in self._indices(idx):
            h += self.example_covariance(j, theta)
        return h

    def predictions(self, theta):
        """Most probable outcome per example; ties go to the largest index."""
        out = np.empty(self.num_examples, dtype=int)
        for j in range(self.num_examples):
            a = self._log_weights(j, theta)
            out[j] = len(a) - 1 - int(np.argmax(a[::-1]))
        return out

    def labels(self):
        return np.array([self.observed_label(j) for j in range(self.num_examples)])


class TabularModel(LogLinearModel):
    """Log-linear model with explicit feature tables.

    Parameters
    ----------
    features : sequence of array_like
        ``features[j]`` has shape ``(n_j, d)``; row ``y`` is ``f_j(y)``.
    measures : sequence of array_like, optional
        ``measures[j]`` has shape ``(n_j,)``. Defaults to all ones.
    labels : sequence of int
        Observed outcome index for each example.
    """

    def __init__(self, features, labels, measures=None):
        self._features = [np.atleast_2d(np.asarray(f, dtype=float)) for f in features]
        if not self._features:
            raise ValueError("model needs at least one example")
        self.num_examples = len(self._features)
        self.dim = self._features[0].shape[1]
        if measures is None:
            measures = [np.ones(len(f)) for f in self._features]
        self._measures = [np.asarray(h, dtype=float) for h in measures]
        self._labels = np.asarray(labels, dtype=int)
        if len(self._measures) != self.num_examples or len(self._labels) != self.num_examples:
            raise ValueError("features, measures and labels must have equal length")
        for j, (f, h) in enumerate(zip(self._features, self._measures)):
            if f.shape[1] != self.dim:
                raise ValueError(f"example {j}: feature dimension {f.shape[1]} != {self.dim}")
            if h.shape != (len(f),):
                raise ValueError(f"example {j}: {len(h)} measures for {len(f)} outcomes")
            if np.any(h < 0):
                raise ValueError(f"example {j}: negative measure")
            if not np.any(h > 0):
                raise ValueError(f"example {j}: all measures are zero")
            if not 0 <= self._labels[j] < len(f):
                raise ValueError(f"example {j}: label {self._labels[j]} out of range")

    def outcome_count(self, j):
        return len(self._features[j])

    def features(self, j):
        return self._features[j]

    def measures(self, j):
        return self._measures[j]

    def observed_label(self, j):
        return int(self._labels[j])

    def labels(self):
        return self._labels.copy()


class LogisticInstance(LogLinearModel):
    """Binary logistic regression as a two-outcome log-linear model.

    ``X`` is stored as CSR; ``y`` holds labels in {0, 1}. With
    ``f(0) = 0``, ``f(1) = x`` and unit measure, ``p(1 | x) = sigmoid(theta . x)``.
    """

    def __init__(self, X, y):
        X = sp.csr_matrix(X, dtype=float)
        X.sum_duplicates()
        X.sort_indices()
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != X.shape[0]:
            raise ValueError(f"{len(y)} labels for {X.shape[0]} rows")
        if X.shape[0] == 0:
            raise ValueError("empty dataset")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        self.X = X
        self.y = y.astype(float)
        self.num_examples, self.dim = X.shape

    def outcome_count(self, j):
        return 2

    def features(self, j):
        f = np.zeros((2, self.dim))
        f[1] = self.X[j].toarray().ravel()
        return f

    def measures(self, j):
        return np.ones(2)

    def observed_label(self, j):
        return int(self.y[j])

    def labels(self):
        return self.y.astype(int)

    def row(self, j):
        """Column indices and values of row ``j`` (views into the CSR arrays)."""
        a, b = self.X.indptr[j], self.X.indptr[j + 1]
        return self.X.indices[a:b], self.X.data[a:b]

    def margins(self, theta, idx=None):
        X = self.X if idx is None else self.X[idx]
        return X @ theta

    # vectorized overrides

    def log_partition(self, j, theta):
        cols, vals = self.row(j)
        return float(np.logaddexp(0.0, vals @ theta[cols]))

    def probabilities(self, j, theta):
        cols, vals = self.row(j)
        p1 = expit(vals @ theta[cols])
        return np.array([1.0 - p1, p1])

    def example_loss(self, j, theta):
        cols, vals = self.row(j)
        s = vals @ theta[cols]
        return float(np.logaddexp(0.0, s) - self.y[j] * s)

    def gradient_coefficient(self, j, theta):
        """Scalar ``c`` with ``example_gradient(j, theta) = c * x_j``."""
        cols, vals = self.row(j)
        return float(expit(vals @ theta[cols]) - self.y[j])

    def example_gradient(self, j, theta):
        g = np.zeros(self.dim)
        cols, vals = self.row(j)
        g[cols] = self.gradient_coefficient(j, theta) * vals
        return g

    def loss_sum(self, theta, idx=None):
        s = self.margins(theta, idx)
        y = self.y if idx is None else self.y[idx]
        return float(np.sum(np.logaddexp(0.0, s) - y * s))

    def gradient_sum(self, theta, idx=None):
        X = self.X if idx is None else self.X[idx]
        y = self.y if idx is None else self.y[idx]
        return X.T @ (expit(X @ theta) - y)

    def covariance_sum(self, theta, idx=None):
        X = self.X if idx is None else self.X[idx]
        p = expit(X @ theta)
        w = p * (1.0 - p)
        return np.asarray((X.T @ X.multiply(w[:, None])).todense())

    def predictions(self, theta):
        # p(1) >= 0.5 <=> margin >= 0; the tie goes to label 1
        return (self.margins(theta) >= 0).astype(int)

    def lipschitz_constant(self, eta=0.0):
        """``max_j ||x_j||^2 / 4 + eta``, the per-example smoothness bound."""
        sq = np.asarray(self.X.multiply(self.X).sum(axis=1)).ravel()
        return float(sq.max()) / 4.0 + eta


class Objective:
    """``L(theta) = (1/T) sum_j [log Z_j(theta) - theta . f_j(y_j)] + (eta/2) ||theta||^2``."""

    def __init__(self, model: LogLinearModel, eta: float = 0.0):
        if eta < 0:
            raise ValueError(f"eta must be nonnegative, got {eta}")
        self.model = model
        self.eta = float(eta)

    def value(self, theta):
        theta = _check_theta(theta, self.model.dim)
        T = self.model.num_examples
        return self.model.loss_sum(theta) / T + 0.5 * self.eta * float(theta @ theta)

    def gradient(self, theta):
        theta = _check_theta(theta, self.model.dim)
        T = self.model.num_examples
        return self.model.gradient_sum(theta) / T + self.eta * theta

    def hessian(self, theta):
        d = self.model.dim
        if d > DENSE_HESSIAN_LIMIT:
            raise DenseLimitError(f"dense Hessian requested for d={d} > {DENSE_HESSIAN_LIMIT}")
        theta = _check_theta(theta, d)
        H = self.model.covariance_sum(theta) / self.model.num_examples
        H[np.diag_indices(d)] += self.eta
        return 0.5 * (H + H.T)


def log_partition_value(model, j, theta):
    """``log Z_j(theta)`` via a max-shifted log-sum-exp."""
    return model.log_partition(j, _check_theta(theta, model.dim))


def partition_value(model, j, theta):
    """``Z_j(theta)``; overflows to ``inf`` when ``log Z`` exceeds ~709."""
    return float(np.exp(log_partition_value(model, j, theta)))


def objective_value(obj, theta):
    return obj.value(theta)


def full_gradient(obj, theta):
    return obj.gradient(theta)


def full_hessian(obj, theta):
    return obj.hessian(theta)


def predict_error(theta, test_set):
    """Fraction of ``test_set`` examples whose most probable outcome is wrong."""
    if test_set is None or test_set.num_examples == 0:
        raise ValueError("empty test set")
    theta = _check_theta(theta, test_set.dim)
    return float(np.mean(test_set.predictions(theta) != test_set.labels()))
