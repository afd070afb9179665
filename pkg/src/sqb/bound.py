"""Quadratic upper bounds on the partition function.

For an example ``j`` and an anchor ``theta_t`` the bound returns ``(z, r, S)``
with ``z = Z_j(theta_t)``, ``r = E_p[f]`` and, for every ``theta``,

    Z_j(theta) <= z * exp(0.5 (theta - theta_t)' S (theta - theta_t) + (theta - theta_t)' r)

``S`` is built from one rank-one term per outcome and is kept factored as
weighted columns ``sum_k w_k l_k l_k'``; it is never formed as a d x d matrix
outside of tests.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .model import LogisticInstance, _check_theta

__all__ = [
    "BoundFactors",
    "BatchBound",
    "weight_function",
    "weight_from_log_ratio",
    "bound_single",
    "bound_batch",
]

SERIES_THRESHOLD = 1e-8


def weight_from_log_ratio(t):
    """``tanh(t/2) / (2t)`` for ``t = log(alpha / z)``, elementwise.

    ``t = +inf`` (the ``z -> 0+`` start) and ``t = -inf`` give 0; near zero the
    series ``(1 - t^2/12) / 4`` is used.
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    finite = np.isfinite(t)
    small = finite & (np.abs(t) < SERIES_THRESHOLD)
    big = finite & ~small
    out[small] = 0.25 * (1.0 - t[small] ** 2 / 12.0)
    out[big] = np.tanh(0.5 * t[big]) / (2.0 * t[big])
    return out if out.ndim else float(out)


def weight_function(alpha, z):
    """Curvature weight of a new outcome with mass ``alpha`` joining mass ``z``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if z < 0:
        raise ValueError(f"z must be nonnegative, got {z}")
    if z == 0:
        return 0.0
    return weight_from_log_ratio(np.log(alpha) - np.log(z))


@dataclass
class BoundFactors:
    """Factored curvature ``sum_k weights[k] * columns[:, k] columns[:, k]'``.

    ``columns`` is a ``(d, k)`` dense array or sparse matrix. ``log_z_values``
    and ``r_values`` hold per-example bound outputs when they were kept;
    ``r_values`` has one row per example and may be sparse.
    """

    columns: object
    weights: np.ndarray
    log_z_values: Optional[np.ndarray] = None
    r_values: object = None

    @property
    def dim(self):
        return self.columns.shape[0]

    @property
    def rank(self):
        return len(self.weights)

    @property
    def z_values(self):
        return None if self.log_z_values is None else np.exp(self.log_z_values)

    def dense(self):
        """Materialize the d x d matrix. Test/oracle use only."""
        L = self.columns.toarray() if sp.issparse(self.columns) else np.asarray(self.columns)
        return (L * self.weights) @ L.T

    def scaled(self, c):
        return BoundFactors(self.columns, self.weights * c, self.log_z_values, self.r_values)


@dataclass
class BatchBound:
    """Averaged bound over a batch: gradient ``mu`` and curvature factors."""

    mu: np.ndarray
    curvature: BoundFactors
    batch_size: int


def bound_single(model, j, theta_tilde):
    """Run the bound recursion over the outcomes of example ``j`` in index order.

    Returns
    -------
    z : float
        ``Z_j(theta_tilde)``.
    r : ndarray
        Model mean ``E_p[f_j]`` at ``theta_tilde``.
    factors : list of (ndarray, float)
        ``(l_k, w_k)`` pairs with ``S = sum_k w_k l_k l_k'``; zero-weight
        terms are dropped.
    """
    theta_tilde = _check_theta(theta_tilde, model.dim)
    if not 0 <= j < model.num_examples:
        raise ValueError(f"example index {j} out of range")
    F = model.features(j)
    h = np.asarray(model.measures(j), dtype=float)
    if np.any(h < 0):
        raise ValueError(f"example {j}: negative measure")
    if not np.any(h > 0):
        raise ValueError(f"example {j}: all measures are zero")

    log_z = -np.inf
    r = np.zeros(model.dim)
    factors = []
    for y in range(len(h)):
        if h[y] == 0:
            continue
        f = F[y]
        log_alpha = np.log(h[y]) + f @ theta_tilde
        t = log_alpha - log_z
        w = weight_from_log_ratio(t)
        if w > 0:
            factors.append((f - r, w))
        # z/(z+alpha) = sigmoid(-t), alpha/(z+alpha) = sigmoid(t)
        r = expit(-t) * r + expit(t) * f
        log_z = np.logaddexp(log_z, log_alpha)
    return float(np.exp(log_z)), r, factors


def _bound_batch_generic(model, batch, theta_tilde):
    b = len(batch)
    mu = np.zeros(model.dim)
    cols, weights, log_z, rs = [], [], [], []
    for j in batch:
        z, r, factors = bound_single(model, j, theta_tilde)
        mu += r - model.feature(j, model.observed_label(j))
        for l, w in factors:
            cols.append(l)
            weights.append(w)
        log_z.append(np.log(z))
        rs.append(r)
    columns = np.array(cols).T if cols else np.zeros((model.dim, 0))
    curvature = BoundFactors(
        columns, np.array(weights, dtype=float) / b, np.array(log_z), np.array(rs)
    )
    return BatchBound(mu / b, curvature, b)


def _bound_batch_logistic(model, batch, theta_tilde):
    # Outcome 0 has f = 0 and starts the recursion (zero weight, r = 0,
    # z = 1); outcome 1 then contributes the single column x_j with
    # weight tanh(s/2)/(2s) at margin s, and r = sigmoid(s) x_j.
    b = len(batch)
    X = model.X[batch]
    s = X @ theta_tilde
    p = expit(s)
    mu = X.T @ (p - model.y[batch]) / b
    w = weight_from_log_ratio(s)
    curvature = BoundFactors(
        X.T.tocsr(), w / b, np.logaddexp(0.0, s), X.multiply(p[:, None]).tocsr()
    )
    return BatchBound(np.asarray(mu).ravel(), curvature, b)


def bound_batch(model, batch, theta_tilde):
    """Average the per-example bounds over ``batch``.

    ``mu = (1/|B|) sum_j (r_j - f_j(y_j))`` and the curvature factors are the
    concatenated per-example columns with weights divided by ``|B|``.
    """
    theta_tilde = _check_theta(theta_tilde, model.dim)
    batch = np.asarray(batch, dtype=np.intp)
    if batch.ndim != 1 or len(batch) == 0:
        raise ValueError("batch must be a nonempty 1-d index set")
    if batch.min() < 0 or batch.max() >= model.num_examples:
        raise ValueError("batch index out of range")
    if isinstance(model, LogisticInstance):
        return _bound_batch_logistic(model, batch, theta_tilde)
    return _bound_batch_generic(model, batch, theta_tilde)
