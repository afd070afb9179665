"""Matrix-free ridge-plus-low-rank operator and a truncated CG solve."""

from dataclasses import dataclass

import numpy as np

from .bound import BoundFactors

__all__ = ["CurvatureOperator", "SolveReport", "apply", "solve"]


class CurvatureOperator:
    """``A x = L diag(w) L' x + eta x`` without forming ``L diag(w) L'``.

    Each product costs one pass over the columns, O(d k) dense or O(nnz)
    sparse.
    """

    def __init__(self, factors: BoundFactors, eta: float = 0.0):
        if eta < 0:
            raise ValueError(f"eta must be nonnegative, got {eta}")
        self.factors = factors
        self.eta = float(eta)
        self.dim = factors.dim

    @classmethod
    def from_bound(cls, batch_bound, eta=0.0):
        return cls(batch_bound.curvature, eta)

    @property
    def shape(self):
        return (self.dim, self.dim)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"vector has shape {x.shape}, expected ({self.dim},)")
        L = self.factors.columns
        out = L @ (self.factors.weights * (L.T @ x))
        out = np.asarray(out, dtype=float).ravel()
        if self.eta:
            out += self.eta * x
        return out

    __matmul__ = apply

    def dense(self):
        return self.factors.dense() + self.eta * np.eye(self.dim)


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations_run: int
    final_residual_norm: float


def apply(op, x):
    return op.apply(x)


def solve(op, b, max_iters, callback=None, reorthogonalize=True):
    """Conjugate gradients on ``op`` from a zero start, truncated at ``max_iters``.

    Runs ``min(max_iters, d)`` iterations unless the residual drops below
    ``1e-14 ||b||`` or a direction with nonpositive curvature appears. From
    zero every iterate lies in the Krylov space of ``b``; when ``eta = 0`` and
    ``b`` is in the range of the operator the iterates approach the
    minimum-norm solution.

    Parameters
    ----------
    op : CurvatureOperator
    b : ndarray
        Right-hand side.
    max_iters : int
        Iteration cap ``l >= 1``.
    callback : callable, optional
        Called with a copy of each iterate.
    reorthogonalize : bool
        Keep residuals mutually orthogonal by Gram-Schmidt against all earlier
        ones (O(d l) extra work per iteration). Restores the finite-termination
        behaviour that plain CG loses in floating point.
    """
    if op.eta < 0:
        raise ValueError(f"eta must be nonnegative, got {op.eta}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be at least 1, got {max_iters}")
    b = np.asarray(b, dtype=float)
    if b.shape != (op.dim,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({op.dim},)")

    n_iter = min(max_iters, op.dim)
    x = np.zeros_like(b)
    r = b.copy()
    rr = float(r @ r)
    stop = (1e-14 * np.sqrt(rr)) ** 2
    p = r.copy()
    # orthonormal copies of the residuals seen so far
    Q = np.empty((n_iter, op.dim)) if reorthogonalize else None
    its = 0
    for i in range(n_iter):
        if rr <= stop or rr == 0.0:
            break
        q = op.apply(p)
        pq = float(p @ q)
        if not pq > 0:
            break
        a = rr / pq
        if reorthogonalize:
            Q[i] = r / np.sqrt(rr)
        x += a * p
        r -= a * q
        if reorthogonalize:
            r -= Q[: i + 1].T @ (Q[: i + 1] @ r)
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        its += 1
        if callback is not None:
            callback(x.copy())
    return SolveReport(x, its, float(np.sqrt(rr)))
