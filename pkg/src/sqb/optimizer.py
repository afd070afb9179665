"""Semistochastic quadratic-bound iterations and constant-step baselines.

Every method advances an :class:`OptimizerState` and counts example touches,
so runs are compared in effective passes through the training set.
"""

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .bound import bound_batch
from .linalg import CurvatureOperator, solve
from .model import LogisticInstance, Objective
from .sampling import EXAMPLE, MINIBATCH, BatchSchedule, RandomStreams, draw_pair, size_at

__all__ = [
    "OptimizerAbort",
    "SqbConfig",
    "BaselineConfig",
    "OptimizerState",
    "SagMemory",
    "MetricsRow",
    "METHODS",
    "initial_state",
    "sqb_direction",
    "sqb_step",
    "sgd_step",
    "asgd_step",
    "sag_step",
    "run",
]

METHODS = ("sqb", "sgd", "asgd", "sag")


class OptimizerAbort(RuntimeError):
    """A step produced non-finite values. ``state`` is the last good state."""

    def __init__(self, message, state=None, diagnostics=None):
        super().__init__(message)
        self.state = state
        self.diagnostics = diagnostics or {}


@dataclass
class SqbConfig:
    step_size: float = 1.0
    eta: float = 0.0
    gradient_schedule: BatchSchedule = field(default_factory=lambda: BatchSchedule(5, 0.0))
    curvature_schedule: BatchSchedule = field(default_factory=lambda: BatchSchedule(5, 0.0, 200))
    solver_iters: int = 5
    max_effective_passes: float = 10.0
    seed: int = 0
    # "constant", or "decaying" for step_size / k
    step_policy: str = "constant"

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step size must be positive, got {self.step_size}")
        if self.solver_iters < 1:
            raise ValueError(f"solver_iters must be at least 1, got {self.solver_iters}")
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if self.step_policy not in ("constant", "decaying"):
            raise ValueError(f"unknown step policy {self.step_policy!r}")

    def step_at(self, k):
        return self.step_size / k if self.step_policy == "decaying" else self.step_size


@dataclass
class BaselineConfig:
    """Settings for SGD, ASGD and SAG. SAG ignores ``step_size`` (uses 1/L)."""

    step_size: float = 0.01
    eta: float = 0.0
    max_effective_passes: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.step_size < 0:
            raise ValueError(f"step size must be nonnegative, got {self.step_size}")
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")


@dataclass
class OptimizerState:
    theta: np.ndarray
    num_examples: int
    iteration: int = 0
    data_touches: int = 0
    streams: RandomStreams = field(default_factory=RandomStreams)
    # running mean of the iterates, ASGD only
    average: Optional[np.ndarray] = None
    _block: tuple = field(default=(-1, None), repr=False, compare=False)

    @property
    def effective_passes(self):
        return self.data_touches / self.num_examples

    @property
    def params(self):
        """The reported parameter vector: the average for ASGD, else theta."""
        return self.theta if self.average is None else self.average

    def copy(self):
        return dataclasses.replace(
            self,
            theta=self.theta.copy(),
            average=None if self.average is None else self.average.copy(),
        )

    def next_example(self):
        """Index for the next single-example step, uniform with replacement."""
        T = self.num_examples
        k = self.iteration
        block, idx = self._block
        if block != k // T:
            block = k // T
            idx = self.streams.stream(EXAMPLE, block).integers(T, size=T)
            self._block = (block, idx)
        return int(idx[k % T])


def initial_state(model, seed=0, theta0=None):
    theta = np.zeros(model.dim) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (model.dim,):
        raise ValueError(f"theta0 has shape {theta.shape}, expected ({model.dim},)")
    return OptimizerState(theta, model.num_examples, streams=RandomStreams(seed))


def _abort_if_bad(state, *arrays, **info):
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise OptimizerAbort(
            f"non-finite values at iteration {state.iteration + 1}",
            state,
            dict(info, theta_norm=float(np.linalg.norm(state.theta))),
        )


# -- SQB ------------------------------------------------------------------------


def sqb_direction(model, theta, eta, gradient_batch, curvature_batch, solver_iters):
    """Solve ``(Sigma_S + eta I) xi = mu_T + eta theta`` approximately.

    Returns ``(xi, report)``. When both batches are the same array the bound
    is computed once.
    """
    grad = bound_batch(model, gradient_batch, theta)
    if curvature_batch is gradient_batch:
        curv = grad
    else:
        curv = bound_batch(model, curvature_batch, theta)
    rhs = grad.mu + eta * theta
    report = solve(CurvatureOperator(curv.curvature, eta), rhs, solver_iters)
    return report.solution, report


def sqb_step(state, config, model):
    """One iteration ``theta <- theta - alpha (Sigma_S + eta I)^-1 (mu_T + eta theta)``."""
    k = state.iteration + 1
    T = model.num_examples
    batches = draw_pair(
        state.streams,
        k,
        T,
        size_at(config.gradient_schedule, k),
        size_at(config.curvature_schedule, k),
    )
    gb, cb = batches.gradient_batch, batches.curvature_batch
    if len(gb) == T and len(cb) == T:
        cb = gb
    xi, report = sqb_direction(model, state.theta, config.eta, gb, cb, config.solver_iters)
    new = state.copy()
    new.theta = state.theta - config.step_at(k) * xi
    _abort_if_bad(
        state, xi, new.theta, residual=report.final_residual_norm, solver_iterations=report.iterations_run
    )
    new.iteration = k
    new.data_touches = state.data_touches + len(gb) + len(cb)
    return new


# -- baselines ------------------------------------------------------------------


def _sgd_update(state, step_size, model, eta, batch_size=1):
    # in place: theta <- theta - step * (per-example loss gradient + eta theta)
    theta = state.theta
    if batch_size == 1:
        j = state.next_example()
        if isinstance(model, LogisticInstance):
            cols, vals = model.row(j)
            c = expit(vals @ theta[cols]) - model.y[j]
            if eta:
                theta *= 1.0 - step_size * eta
            theta[cols] -= step_size * c * vals
        else:
            g = model.example_gradient(j, theta) + eta * theta
            theta -= step_size * g
    else:
        idx = state.streams.stream(MINIBATCH, state.iteration).integers(
            model.num_examples, size=batch_size
        )
        g = model.gradient_sum(theta, idx) / batch_size + eta * theta
        theta -= step_size * g
    state.iteration += 1
    state.data_touches += batch_size


def sgd_step(state, step_size, model, batch_size=1, eta=0.0):
    """Constant-step stochastic gradient step on a uniformly drawn example."""
    new = state.copy()
    _sgd_update(new, step_size, model, eta, batch_size)
    _abort_if_bad(state, new.theta)
    return new


def _asgd_update(state, step_size, model, eta):
    _sgd_update(state, step_size, model, eta)
    k = state.iteration
    if state.average is None or k == 1:
        state.average = state.theta.copy()
    else:
        state.average += (state.theta - state.average) / k


def asgd_step(state, step_size, model, eta=0.0):
    """SGD step on the live iterate plus the running average of iterates."""
    new = state.copy()
    _asgd_update(new, step_size, model, eta)
    _abort_if_bad(state, new.theta, new.average)
    return new


class SagMemory:
    """Per-example gradient table for SAG and its running sum.

    For logistic models an entry is the scalar ``c_j`` with loss gradient
    ``c_j x_j``; other models keep full rows. The regularizer gradient is
    applied at the current iterate rather than stored. The running sum is
    rebuilt from the table every ``refresh_every`` updates to stop drift.
    """

    def __init__(self, model, refresh_every=None):
        self.model = model
        self.num_examples = model.num_examples
        self.linear = isinstance(model, LogisticInstance)
        if self.linear:
            self.table = np.zeros(model.num_examples)
        else:
            self.table = np.zeros((model.num_examples, model.dim))
        self.running_sum = np.zeros(model.dim)
        self.refresh_every = refresh_every or model.num_examples
        self._updates = 0

    def table_sum(self):
        if self.linear:
            return np.asarray(self.model.X.T @ self.table).ravel()
        return self.table.sum(axis=0)

    def update(self, j, theta):
        if self.linear:
            cols, vals = self.model.row(j)
            c = expit(vals @ theta[cols]) - self.model.y[j]
            self.running_sum[cols] += (c - self.table[j]) * vals
            self.table[j] = c
        else:
            g = self.model.example_gradient(j, theta)
            self.running_sum += g - self.table[j]
            self.table[j] = g
        self._updates += 1
        if self._updates % self.refresh_every == 0:
            self.running_sum = self.table_sum()

    def direction(self, theta, eta=0.0):
        """Average stored gradient plus the regularizer gradient at ``theta``."""
        return self.running_sum / self.num_examples + eta * theta


def _sag_update(state, memory, model, L_const, eta):
    j = state.next_example()
    memory.update(j, state.theta)
    state.theta -= memory.direction(state.theta, eta) / L_const
    state.iteration += 1
    state.data_touches += 1


def sag_step(state, memory, model, L_const, eta=0.0):
    """SAG step with constant step ``1 / L_const``. Mutates ``memory``."""
    new = state.copy()
    _sag_update(new, memory, model, L_const, eta)
    _abort_if_bad(state, new.theta)
    return new


# -- driver ---------------------------------------------------------------------


@dataclass
class MetricsRow:
    effective_passes: float
    wall_seconds: float
    train_cost: float
    train_excess_cost: float
    test_cost: float
    test_error: float

    FIELDS = (
        "effective_passes",
        "wall_seconds",
        "train_cost",
        "train_excess_cost",
        "test_cost",
        "test_error",
    )

    def astuple(self):
        return tuple(getattr(self, f) for f in self.FIELDS)


def _test_metrics(theta, test_set):
    if test_set is None:
        return math.nan, math.nan
    from .model import predict_error

    cost = test_set.loss_sum(theta) / test_set.num_examples
    return cost, predict_error(theta, test_set)


def run(
    method,
    config,
    model,
    metrics_sink=None,
    *,
    test_set=None,
    reference_cost=None,
    cadence=0.1,
    theta0=None,
):
    """Step ``method`` until ``config.max_effective_passes`` is reached.

    A :class:`MetricsRow` is recorded at the start, whenever the effective
    pass count crosses a multiple of ``cadence``, and at the end. Rows are
    appended to the returned list and passed to ``metrics_sink`` if given.
    Wall time excludes metric evaluation.

    Returns
    -------
    state : OptimizerState
    rows : list of MetricsRow
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if cadence <= 0:
        raise ValueError("cadence must be positive")
    if config.max_effective_passes < 0:
        raise ValueError("pass budget must be nonnegative")

    T = model.num_examples
    obj = Objective(model, config.eta)
    state = initial_state(model, config.seed, theta0)
    rows = []
    elapsed = 0.0

    def record():
        params = state.params
        cost = obj.value(params)
        excess = cost - reference_cost if reference_cost is not None else math.nan
        test_cost, test_error = _test_metrics(params, test_set)
        row = MetricsRow(state.effective_passes, elapsed, cost, excess, test_cost, test_error)
        rows.append(row)
        if metrics_sink is not None:
            metrics_sink(row)

    budget = config.max_effective_passes * T
    tick = 1
    record()

    if method == "sag":
        memory = SagMemory(model)
        L_const = model.lipschitz_constant(config.eta) if isinstance(model, LogisticInstance) else None
        if L_const is None:
            raise ValueError("SAG needs a model with a known Lipschitz constant")

    while state.data_touches < budget:
        start = time.perf_counter()
        if method == "sqb":
            state = sqb_step(state, config, model)
        else:
            if method == "sgd":
                _sgd_update(state, config.step_size, model, config.eta)
            elif method == "asgd":
                _asgd_update(state, config.step_size, model, config.eta)
            else:
                _sag_update(state, memory, model, L_const, config.eta)
            _abort_if_bad(state, state.theta)
        elapsed += time.perf_counter() - start

        if state.data_touches >= math.ceil(tick * cadence * T - 1e-9):
            record()
            tick = math.floor(state.data_touches / (cadence * T) + 1e-9) + 1
    if rows[-1].effective_passes != state.effective_passes:
        record()
    return state, rows
