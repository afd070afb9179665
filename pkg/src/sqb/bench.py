"""Benchmark harness: reference optimum, experiment runs and the ``sqb-bench`` CLI."""

import argparse
import csv
import hashlib
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import SplitSpec, load_libsvm, split
from .model import LogisticInstance, Objective
from .optimizer import (
    METHODS,
    BaselineConfig,
    MetricsRow,
    OptimizerAbort,
    SqbConfig,
    run,
    sqb_direction,
)
from .sampling import BatchSchedule

__all__ = [
    "ReferenceOptimumError",
    "RunConfig",
    "compute_reference_optimum",
    "run_experiment",
    "write_metrics_csv",
    "validate_metrics_csv",
    "sweep",
    "build_parser",
    "main",
]

logger = logging.getLogger(__name__)

CSV_HEADER = MetricsRow.FIELDS


class ReferenceOptimumError(RuntimeError):
    pass


# -- reference optimum --------------------------------------------------------


def dataset_hash(model):
    h = hashlib.sha256()
    h.update(repr(model.X.shape).encode())
    for arr in (model.X.indptr, model.X.indices, model.X.data, model.y):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def cache_dir():
    return Path(os.environ.get("SQB_CACHE_DIR") or Path.home() / ".cache" / "sqb")


def compute_reference_optimum(model, eta, *, tol=1e-10, max_iters=10_000, use_cache=True):
    """Minimize the objective with full-batch bound iterations.

    Uses step 1 and ``min(d, 100)`` CG iterations per solve, stopping once the
    gradient norm is at most ``tol``. Results for logistic models are cached
    under ``$SQB_CACHE_DIR`` keyed by dataset hash and ``eta``.

    Returns
    -------
    theta : ndarray
    cost : float
    """
    if not eta > 0:
        raise ValueError(f"reference optimum needs eta > 0, got {eta}")
    path = None
    if use_cache and isinstance(model, LogisticInstance):
        key = hashlib.sha256(f"{dataset_hash(model)}:{eta!r}:{tol!r}".encode()).hexdigest()[:32]
        path = cache_dir() / f"ref-{key}.npz"
        if path.exists():
            with np.load(path) as cached:
                return cached["theta"].copy(), float(cached["cost"])

    obj = Objective(model, eta)
    everyone = np.arange(model.num_examples)
    solver_iters = min(model.dim, 100)
    theta = np.zeros(model.dim)
    for _ in range(max_iters):
        gnorm = float(np.linalg.norm(obj.gradient(theta)))
        if gnorm <= tol:
            break
        xi, _ = sqb_direction(model, theta, eta, everyone, everyone, solver_iters)
        theta = theta - xi
    else:
        gnorm = float(np.linalg.norm(obj.gradient(theta)))
        if gnorm > tol:
            raise ReferenceOptimumError(
                f"no convergence in {max_iters} iterations; gradient norm {gnorm:.3e}"
            )
    cost = obj.value(theta)

    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
        os.close(fd)
        np.savez(tmp, theta=theta, cost=cost)
        os.replace(tmp, path)
    return theta, cost


# -- experiments -------------------------------------------------------------


@dataclass
class RunConfig:
    data: str
    method: str = "sqb"
    alpha: float = 1.0
    # None means 1/T on the training split
    eta: Optional[float] = None
    gamma_mu: float = 0.05
    gamma_sigma: float = 0.001
    solver_iters: int = 5
    b1_mu: int = 5
    b1_sigma: int = 5
    cap_sigma: int = 200
    passes: float = 10.0
    seed: int = 0
    out: Optional[str] = None
    split: float = 0.9
    split_seed: int = 0
    cadence: float = 0.1
    unit_norm: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method != "sag" and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.passes < 0:
            raise ValueError("pass budget must be nonnegative")
        if self.solver_iters < 1 or self.b1_mu < 1 or self.b1_sigma < 1 or self.cap_sigma < 1:
            raise ValueError("solver iterations, initial batch sizes and caps must be >= 1")
        if self.gamma_mu < 0 or self.gamma_sigma < 0:
            raise ValueError("growth rates must be nonnegative")
        if not 0 < self.split <= 1:
            raise ValueError("split must be in (0, 1]")
        if self.cadence <= 0:
            raise ValueError("cadence must be positive")


def optimizer_config(config, eta):
    if config.method == "sqb":
        return SqbConfig(
            step_size=config.alpha,
            eta=eta,
            gradient_schedule=BatchSchedule(config.b1_mu, config.gamma_mu),
            curvature_schedule=BatchSchedule(config.b1_sigma, config.gamma_sigma, config.cap_sigma),
            solver_iters=config.solver_iters,
            max_effective_passes=config.passes,
            seed=config.seed,
        )
    return BaselineConfig(
        step_size=config.alpha, eta=eta, max_effective_passes=config.passes, seed=config.seed
    )


def prepare(config):
    """Load and split the dataset; returns ``(train, test, eta)``."""
    raw = load_libsvm(config.data)
    train_raw, test_raw = split(raw, SplitSpec(config.split, config.split_seed))
    train = train_raw.to_instance(config.unit_norm)
    test = test_raw.to_instance(config.unit_norm) if test_raw is not None else None
    eta = 1.0 / train.num_examples if config.eta is None else config.eta
    return train, test, eta


def write_metrics_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row.astuple()])


def validate_metrics_csv(path):
    """Check the header and that every cell parses as a float; returns rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ValueError(f"bad header {header!r}; expected {','.join(CSV_HEADER)}")
        rows = []
        for n, cells in enumerate(reader, start=2):
            if len(cells) != len(CSV_HEADER):
                raise ValueError(f"line {n}: {len(cells)} cells, expected {len(CSV_HEADER)}")
            try:
                rows.append(MetricsRow(*map(float, cells)))
            except ValueError as exc:
                raise ValueError(f"line {n}: {exc}") from None
    return rows


def run_experiment(config):
    """Run one configured method and write its metric series as CSV.

    Returns the list of :class:`MetricsRow`.
    """
    train, test, eta = prepare(config)
    if eta > 0:
        _, ref_cost = compute_reference_optimum(train, eta)
    else:
        ref_cost = None
        logger.warning("eta = 0: no reference optimum, excess cost is NaN")
    _, rows = run(
        config.method,
        optimizer_config(config, eta),
        train,
        test_set=test,
        reference_cost=ref_cost,
        cadence=config.cadence,
    )
    if config.out:
        write_metrics_csv(rows, config.out)
    return rows


def sweep(configs, max_workers=None):
    """Run independent experiments, in worker processes when ``max_workers > 1``."""
    configs = list(configs)
    if not max_workers or max_workers <= 1:
        return [run_experiment(c) for c in configs]
    with ProcessPoolExecutor(max_workers) as pool:
        return list(pool.map(run_experiment, configs))


# -- CLI ------------------------------------------------------------------------


def _eta(text):
    if text == "auto":
        return None
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("eta must be nonnegative or 'auto'")
    return value


def build_parser():
    p = argparse.ArgumentParser(
        prog="sqb-bench",
        description="Run an optimizer on a LIBSVM dataset and write its convergence curve as CSV.",
    )
    p.add_argument("--data", required=True, help="LIBSVM file (optionally gzip-compressed)")
    p.add_argument("--method", choices=METHODS, default="sqb")
    p.add_argument("--alpha", type=float, default=1.0, help="step size (ignored by sag)")
    p.add_argument("--eta", type=_eta, default=None, help="L2 weight, or 'auto' for 1/T")
    p.add_argument("--gamma-mu", type=float, default=0.05)
    p.add_argument("--gamma-sigma", type=float, default=0.001)
    p.add_argument("--solver-iters", type=int, default=5)
    p.add_argument("--b1-mu", type=int, default=5)
    p.add_argument("--b1-sigma", type=int, default=5)
    p.add_argument("--cap-sigma", type=int, default=200)
    p.add_argument("--passes", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    p.add_argument("--split", type=float, default=0.9, help="training fraction")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--cadence", type=float, default=0.1, help="passes between recorded rows")
    p.add_argument("--unit-norm", action="store_true", help="scale rows to unit norm")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    options = vars(args).copy()
    options.pop("verbose")
    to_stdout = options["out"] == "-"
    if to_stdout:
        options["out"] = None
    try:
        config = RunConfig(**options)
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        print(f"sqb-bench: error: {exc}", file=sys.stderr)
        return 2
    if not Path(config.data).is_file():
        parser.print_usage(sys.stderr)
        print(f"sqb-bench: error: cannot read {config.data}", file=sys.stderr)
        return 2
    try:
        rows = run_experiment(config)
    except (OptimizerAbort, ReferenceOptimumError, ValueError, OSError) as exc:
        print(f"sqb-bench: run aborted: {exc}", file=sys.stderr)
        diagnostics = getattr(exc, "diagnostics", None)
        if diagnostics:
            for k, v in diagnostics.items():
                print(f"  {k}: {v}", file=sys.stderr)
        return 1
    if to_stdout:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row.astuple()])
    return 0


if __name__ == "__main__":
    sys.exit(main())
