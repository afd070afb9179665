"""Semistochastic quadratic-bound optimization for log-linear models."""

from .bound import BatchBound, BoundFactors, bound_batch, bound_single, weight_function
from .data import RawDataset, SplitSpec, load_libsvm, parse_libsvm, split, write_libsvm
from .linalg import CurvatureOperator, SolveReport, solve
from .model import (
    LogisticInstance,
    LogLinearModel,
    Objective,
    TabularModel,
    full_gradient,
    full_hessian,
    objective_value,
    partition_value,
    predict_error,
)
from .optimizer import (
    BaselineConfig,
    MetricsRow,
    OptimizerAbort,
    OptimizerState,
    SagMemory,
    SqbConfig,
    asgd_step,
    run,
    sag_step,
    sgd_step,
    sqb_step,
)
from .sampling import BatchSchedule, RandomStreams, draw, size_at

__version__ = "0.1.0"
