"""Batch-size schedules and independent batch draws."""

import logging
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

__all__ = ["BatchSchedule", "BatchDraw", "RandomStreams", "size_at", "draw", "draw_pair"]

logger = logging.getLogger(__name__)

# Stream purposes. Each (purpose, counter) pair seeds its own generator, so
# gradient and curvature draws never share a stream.
GRADIENT, CURVATURE, EXAMPLE, MINIBATCH = 0, 1, 2, 3


@dataclass(frozen=True)
class BatchSchedule:
    """Linear growth ``b_k = min(cap, b1 + round((k - 1) * gamma))``."""

    b1: int = 5
    gamma: float = 0.0
    cap: float = math.inf

    def __post_init__(self):
        if self.b1 < 1:
            raise ValueError(f"b1 must be at least 1, got {self.b1}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.cap < 1:
            raise ValueError(f"cap must be at least 1, got {self.cap}")

    def size_at(self, k):
        return size_at(self, k)


def size_at(schedule, k):
    if k < 1:
        raise ValueError(f"iteration must be >= 1, got {k}")
    # exact decimal product so that e.g. 3 * 0.5 rounds to 2, not 1
    grow = Decimal(repr(float(schedule.gamma))) * (k - 1)
    size = schedule.b1 + int(grow.quantize(Decimal(1), rounding=ROUND_HALF_UP))
    return int(min(schedule.cap, size))


class RandomStreams:
    """Named, independent random streams derived from one seed.

    ``stream(purpose, counter)`` always returns a fresh generator in the same
    state, so draws are reproducible without carrying generator state around.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)

    def stream(self, purpose, counter=0):
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(purpose), int(counter)))
        return np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RandomStreams(seed={self.seed})"


def draw(rng, population, size):
    """Uniform subset of ``range(population)`` without replacement.

    A request above ``population`` returns the full index set.
    """
    if size < 1:
        raise ValueError(f"batch size must be at least 1, got {size}")
    if size >= population:
        if size > population:
            logger.debug("batch size %d clamped to population %d", size, population)
        return np.arange(population)
    return rng.choice(population, size=size, replace=False)


@dataclass
class BatchDraw:
    gradient_batch: np.ndarray
    curvature_batch: np.ndarray


def draw_pair(streams, k, population, gradient_size, curvature_size):
    """Independent gradient and curvature batches for iteration ``k``."""
    return BatchDraw(
        draw(streams.stream(GRADIENT, k), population, gradient_size),
        draw(streams.stream(CURVATURE, k), population, curvature_size),
    )
