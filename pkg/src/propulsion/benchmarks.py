"""Analytic test objectives with their domains and known minima.

=============  =====  =========  ==========================================
name           dim    limit      minimum
=============  =====  =========  ==========================================
sphere         2      5.12       f(0, 0) = 0
rosenbrock     2      2.048      f(1, 1) = 0
step           5      5.12       f(x_i <= -5) = -25
quartic        30     1.28       f(0, ..., 0) = sum of the noise terms
rastrigin      20     5.12       f(0, ..., 0) = 0
griewank       10     600        f(0, ..., 0) = 0
schwefel       10     500        f(420.968746, ...) = 0
bisphere       30     5.12       f(2.5, ..., 2.5) = 0
birastrigin    30     5.12       f(2.5, ..., 2.5) = 0
=============  =====  =========  ==========================================

``step`` truncates toward zero. ``quartic`` adds one fresh standard
normal draw per summand on every call and therefore needs a generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .space import SearchSpace

SCHWEFEL_V = 418.982887
SCHWEFEL_OPT = 420.968746

# double-funnel constants, computed rather than typed in
MU1 = 2.5
S = 1.0 - (2.0 * math.sqrt(50.0) - 8.2) ** -0.5
MU2 = -math.sqrt((MU1**2 - 1.0) / S)


class UnknownBenchmark(KeyError):
    pass


class DimensionMismatch(ValueError):
    pass


class OutOfBounds(ValueError):
    pass


def sphere(x: np.ndarray) -> float:
    return float(np.sum(x * x))


def rosenbrock(x: np.ndarray) -> float:
    return float(100.0 * (x[0] ** 2 - x[1]) ** 2 + (1.0 - x[0]) ** 2)


def step(x: np.ndarray) -> float:
    return float(np.sum(np.trunc(x)))


def quartic_clean(x: np.ndarray) -> float:
    i = np.arange(1, len(x) + 1)
    return float(np.sum(i * x**4))


def quartic(x: np.ndarray, rng: np.random.Generator) -> float:
    i = np.arange(1, len(x) + 1)
    return float(np.sum(i * x**4 + rng.standard_normal(len(x))))


def rastrigin(x: np.ndarray) -> float:
    return float(10.0 * len(x) + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x)))


def griewank(x: np.ndarray) -> float:
    i = np.arange(1, len(x) + 1)
    return float(1.0 + np.sum(x * x) / 4000.0 - np.prod(np.cos(x / np.sqrt(i))))


def schwefel(x: np.ndarray) -> float:
    return float(len(x) * SCHWEFEL_V - np.sum(x * np.sin(np.sqrt(np.abs(x)))))


def bisphere(x: np.ndarray) -> float:
    d = len(x)
    return float(min(np.sum((x - MU1) ** 2), d + S * np.sum((x - MU2) ** 2)))


def birastrigin(x: np.ndarray) -> float:
    return float(bisphere(x) + 10.0 * np.sum(1.0 - np.cos(2.0 * np.pi * (x - MU1))))


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    dimension: int
    limit: float
    optimum_value: float
    optimum_point: Tuple[float, ...]
    function: Callable
    noisy: bool = False

    def space(self) -> SearchSpace:
        return SearchSpace.box(self.dimension, self.limit)


def _spec(name, dim, limit, fn, point, value=0.0, noisy=False):
    return BenchmarkSpec(name, dim, limit, value, tuple(float(p) for p in point), fn, noisy)


BENCHMARKS: Dict[str, BenchmarkSpec] = {
    s.name: s
    for s in (
        _spec("sphere", 2, 5.12, sphere, [0.0] * 2),
        _spec("rosenbrock", 2, 2.048, rosenbrock, [1.0, 1.0]),
        _spec("step", 5, 5.12, step, [-5.12] * 5, value=-25.0),
        _spec("quartic", 30, 1.28, quartic, [0.0] * 30, noisy=True),
        _spec("rastrigin", 20, 5.12, rastrigin, [0.0] * 20),
        _spec("griewank", 10, 600.0, griewank, [0.0] * 10),
        _spec("schwefel", 10, 500.0, schwefel, [SCHWEFEL_OPT] * 10),
        _spec("bisphere", 30, 5.12, bisphere, [MU1] * 30),
        _spec("birastrigin", 30, 5.12, birastrigin, [MU1] * 30),
    )
}

_CUSTOM: Dict[str, Tuple[Callable[[Sequence], float], Optional[SearchSpace]]] = {}


def spec(name: str) -> BenchmarkSpec:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise UnknownBenchmark(name) from None


def evaluate(name: str, x: Sequence[float], rng: Optional[np.random.Generator] = None) -> float:
    """Value of benchmark ``name`` at ``x``; ``rng`` is only used by quartic."""
    s = spec(name)
    arr = np.asarray(x, dtype=float)
    if arr.shape != (s.dimension,):
        raise DimensionMismatch(f"{name} expects {s.dimension} values, got {arr.shape}")
    if np.any(np.abs(arr) > s.limit):
        raise OutOfBounds(f"{name} is defined on [-{s.limit}, {s.limit}]")
    if s.noisy:
        if rng is None:
            raise ValueError(f"{name} needs a random generator")
        return s.function(arr, rng)
    return s.function(arr)


class Benchmark:
    """Callable objective bound to a benchmark name.

    The engine passes ``rng=`` to objectives whose ``uses_rng`` is true.
    """

    def __init__(self, name: str):
        self.spec = spec(name)
        self.name = name
        self.uses_rng = self.spec.noisy

    def __call__(self, genes: Sequence[float], rng: Optional[np.random.Generator] = None) -> float:
        return evaluate(self.name, genes, rng)

    def space(self) -> SearchSpace:
        return self.spec.space()

    def __repr__(self) -> str:
        return f"Benchmark({self.name!r})"


def register_objective(name: str, fn: Callable[[Sequence], float], space: Optional[SearchSpace] = None) -> None:
    """Make a custom objective addressable by name from run configs."""
    if name in BENCHMARKS:
        raise ValueError(f"{name!r} is a built-in benchmark")
    _CUSTOM[name] = (fn, space)


def lookup_objective(name: str) -> Tuple[Callable, Optional[SearchSpace]]:
    """Objective callable and default space for a built-in or registered name."""
    if name in BENCHMARKS:
        b = Benchmark(name)
        return b, b.space()
    if name in _CUSTOM:
        return _CUSTOM[name]
    raise UnknownBenchmark(name)
