"""Breeding operators.

Two flavours of operator live here. A *propagator* maps a population to
one new unevaluated :class:`Individual`; a *gene operator* maps a gene
tuple to a gene tuple (mutations, and :class:`Stochastic` pipelines of
them). Neither holds state between calls, and every random draw comes
from the generator passed at call time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, List, Sequence, Tuple

import numpy as np

from .space import CONTINUOUS, Individual, SearchSpace, genes_from_unit, sample_random

Genes = Tuple[Any, ...]
GeneOperator = Callable[[Genes, np.random.Generator], Genes]


class InsufficientPopulation(ValueError):
    pass


class SpaceMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PropagatorConfig:
    """Knobs of the default propagator."""

    pool_size: int = 20
    crossover_probability: float = 0.7
    point_mutation_probability: float = 0.4
    sigma_factor: float = 0.05
    random_init_probability: float = 0.2

    def __post_init__(self):
        for name in ("crossover_probability", "point_mutation_probability", "random_init_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if not self.sigma_factor > 0:
            raise ValueError(f"sigma_factor must be positive, got {self.sigma_factor}")
        if int(self.pool_size) != self.pool_size or self.pool_size < 2:
            raise ValueError(f"pool_size must be an integer >= 2, got {self.pool_size}")


# -- selection ----------------------------------------------------------------


def _losses(pop: Sequence[Individual]) -> np.ndarray:
    cached = getattr(pop, "losses", None)
    if cached is not None:
        return cached
    return np.fromiter((ind.loss for ind in pop), dtype=float, count=len(pop))


def _check_k(pop: Sequence[Individual], k: int) -> None:
    if k < 0 or len(pop) < k:
        raise InsufficientPopulation(f"need {k} individuals, have {len(pop)}")


def ranked(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the first ``k`` entries of a stable ascending sort of ``values``.

    Linear-time partition followed by a sort of the ``k`` survivors only.
    """
    n = len(values)
    if k >= n:
        return np.argsort(values, kind="stable")
    if k <= 0:
        return np.empty(0, dtype=np.intp)
    kth = np.partition(values, k - 1)[k - 1]
    below = np.flatnonzero(values < kth)
    tied = np.flatnonzero(values == kth)[: k - len(below)]
    idx = np.concatenate([below, tied])
    return idx[np.argsort(values[idx], kind="stable")]


def select_best(pop: Sequence[Individual], k: int) -> List[Individual]:
    """``k`` lowest-loss individuals; ties go to the earlier one."""
    _check_k(pop, k)
    return [pop[i] for i in ranked(_losses(pop), k).tolist()]


def select_worst(pop: Sequence[Individual], k: int) -> List[Individual]:
    """``k`` highest-loss individuals; ties go to the earlier one."""
    _check_k(pop, k)
    return [pop[i] for i in ranked(-_losses(pop), k).tolist()]


def select_uniform(pop: Sequence[Individual], k: int, rng: np.random.Generator) -> List[Individual]:
    """``k`` distinct individuals drawn uniformly without replacement."""
    _check_k(pop, k)
    idx = rng.choice(len(pop), size=k, replace=False)
    return [pop[i] for i in idx.tolist()]


# -- variation ----------------------------------------------------------------


def uniform_crossover(
    parent_a: Individual, parent_b: Individual, crossover_probability: float, rng: np.random.Generator
) -> Genes:
    """Copy of ``parent_a`` with each gene taken from ``parent_b`` with the given probability."""
    a, b = parent_a.genes, parent_b.genes
    if len(a) != len(b):
        raise SpaceMismatch(f"parents have {len(a)} and {len(b)} genes")
    swap = rng.random(len(a)) < crossover_probability
    return tuple(y if s else x for x, y, s in zip(a, b, swap.tolist()))


def point_mutation(genes: Genes, probability: float, space: SearchSpace, rng: np.random.Generator) -> Genes:
    """Resample each gene uniformly within its limits with ``probability``.

    Always consumes ``2 * len(genes)`` uniform draws.
    """
    n = len(genes)
    hit = (rng.random(n) < probability).tolist()
    fresh = genes_from_unit(space, rng.random(n))
    return tuple(f if h else g for g, f, h in zip(genes, fresh, hit))


def interval_mutation(genes: Genes, sigma_factor: float, space: SearchSpace, rng: np.random.Generator) -> Genes:
    """Gaussian perturbation of continuous genes, clamped to the limits.

    The standard deviation of gene ``i`` is ``sigma_factor`` times its limit
    width. Integer and categorical genes pass through unchanged. One normal
    draw is consumed per gene regardless of kind.
    """
    z = rng.standard_normal(len(genes))
    if space.all_continuous:
        lo, hi = space.lower, space.upper
        x = np.asarray(genes, dtype=float) + z * (sigma_factor * (hi - lo))
        return tuple(np.clip(x, lo, hi).tolist())
    out = []
    for g, spec, dz in zip(genes, space.genes, z.tolist()):
        if spec.kind == CONTINUOUS:
            v = g + dz * sigma_factor * (spec.upper - spec.lower)
            out.append(min(max(v, spec.lower), spec.upper))
        else:
            out.append(g)
    return tuple(out)


class PointMutation:
    def __init__(self, probability: float, space: SearchSpace):
        self.probability = probability
        self.space = space

    def __call__(self, genes: Genes, rng: np.random.Generator) -> Genes:
        return point_mutation(genes, self.probability, self.space, rng)


class IntervalMutation:
    def __init__(self, sigma_factor: float, space: SearchSpace):
        self.sigma_factor = sigma_factor
        self.space = space

    def __call__(self, genes: Genes, rng: np.random.Generator) -> Genes:
        return interval_mutation(genes, self.sigma_factor, self.space, rng)


class Stochastic:
    """Apply each gene operator independently with its probability, in order.

    One uniform draw decides each rule before that rule runs.
    """

    def __init__(self, rules: Sequence[Tuple[GeneOperator, float]]):
        for _, p in rules:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        self.rules = list(rules)

    def __call__(self, genes: Genes, rng: np.random.Generator) -> Genes:
        for op, p in self.rules:
            if rng.random() < p:
                genes = op(genes, rng)
        return genes


def stochastic(rules: Sequence[Tuple[GeneOperator, float]]) -> Stochastic:
    return Stochastic(rules)


# -- propagators --------------------------------------------------------------


class Propagator:
    """Maps a population of evaluated individuals to one unevaluated child.

    Implementations must not modify ``population``.
    """

    def __call__(self, population: Sequence[Individual], rng: np.random.Generator) -> Individual:
        raise NotImplementedError


class RandomInit(Propagator):
    def __init__(self, space: SearchSpace):
        self.space = space

    def __call__(self, population, rng):
        return sample_random(self.space, rng)


class Conditional(Propagator):
    """``then_rule`` once the population holds ``threshold`` individuals, else ``else_rule``."""

    def __init__(self, threshold: int, then_rule: Propagator, else_rule: Propagator):
        self.threshold = threshold
        self.then_rule = then_rule
        self.else_rule = else_rule

    def __call__(self, population, rng):
        if len(population) >= self.threshold:
            return self.then_rule(population, rng)
        return self.else_rule(population, rng)


def conditional(threshold: int, then_rule: Propagator, else_rule: Propagator) -> Conditional:
    return Conditional(threshold, then_rule, else_rule)


class DefaultPropagator(Propagator):
    """Random restart, or best-pool parents + crossover + point and interval mutation.

    Per call: with ``random_init_probability`` return a fresh random
    individual. Otherwise take the ``pool_size`` fittest individuals, draw
    two distinct parents from them uniformly, apply uniform crossover and
    point mutation (each gene with its own probability), and finish with
    interval mutation, which is always applied.

    Raises :class:`InsufficientPopulation` if the bred branch is taken with
    fewer than ``pool_size`` individuals; wrap in :class:`Conditional`
    (see :func:`default_propagator`) to avoid it.
    """

    def __init__(self, config: PropagatorConfig, space: SearchSpace):
        self.config = config
        self.space = space

    def __call__(self, population, rng):
        cfg = self.config
        if rng.random() < cfg.random_init_probability:
            return sample_random(self.space, rng)
        pool = select_best(population, cfg.pool_size)
        parent_a, parent_b = select_uniform(pool, 2, rng)
        genes = uniform_crossover(parent_a, parent_b, cfg.crossover_probability, rng)
        genes = point_mutation(genes, cfg.point_mutation_probability, self.space, rng)
        genes = interval_mutation(genes, cfg.sigma_factor, self.space, rng)
        return Individual(genes)


def default_propagator(config: PropagatorConfig, space: SearchSpace) -> Propagator:
    """The default breeder, guarded to random-initialize until ``pool_size`` individuals exist."""
    return Conditional(config.pool_size, DefaultPropagator(config, space), RandomInit(space))
