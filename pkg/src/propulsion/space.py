"""Search-space description, individuals, and random initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence, Tuple

import numpy as np

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, INTEGER, CATEGORICAL)

Identity = Tuple[int, int, int]


class SpaceError(ValueError):
    """Invalid search space. ``problems`` lists every violation found."""

    def __init__(self, problems: Sequence["SpaceProblem"]):
        self.problems = list(problems)
        super().__init__("; ".join(str(p) for p in self.problems))


@dataclass(frozen=True)
class SpaceProblem:
    kind: str  # EmptySpace | BadLimits | DuplicateName | BadKind | BadCategories
    name: Optional[str] = None

    def __str__(self) -> str:
        return self.kind if self.name is None else f"{self.kind}({self.name})"


@dataclass(frozen=True)
class GeneSpec:
    name: str
    kind: str = CONTINUOUS
    lower: Optional[float] = None
    upper: Optional[float] = None
    categories: Tuple[str, ...] = ()

    @classmethod
    def continuous(cls, name: str, lower: float, upper: float) -> "GeneSpec":
        return cls(name, CONTINUOUS, float(lower), float(upper))

    @classmethod
    def integer(cls, name: str, lower: int, upper: int) -> "GeneSpec":
        return cls(name, INTEGER, int(lower), int(upper))

    @classmethod
    def categorical(cls, name: str, categories: Iterable[str]) -> "GeneSpec":
        return cls(name, CATEGORICAL, categories=tuple(categories))

    @property
    def width(self) -> float:
        return float(self.upper - self.lower)

    def contains(self, value: Any) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.categories
        if self.kind == INTEGER and int(value) != value:
            return False
        return self.lower <= value <= self.upper


class SearchSpace:
    """Ordered, immutable collection of gene specifications.

    Gene order defines gene positions for crossover, mutation, the wire
    format, and CSV columns. Construct with ``validate=False`` to build a
    deliberately broken space for :func:`validate_space`.
    """

    def __init__(self, genes: Iterable[GeneSpec], validate: bool = True):
        self._genes = tuple(genes)
        if validate:
            validate_space(self)
        self._continuous = all(g.kind == CONTINUOUS for g in self._genes)
        if self._genes and all(g.kind != CATEGORICAL for g in self._genes):
            self._lower = np.array([float(g.lower) for g in self._genes])
            self._upper = np.array([float(g.upper) for g in self._genes])
        else:
            self._lower = self._upper = None

    @classmethod
    def box(cls, dimension: int, limit: float, prefix: str = "x") -> "SearchSpace":
        """Symmetric continuous box ``[-limit, limit]^dimension``."""
        return cls(GeneSpec.continuous(f"{prefix}{i + 1}", -limit, limit) for i in range(dimension))

    @property
    def genes(self) -> Tuple[GeneSpec, ...]:
        return self._genes

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(g.name for g in self._genes)

    @property
    def all_continuous(self) -> bool:
        return self._continuous

    @property
    def lower(self) -> Optional[np.ndarray]:
        return self._lower

    @property
    def upper(self) -> Optional[np.ndarray]:
        return self._upper

    def __len__(self) -> int:
        return len(self._genes)

    def __iter__(self):
        return iter(self._genes)

    def __getitem__(self, i: int) -> GeneSpec:
        return self._genes[i]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SearchSpace) and self._genes == other._genes

    def __hash__(self) -> int:
        return hash(self._genes)

    def __repr__(self) -> str:
        return f"SearchSpace({list(self._genes)!r})"

    def contains(self, genes: Sequence[Any]) -> bool:
        return len(genes) == len(self._genes) and all(g.contains(v) for g, v in zip(self._genes, genes))


def validate_space(space: SearchSpace) -> None:
    """Raise :class:`SpaceError` listing every violated gene invariant."""
    problems = []
    genes = space.genes
    if not genes:
        problems.append(SpaceProblem("EmptySpace"))
    seen = set()
    for g in genes:
        if g.name in seen:
            problems.append(SpaceProblem("DuplicateName", g.name))
        seen.add(g.name)
        if g.kind not in KINDS:
            problems.append(SpaceProblem("BadKind", g.name))
        elif g.kind == CATEGORICAL:
            if not g.categories or len(set(g.categories)) != len(g.categories):
                problems.append(SpaceProblem("BadCategories", g.name))
        else:
            lo, hi = g.lower, g.upper
            if (
                lo is None
                or hi is None
                or not (math.isfinite(lo) and math.isfinite(hi))
                or not lo < hi
            ):
                problems.append(SpaceProblem("BadLimits", g.name))
    if problems:
        raise SpaceError(problems)


@dataclass(eq=False)
class Individual:
    """One candidate solution with its provenance.

    ``loss`` is ``None`` until evaluated. The identity triple
    ``(origin_island, origin_rank, generation)`` is unique across a run.
    """

    genes: Tuple[Any, ...]
    loss: Optional[float] = None
    origin_island: int = -1
    origin_rank: int = -1
    generation: int = -1
    active: bool = True
    resident_island: int = -1

    @property
    def identity(self) -> Identity:
        return (self.origin_island, self.origin_rank, self.generation)

    @property
    def evaluated(self) -> bool:
        return self.loss is not None

    def clone(self) -> "Individual":
        return Individual(
            tuple(self.genes),
            self.loss,
            self.origin_island,
            self.origin_rank,
            self.generation,
            self.active,
            self.resident_island,
        )

    def __repr__(self) -> str:
        state = "" if self.active else ", inactive"
        return f"Individual({self.identity}, loss={self.loss}{state})"


def genes_from_unit(space: SearchSpace, u: np.ndarray) -> Tuple[Any, ...]:
    """Map uniform draws in [0, 1) onto the gene domains."""
    if space.all_continuous:
        vals = np.minimum(space.lower + u * (space.upper - space.lower), space.upper)
        return tuple(vals.tolist())
    out = []
    for g, x in zip(space.genes, u.tolist()):
        if g.kind == CONTINUOUS:
            out.append(min(g.lower + x * (g.upper - g.lower), g.upper))
        elif g.kind == INTEGER:
            n = g.upper - g.lower + 1
            out.append(int(g.lower + min(int(x * n), n - 1)))
        else:
            n = len(g.categories)
            out.append(g.categories[min(int(x * n), n - 1)])
    return tuple(out)


def sample_random(space: SearchSpace, rng: np.random.Generator) -> Individual:
    """Draw an unevaluated individual uniformly from ``space``.

    Consumes exactly ``len(space)`` uniform draws from ``rng``.
    """
    return Individual(genes_from_unit(space, rng.random(len(space))))
