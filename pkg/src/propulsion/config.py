"""Run configuration files.

A run config is a TOML document of flat keys plus one ``[[gene]]`` table
per search-space dimension::

    objective = "rastrigin"
    seed = 3
    n_islands = 2
    island_size = 4
    generations = 512

    [[gene]]
    name = "x0"
    kind = "continuous"
    lower = -5.12
    upper = 5.12

Gene tables may be omitted for built-in benchmarks, whose own limits are
used. Instead of ``objective`` a config may name an external ``command``
(a list of argv strings); it is run once per evaluation with the genes
appended as ``name=value`` arguments and must print the loss on its last
line of output.
"""

from __future__ import annotations

import dataclasses
import math
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import tomli_w

from .benchmarks import BENCHMARKS, UnknownBenchmark, lookup_objective
from .engine import ConfigError, IslandConfig
from .propagators import PropagatorConfig
from .space import CATEGORICAL, CONTINUOUS, INTEGER, KINDS, GeneSpec, SearchSpace, SpaceError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PROPAGATOR_KEYS = tuple(f.name for f in dataclasses.fields(PropagatorConfig))
ISLAND_KEYS = tuple(f.name for f in dataclasses.fields(IslandConfig))
BACKENDS = ("inprocess", "mesh")
GENE_KEYS = ("name", "kind", "lower", "upper", "categories")


class CommandObjective:
    """Objective that runs an external program per evaluation.

    A nonzero exit status, a timeout, or an unparsable last line yields an
    infinite loss.
    """

    uses_rng = False

    def __init__(self, argv: Sequence[str], space: SearchSpace, timeout: Optional[float] = None):
        self.argv = list(argv)
        self.space = space
        self.timeout = timeout

    def arguments(self, genes: Sequence[Any]) -> List[str]:
        return [f"{name}={value!r}" if isinstance(value, float) else f"{name}={value}"
                for name, value in zip(self.space.names, genes)]

    def __call__(self, genes: Sequence[Any]) -> float:
        try:
            proc = subprocess.run(
                self.argv + self.arguments(genes),
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired):
            return math.inf
        if proc.returncode != 0:
            return math.inf
        lines = proc.stdout.strip().splitlines()
        try:
            return float(lines[-1])
        except (IndexError, ValueError):
            return math.inf

    def __repr__(self) -> str:
        return f"CommandObjective({self.argv!r})"


@dataclass
class RunConfig:
    """Everything needed to launch one optimization run."""

    objective: Optional[str] = None
    command: Optional[List[str]] = None
    genes: List[GeneSpec] = field(default_factory=list)
    propagator: PropagatorConfig = field(default_factory=PropagatorConfig)
    island: IslandConfig = field(default_factory=IslandConfig)
    backend: str = "inprocess"
    rank_file: Optional[str] = None
    out: str = "propulsion-out"
    report_top_n: int = 1
    optimum: Optional[List[float]] = None
    # virtual in-process clock: time units per evaluation and per message
    eval_delay: float = 1.0
    latency: float = 0.0
    threads: bool = False
    command_timeout: Optional[float] = None

    # -- parsing --------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        data = dict(data)
        prop = {k: data.pop(k) for k in PROPAGATOR_KEYS if k in data}
        isl = {k: data.pop(k) for k in ISLAND_KEYS if k in data}
        raw_genes = data.pop("gene", [])
        cfg = cls()
        for key, value in data.items():
            if key in ("genes", "propagator", "island") or key not in _FIELDS:
                raise ConfigError(key, "unknown key")
            setattr(cfg, key, value)
        try:
            cfg.propagator = PropagatorConfig(**prop)
        except (TypeError, ValueError) as exc:
            raise ConfigError(_offending(str(exc), PROPAGATOR_KEYS), str(exc)) from None
        cfg.island = IslandConfig(**isl)
        if not isinstance(raw_genes, list):
            raise ConfigError("gene", "gene entries must be [[gene]] tables")
        cfg.genes = [_gene(g, i) for i, g in enumerate(raw_genes)]
        return cfg

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<file>", f"not valid TOML: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def read(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("<file>", str(exc)) from None
        return cls.loads(text)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for f in dataclasses.fields(self):
            if f.name in ("genes", "propagator", "island"):
                continue
            value = getattr(self, f.name)
            if value is not None:
                out[f.name] = value
        out.update(dataclasses.asdict(self.propagator))
        for key, value in dataclasses.asdict(self.island).items():
            if value is None:
                continue
            if key == "topology":
                value = [list(e) for e in value]
            out[key] = value
        if self.genes:
            out["gene"] = [_gene_dict(g) for g in self.genes]
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps())

    # -- validation -----------------------------------------------------------

    def resolve_space(self) -> SearchSpace:
        if self.genes:
            try:
                return SearchSpace(self.genes)
            except SpaceError as exc:
                raise ConfigError("gene", str(exc)) from None
        if self.objective in BENCHMARKS:
            return BENCHMARKS[self.objective].space()
        if self.objective is not None:
            try:
                _, space = lookup_objective(self.objective)
            except UnknownBenchmark:
                raise ConfigError("objective", f"unknown objective {self.objective!r}") from None
            if space is not None:
                return space
        raise ConfigError("gene", "no [[gene]] entries and the objective has no built-in space")

    def resolve_objective(self, space: SearchSpace):
        if self.objective is not None and self.command is not None:
            raise ConfigError("command", "give either objective or command, not both")
        if self.command is not None:
            if not self.command or not all(isinstance(a, str) for a in self.command):
                raise ConfigError("command", "must be a non-empty list of strings")
            return CommandObjective(self.command, space, self.command_timeout)
        if self.objective is None:
            raise ConfigError("objective", "missing; name a benchmark or give a command")
        try:
            fn, _ = lookup_objective(self.objective)
        except UnknownBenchmark:
            raise ConfigError("objective", f"unknown objective {self.objective!r}") from None
        return fn

    def build(self) -> Tuple[SearchSpace, Any, PropagatorConfig, IslandConfig]:
        """Validated (space, objective, propagator config, island config)."""
        if self.objective is None and self.command is None:
            raise ConfigError("objective", "missing; name a benchmark or give a command")
        space = self.resolve_space()
        objective = self.resolve_objective(space)
        try:
            island = self.island.validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("island", str(exc)) from None
        if self.backend not in BACKENDS:
            raise ConfigError("backend", f"must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend == "mesh" and not self.rank_file:
            raise ConfigError("rank_file", "the mesh backend needs a rank file")
        if int(self.report_top_n) != self.report_top_n or self.report_top_n < 1:
            raise ConfigError("report_top_n", f"must be a positive integer, got {self.report_top_n}")
        for key in ("eval_delay", "latency"):
            value = getattr(self, key)
            if not isinstance(value, (int, float)) or value < 0:
                raise ConfigError(key, f"must be a non-negative number, got {value!r}")
        if self.objective in BENCHMARKS and len(space) != BENCHMARKS[self.objective].dimension:
            raise ConfigError("gene", f"{self.objective} needs {BENCHMARKS[self.objective].dimension} genes")
        if self.optimum is not None and len(self.optimum) != len(space):
            raise ConfigError("optimum", f"needs {len(space)} values, got {len(self.optimum)}")
        return space, objective, self.propagator, island

    def optimum_point(self) -> Optional[List[float]]:
        if self.optimum is not None:
            return list(self.optimum)
        if self.objective in BENCHMARKS and not self.genes:
            return list(BENCHMARKS[self.objective].optimum_point)
        return None


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def _offending(message: str, keys: Sequence[str]) -> str:
    return next((k for k in keys if message.startswith(k)), "propagator")


def _gene(entry: Dict[str, Any], index: int) -> GeneSpec:
    if not isinstance(entry, dict):
        raise ConfigError(f"gene[{index}]", "must be a table")
    for key in entry:
        if key not in GENE_KEYS:
            raise ConfigError(f"gene[{index}].{key}", "unknown key")
    if "name" not in entry:
        raise ConfigError(f"gene[{index}].name", "missing")
    kind = entry.get("kind", CONTINUOUS)
    if kind not in KINDS:
        raise ConfigError(f"gene[{index}].kind", f"must be one of {KINDS}, got {kind!r}")
    if kind == CATEGORICAL:
        if "categories" not in entry:
            raise ConfigError(f"gene[{index}].categories", "missing")
        return GeneSpec.categorical(entry["name"], [str(c) for c in entry["categories"]])
    for key in ("lower", "upper"):
        if key not in entry:
            raise ConfigError(f"gene[{index}].{key}", "missing")
    if kind == INTEGER:
        return GeneSpec.integer(entry["name"], entry["lower"], entry["upper"])
    return GeneSpec.continuous(entry["name"], entry["lower"], entry["upper"])


def _gene_dict(g: GeneSpec) -> Dict[str, Any]:
    if g.kind == CATEGORICAL:
        return {"name": g.name, "kind": g.kind, "categories": list(g.categories)}
    return {"name": g.name, "kind": g.kind, "lower": g.lower, "upper": g.upper}
