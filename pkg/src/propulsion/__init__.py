"""Asynchronous island-model genetic optimization."""

from .benchmarks import BENCHMARKS, Benchmark, evaluate, register_objective, spec
from .engine import ConfigError, IslandConfig, ResidualCache, RunResult, Worker, run, run_worker, simulate
from .ledger import DuplicateIdentity, PopulationLedger
from .propagators import PropagatorConfig, default_propagator
from .space import GeneSpec, Individual, SearchSpace, SpaceError, sample_random, validate_space

__version__ = "0.1.0"

__all__ = [
    "BENCHMARKS",
    "Benchmark",
    "ConfigError",
    "DuplicateIdentity",
    "GeneSpec",
    "Individual",
    "IslandConfig",
    "PopulationLedger",
    "PropagatorConfig",
    "ResidualCache",
    "RunResult",
    "SearchSpace",
    "SpaceError",
    "Worker",
    "default_propagator",
    "evaluate",
    "register_objective",
    "run",
    "run_worker",
    "sample_random",
    "simulate",
    "spec",
    "validate_space",
]
