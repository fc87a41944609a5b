"""Randomized run cases and the protocol invariants checked after finalize."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, Optional

from propulsion import IslandConfig, RunResult, SearchSpace, run
from propulsion.benchmarks import Benchmark
from propulsion.transport import InProcessHub, Layout

SPHERE = SearchSpace.box(2, 5.12)


@dataclass
class Case:
    seed: int
    config: IslandConfig
    latency_scale: float
    delays: Dict[tuple, float]

    def describe(self) -> str:
        c = self.config
        return (
            f"seed={self.seed} sizes={c.sizes} mode={c.exchange_mode} p={c.exchange_probability:.2f} "
            f"gens={c.generations} latency={self.latency_scale}"
        )


def random_case(seed: int) -> Case:
    r = random.Random(seed)
    n_islands = r.randint(1, 4)
    sizes = [r.randint(1, 4) for _ in range(n_islands)]
    topology = None
    if n_islands > 1 and r.random() < 0.5:
        edges = [(a, b) for a in range(n_islands) for b in range(n_islands) if a != b]
        topology = r.sample(edges, r.randint(1, len(edges)))
    cfg = IslandConfig(
        island_sizes=sizes,
        n_islands=n_islands,
        generations=r.randint(4, 30),
        exchange_mode=r.choice(["migration", "pollination"]),
        exchange_probability=r.choice([0.0, 0.3, 0.7, 1.0]),
        n_migrants=r.randint(1, 2),
        topology=topology,
        emigration_policy=r.choice(["best", "random"]),
        immigration_policy=r.choice(["worst", "random"]),
        seed=seed,
    )
    delays = {(w, g): r.uniform(0.2, 4.0) for w in range(sum(sizes)) for g in range(cfg.generations)}
    return Case(seed, cfg, r.choice([0.0, 0.5, 3.0, 10.0]), delays)


def run_case(case: Case, objective: Optional[Callable] = None, **kw) -> RunResult:
    layout = Layout(case.config.sizes)
    draws = random.Random(case.seed ^ 0x5EED)
    scale = case.latency_scale

    def latency(src, dest, env):
        return draws.uniform(0.0, scale)

    hub = InProcessHub(layout, SPHERE, latency=latency, **kw)
    return run(
        SPHERE,
        objective or Benchmark("sphere"),
        island_config=case.config,
        hub=hub,
        eval_delay=lambda a, g: case.delays[(a.global_id, g)],
    )


def loss_key(loss: float) -> str:
    return loss.hex()


def island_state(result: RunResult, gid: int) -> set:
    return {(i.identity, i.active, loss_key(i.loss)) for i in result.ledgers[gid].records}


def converged(result: RunResult) -> bool:
    """All workers of every island hold identical (identity, active, loss) sets."""
    for island in range(result.layout.n_islands):
        states = [island_state(result, a.global_id) for a in result.layout.island(island)]
        if any(s != states[0] for s in states[1:]):
            return False
    return True


def conserved(result: RunResult) -> bool:
    cfg = result.config
    return result.evaluations == sum(cfg.sizes) * cfg.generations


def evaluated_per_island(result: RunResult) -> Counter:
    return Counter(ident[0] for ident in result.unique())


def active_per_island(result: RunResult) -> Dict[int, int]:
    out = {}
    for island in range(result.layout.n_islands):
        first = result.layout.island(island)[0].global_id
        out[island] = sum(i.active for i in result.ledgers[first].records)
    return out


def balanced(result: RunResult) -> bool:
    evaluated = evaluated_per_island(result)
    return all(n == evaluated[i] for i, n in active_per_island(result).items())


def exclusive(result: RunResult) -> bool:
    """Each identity active on at most one island; emigrants inactive at home."""
    active_on = Counter()
    for island in range(result.layout.n_islands):
        first = result.layout.island(island)[0].global_id
        active_on.update(i.identity for i in result.ledgers[first].records if i.active)
    if any(n > 1 for n in active_on.values()):
        return False
    for gid, events in result.events.items():
        home = result.layout[gid].island
        emigrated = {(e[2], e[3], e[4]) for e in events if e[1] == "emigrated"}
        for ind in result.ledgers[gid].records:
            if ind.identity in emigrated and ind.origin_island == home and ind.active:
                return False
    return True


def losses_immutable(result: RunResult) -> bool:
    seen: Dict[tuple, str] = {}
    for ledger in result.ledgers.values():
        for i in ledger.records:
            if seen.setdefault(i.identity, loss_key(i.loss)) != loss_key(i.loss):
                return False
    return True


def dumps(result: RunResult) -> Dict[int, str]:
    return {gid: result.ledger_csv(gid) for gid in sorted(result.ledgers)}
