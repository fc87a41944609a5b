"""Asynchronous island-model worker loop and run drivers.

Each worker owns a ledger, its random streams, and one transport endpoint.
One iteration of :meth:`Worker.worker_step`:

1. breed a child from the active population, evaluate it, record it and
   send it to every other worker on the island;
2. record whatever island peers have sent meanwhile;
3. with ``exchange_probability``, send emigrants to successor islands;
4. record immigrants (and, for pollination, pick replacement victims);
5. apply deactivation notices from island peers;
6. retry deactivations whose target had not arrived yet.

Nothing in the loop waits for another worker. After the last generation
:meth:`Worker.finalize` uses two barriers to drain every message still in
flight; all workers of an island then hold the same population.

Migration mode sends each emigrant to exactly one successor island and
only lets a worker emigrate individuals it bred itself, so an individual is
active on at most one island. Pollination mode sends copies. On arrival
the pollinator's coordinator (a worker on the target island derived from
the pollinator's identity, so every copy names the same one) deactivates
one victim. Each coordinator only victimizes individuals it owns: the ones
it bred and the pollinators it coordinated. Two coordinators can therefore
never condemn the same individual, and each island's active count stays
equal to the number of individuals evaluated there.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import math
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ledger import DEACTIVATED, PopulationLedger
from .propagators import Propagator, PropagatorConfig, default_propagator, ranked, select_uniform, select_worst
from .space import Identity, Individual, SearchSpace
from .transport import (
    DEACTIVATE,
    EMIGRANT,
    INTRA_ISLAND,
    MIGRATION,
    POLLINATION,
    Endpoint,
    Envelope,
    InProcessHub,
    Layout,
    WorkerAddress,
)

log = logging.getLogger(__name__)

# random stream indices per worker
BREED, EXCHANGE, VICTIM, NOISE = range(4)

EVENT_FIELDS = ("time", "kind", "island", "rank", "generation", "loss", "counterparty")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ResidualCache(RuntimeError):
    """Deactivations still pending after the final synchronization."""

    def __init__(self, address: WorkerAddress, identities: Sequence[Identity]):
        self.address = address
        self.identities = list(identities)
        super().__init__(f"{address!r} never received {self.identities}")


@dataclass
class IslandConfig:
    n_islands: int = 1
    island_size: int = 4
    island_sizes: Optional[List[int]] = None
    generations: int = 256
    exchange_mode: str = "pollination"
    exchange_probability: float = 0.7
    n_migrants: int = 1
    topology: Optional[List[Tuple[int, int]]] = None
    emigration_policy: str = "best"
    immigration_policy: str = "worst"
    seed: int = 0

    @property
    def sizes(self) -> List[int]:
        if self.island_sizes is not None:
            return list(self.island_sizes)
        return [self.island_size] * self.n_islands

    def edges(self) -> List[Tuple[int, int]]:
        n = len(self.sizes)
        if self.topology is None:
            return [(a, b) for a in range(n) for b in range(n) if a != b]
        return [tuple(e) for e in self.topology]

    def successors(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {i: [] for i in range(len(self.sizes))}
        for a, b in self.edges():
            out[a].append(b)
        return {k: sorted(set(v)) for k, v in out.items()}

    def validate(self) -> "IslandConfig":
        sizes = self.sizes
        if not sizes or any(int(s) != s or s < 1 for s in sizes):
            raise ConfigError("island_sizes", f"need positive integers, got {sizes}")
        if self.island_sizes is not None and self.n_islands != len(self.island_sizes):
            self.n_islands = len(self.island_sizes)
        if int(self.generations) != self.generations or self.generations < 1:
            raise ConfigError("generations", f"must be a positive integer, got {self.generations}")
        if self.exchange_mode not in ("migration", "pollination"):
            raise ConfigError("exchange_mode", f"must be migration or pollination, got {self.exchange_mode!r}")
        if not 0.0 <= self.exchange_probability <= 1.0:
            raise ConfigError("exchange_probability", f"must lie in [0, 1], got {self.exchange_probability}")
        if int(self.n_migrants) != self.n_migrants or self.n_migrants < 1:
            raise ConfigError("n_migrants", f"must be a positive integer, got {self.n_migrants}")
        if self.emigration_policy not in ("best", "random"):
            raise ConfigError("emigration_policy", f"must be best or random, got {self.emigration_policy!r}")
        if self.immigration_policy not in ("worst", "random"):
            raise ConfigError("immigration_policy", f"must be worst or random, got {self.immigration_policy!r}")
        for edge in self.edges():
            if len(edge) != 2:
                raise ConfigError("topology", f"edges are (source, target) pairs, got {edge}")
            a, b = edge
            if a == b:
                raise ConfigError("topology", f"self-edge on island {a}")
            if not (0 <= a < len(sizes) and 0 <= b < len(sizes)):
                raise ConfigError("topology", f"edge {edge} references a missing island")
        return self


def worker_streams(seed: int, global_id: int) -> List[np.random.Generator]:
    """Independent generators for breeding, exchange, victim choice, and objective noise."""
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(global_id, k))) for k in range(4)]


def coordinator_rank(seed: int, identity: Identity, island: int, island_size: int) -> int:
    """Worker on ``island`` that handles replacement for a pollinator.

    Uniform over ranks and fixed by (seed, identity, island), so repeated
    copies of the same pollinator agree on the coordinator.
    """
    key = struct.pack("<qqqqq", seed, island, *identity)
    h = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
    return h % island_size


class Worker:
    """One sequential worker: ledger, random streams, and endpoint."""

    def __init__(
        self,
        endpoint: Endpoint,
        space: SearchSpace,
        objective: Callable,
        config: IslandConfig,
        propagator: Optional[Propagator] = None,
        propagator_config: Optional[PropagatorConfig] = None,
    ):
        self.endpoint = endpoint
        self.address = endpoint.address
        self.layout: Layout = endpoint.layout
        self.space = space
        self.objective = objective
        self.config = config
        if propagator is None:
            propagator = default_propagator(propagator_config or PropagatorConfig(), space)
        self.propagator = propagator
        self.island = self.address.island
        self.rank = self.address.rank
        self.peers = [a for a in self.layout.island(self.island) if a != self.address]
        self.targets = config.successors().get(self.island, [])
        self.generation = 0
        self.ledger = PopulationLedger((self.island, self.rank))
        self.events: List[tuple] = []
        self.rng = worker_streams(config.seed, self.address.global_id)
        self._owner: Dict[Identity, int] = {}
        self._uses_rng = bool(getattr(objective, "uses_rng", False))

    def __repr__(self) -> str:
        return f"Worker({self.address!r}, generation={self.generation})"

    def _log(self, kind: str, ident: Identity, loss: Optional[float], counterparty: int = -1) -> None:
        self.events.append(
            (self.endpoint.now(), kind, ident[0], ident[1], ident[2],
             math.nan if loss is None else loss, counterparty)
        )

    # -- 1: breed and evaluate ---------------------------------------------

    def breed(self) -> Individual:
        child = self.propagator(self.ledger.active_view(), self.rng[BREED])
        child.origin_island = child.resident_island = self.island
        child.origin_rank = self.rank
        child.generation = self.generation
        child.active = True
        child.loss = None
        return child

    def evaluate(self, ind: Individual) -> Individual:
        try:
            if self._uses_rng:
                loss = float(self.objective(ind.genes, rng=self.rng[NOISE]))
            else:
                loss = float(self.objective(ind.genes))
            if math.isnan(loss):
                raise ValueError("objective returned NaN")
        except Exception as exc:
            log.warning("%r: objective failed for %s: %s", self.address, ind.identity, exc)
            loss = math.inf
        ind.loss = loss
        return ind

    def publish(self, ind: Individual) -> None:
        self.ledger.record(ind)
        self._log("bred", ind.identity, ind.loss, self.address.global_id)
        for peer in self.peers:
            self.endpoint.post(peer, Envelope(INTRA_ISLAND, self.address, individual=ind))

    def breed_and_evaluate(self) -> Individual:
        ind = self.evaluate(self.breed())
        self.publish(ind)
        return ind

    # -- 2: intra-island synchronization -----------------------------------

    def _record(self, ind: Individual, kind: str, sender: int) -> None:
        self.ledger.record(ind)
        self._log(kind, ind.identity, ind.loss, sender)
        if not ind.active:
            self._log("resolved", ind.identity, ind.loss, sender)

    def drain_intra_island(self) -> int:
        envs = self.endpoint.poll(INTRA_ISLAND)
        for env in envs:
            ind = env.individual
            ind.active = True
            self._record(ind, "received", env.sender.global_id)
        return len(envs)

    # -- 3: emigration -------------------------------------------------------

    def maybe_emigrate(self) -> bool:
        if self.rng[EXCHANGE].random() < self.config.exchange_probability:
            self.emigrate()
            return True
        return False

    def _pick_emigrants(self, active, k: int, eligible: Callable[[Individual], bool]) -> List[Individual]:
        """Up to ``k`` eligible individuals chosen by the emigration policy."""
        if self.config.emigration_policy == "best":
            m = 4 * k
            while True:
                head = ranked(active.losses, m).tolist()
                chosen = [active[i] for i in head if eligible(active[i])][:k]
                if len(chosen) == k or len(head) == len(active):
                    return chosen
                m *= 4
        candidates = [i for i in active if eligible(i)]
        return select_uniform(candidates, min(k, len(candidates)), self.rng[EXCHANGE])

    def emigrate(self) -> int:
        """Send emigrants to successor islands; returns the number of posts."""
        if not self.targets:
            return 0
        active = self.ledger.active_view()
        posts = 0
        if self.config.exchange_mode == "migration":
            taken: set = set()

            def own(ind: Individual) -> bool:
                return (
                    ind.origin_island == self.island
                    and ind.origin_rank == self.rank
                    and ind.identity not in taken
                )

            leaving: List[Tuple[Individual, int]] = []
            for target in self.targets:
                chosen = self._pick_emigrants(active, self.config.n_migrants, own)
                if not chosen:
                    break
                for ind in chosen:
                    taken.add(ind.identity)
                    for dest in self.layout.island(target):
                        self.endpoint.post(dest, Envelope(EMIGRANT, self.address, individual=ind, mode=MIGRATION))
                        posts += 1
                    leaving.append((ind, target))
            if not leaving:
                log.debug("%r: no eligible emigrants", self.address)
            for ind, target in leaving:
                for peer in self.peers:
                    self.endpoint.post(peer, Envelope(DEACTIVATE, self.address, identity=ind.identity))
                self.ledger.deactivate(ind.identity)
                self._log("emigrated", ind.identity, ind.loss, target)
            return posts
        for target in self.targets:
            size = self.layout.island_sizes[target]
            chosen = self._pick_emigrants(active, self.config.n_migrants, lambda i: i.origin_island != target)
            for ind in chosen:
                coord = coordinator_rank(self.config.seed, ind.identity, target, size)
                for dest in self.layout.island(target):
                    self.endpoint.post(
                        dest,
                        Envelope(EMIGRANT, self.address, individual=ind, mode=POLLINATION, coordinator=coord),
                    )
                    posts += 1
                self._log("emigrated", ind.identity, ind.loss, target)
        return posts

    # -- 4: immigration ------------------------------------------------------

    def _owner_of(self, ind: Individual) -> int:
        if ind.origin_island == self.island:
            return ind.origin_rank
        return self._owner.get(ind.identity, -1)

    def receive_immigrants(self) -> int:
        envs = self.endpoint.poll(EMIGRANT)
        batch: List[Individual] = []
        for env in envs:
            ind = env.individual
            ind.active = True
            ind.resident_island = self.island
            if env.mode == MIGRATION:
                self._record(ind, "immigrated", env.sender.global_id)
                continue
            # pollinator copies of known or native individuals change nothing
            if ind.origin_island == self.island or ind.identity in self.ledger:
                continue
            self._owner[ind.identity] = env.coordinator
            self._record(ind, "immigrated", env.sender.global_id)
            if env.coordinator == self.rank:
                batch.append(ind)
        if batch:
            fresh = {i.identity for i in batch}
            for pollinator in batch:
                self._replace_for(pollinator, fresh)
        return len(envs)

    def _replace_for(self, pollinator: Individual, fresh: set) -> None:
        owned = [i for i in self.ledger.active_view() if self._owner_of(i) == self.rank]
        eligible = [i for i in owned if i.identity not in fresh]
        if not eligible:
            eligible = [i for i in owned if i is not pollinator]
        if not eligible:
            log.warning("%r: no victim available for %s", self.address, pollinator.identity)
            return
        if self.config.immigration_policy == "worst":
            (victim,) = select_worst(eligible, 1)
        else:
            (victim,) = select_uniform(eligible, 1, self.rng[VICTIM])
        for peer in self.peers:
            self.endpoint.post(peer, Envelope(DEACTIVATE, self.address, identity=victim.identity))
        self.ledger.deactivate(victim.identity)
        self._log("deactivated", victim.identity, victim.loss, self.address.global_id)

    # -- 5/6: deactivation ---------------------------------------------------

    def process_deactivation_notices(self) -> int:
        envs = self.endpoint.poll(DEACTIVATE)
        for env in envs:
            ident = env.identity
            outcome = self.ledger.deactivate(ident)
            known = self.ledger.get(ident)
            loss = known.loss if known is not None else None
            self._log("deactivated" if outcome == DEACTIVATED else "deferred", ident, loss, env.sender.global_id)
        return len(envs)

    def flush_cache(self) -> int:
        pending = list(self.ledger.replaced_cache)
        n = self.ledger.flush_cache()
        if n:
            for ident in pending:
                if ident not in self.ledger.replaced_cache:
                    self._log("resolved", ident, self.ledger.get(ident).loss, -1)
        return n

    # -- loop ----------------------------------------------------------------

    def finish_step(self) -> None:
        """Steps 2 to 7 of an iteration, after the bred child was published."""
        self.drain_intra_island()
        self.maybe_emigrate()
        self.receive_immigrants()
        self.process_deactivation_notices()
        self.flush_cache()
        self.generation += 1

    def worker_step(self) -> None:
        self.breed_and_evaluate()
        self.finish_step()

    @property
    def done(self) -> bool:
        return self.generation >= self.config.generations

    def settle(self) -> int:
        """Drain every channel until a pass changes nothing."""
        total = 0
        while True:
            n = (
                self.drain_intra_island()
                + self.receive_immigrants()
                + self.process_deactivation_notices()
                + self.flush_cache()
            )
            if n == 0:
                return total
            total += n

    def check_quiescent(self) -> None:
        if self.ledger.replaced_cache:
            raise ResidualCache(self.address, self.ledger.replaced_cache)

    def finalize(self) -> PopulationLedger:
        # the second round only sees deactivations posted during the first
        for _ in range(2):
            self.endpoint.barrier()
            self.settle()
        self.check_quiescent()
        return self.ledger

    def run(self) -> PopulationLedger:
        while not self.done:
            self.worker_step()
        return self.finalize()


# -- results ------------------------------------------------------------------


@dataclass
class RunResult:
    space: SearchSpace
    layout: Layout
    ledgers: Dict[int, PopulationLedger]
    events: Dict[int, List[tuple]]
    makespan: float
    config: Optional[IslandConfig] = None
    extra: dict = field(default_factory=dict)

    def unique(self) -> Dict[Identity, Individual]:
        out: Dict[Identity, Individual] = {}
        for gid in sorted(self.ledgers):
            for ind in self.ledgers[gid].records:
                out.setdefault(ind.identity, ind)
        return out

    @property
    def evaluations(self) -> int:
        return len(self.unique())

    def top_n(self, n: int = 1) -> List[Individual]:
        """``n`` distinct individuals with the smallest losses, ascending."""
        inds = sorted(self.unique().values(), key=lambda i: (i.loss, i.identity))
        return inds[:n]

    @property
    def best(self) -> Individual:
        return self.top_n(1)[0]

    def ledger_csv(self, global_id: int) -> str:
        return self.ledgers[global_id].dump_csv(self.space)

    def island_ledgers(self, island: int) -> List[PopulationLedger]:
        return [self.ledgers[a.global_id] for a in self.layout.island(island)]


# -- drivers ------------------------------------------------------------------

EvalDelay = Callable[[WorkerAddress, int], float]


def _make_workers(hub, space, objective, island_config, propagator, propagator_config, worker_cls):
    return [
        worker_cls(hub.endpoint(a.global_id), space, objective, island_config, propagator, propagator_config)
        for a in hub.layout.addresses
    ]


def simulate(workers: Sequence[Worker], hub: InProcessHub, eval_delay: Optional[EvalDelay] = None) -> float:
    """Run ``workers`` on the hub's virtual clock; returns the makespan.

    Worker ``w`` spends ``eval_delay(w, generation)`` virtual time units on
    each evaluation; message handling takes no time. Events at equal times
    are processed in ``global_id`` order, which makes runs reproducible.
    """
    if eval_delay is None:
        eval_delay = lambda address, generation: 1.0  # noqa: E731
    heap: List[Tuple[float, int]] = []
    in_eval: Dict[int, Individual] = {}

    def begin(w: Worker) -> None:
        in_eval[w.address.global_id] = w.evaluate(w.breed())
        d = float(eval_delay(w.address, w.generation))
        if d < 0:
            raise ValueError(f"negative evaluation delay {d}")
        heapq.heappush(heap, (hub.now() + d, w.address.global_id))

    for w in workers:
        if not w.done:
            begin(w)
    while heap:
        t, gid = heapq.heappop(heap)
        hub.advance_to(t)
        w = workers[gid]
        w.publish(in_eval.pop(gid))
        w.finish_step()
        if not w.done:
            begin(w)
    for _ in range(2):
        for w in workers:
            w.endpoint.barrier()
        for w in workers:
            w.settle()
    for w in workers:
        w.check_quiescent()
    return hub.now()


def run(
    space: SearchSpace,
    objective: Callable,
    propagator_config: Optional[PropagatorConfig] = None,
    island_config: Optional[IslandConfig] = None,
    *,
    hub: Optional[InProcessHub] = None,
    eval_delay: Optional[EvalDelay] = None,
    propagator: Optional[Propagator] = None,
    worker_cls=Worker,
) -> RunResult:
    """Optimize ``objective`` over ``space`` with all workers in this process.

    Without a hub, a virtual-clock hub with zero latency is used, which
    makes the result a pure function of the inputs. A hub built with
    ``virtual=False`` runs one thread per worker instead.
    """
    island_config = (island_config or IslandConfig()).validate()
    layout = Layout(island_config.sizes)
    if hub is None:
        hub = InProcessHub(layout, space)
    elif hub.layout != layout:
        raise ConfigError("island_sizes", f"hub layout {hub.layout} does not match {island_config.sizes}")
    workers = _make_workers(hub, space, objective, island_config, propagator, propagator_config, worker_cls)
    if hub.virtual:
        makespan = simulate(workers, hub, eval_delay)
    else:
        makespan = _run_threads(workers, hub)
    return RunResult(
        space,
        layout,
        {w.address.global_id: w.ledger for w in workers},
        {w.address.global_id: w.events for w in workers},
        makespan,
        island_config,
    )


def _run_threads(workers: Sequence[Worker], hub: InProcessHub) -> float:
    errors: List[BaseException] = []

    def target(w: Worker) -> None:
        try:
            w.run()
        except BaseException as exc:
            errors.append(exc)
            hub._barrier.abort()

    threads = [threading.Thread(target=target, args=(w,), name=repr(w.address)) for w in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return hub.now()


def run_worker(
    endpoint: Endpoint,
    space: SearchSpace,
    objective: Callable,
    propagator_config: Optional[PropagatorConfig] = None,
    island_config: Optional[IslandConfig] = None,
    propagator: Optional[Propagator] = None,
) -> Worker:
    """Run the single worker behind ``endpoint`` to completion (multi-process mode)."""
    island_config = (island_config or IslandConfig()).validate()
    if Layout(island_config.sizes) != endpoint.layout:
        raise ConfigError("island_sizes", f"rank file layout {endpoint.layout} does not match {island_config.sizes}")
    w = Worker(endpoint, space, objective, island_config, propagator, propagator_config)
    w.run()
    return w
