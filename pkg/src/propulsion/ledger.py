"""Per-worker population ledger with deferred deactivation."""

from __future__ import annotations

import csv
import io
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .space import Identity, Individual, SearchSpace

DEACTIVATED = "deactivated"
DEFERRED = "deferred"


class DuplicateIdentity(RuntimeError):
    def __init__(self, identity: Identity):
        self.identity = identity
        super().__init__(f"identity {identity} already recorded")


class Population(list):
    """List of individuals that also carries their losses as an array.

    Selection operators use ``losses`` when present instead of gathering
    the values one attribute at a time.
    """

    losses: np.ndarray


class PopulationLedger:
    """Append-only record of every individual a worker knows about.

    Records are never removed; deactivation only flips ``active``. A
    deactivation for an identity that has not arrived yet is parked in
    ``replaced_cache`` and applied on arrival or by :meth:`flush_cache`.

    The ledger is owned by one worker and is not thread-safe.
    """

    def __init__(self, owner: Tuple[int, int] = (0, 0)):
        self.owner = owner
        self.records: List[Individual] = []
        self.replaced_cache: List[Identity] = []
        self._index: Dict[Identity, Individual] = {}
        # insertion-ordered, so iteration order equals append order
        self._active: Dict[Identity, Individual] = {}
        self._pos: Dict[Identity, int] = {}
        self._loss = np.empty(64)
        self._mask = np.zeros(64, dtype=bool)

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, identity: Identity) -> bool:
        return identity in self._index

    def get(self, identity: Identity) -> Optional[Individual]:
        return self._index.get(identity)

    @property
    def n_active(self) -> int:
        return len(self._active)

    def record(self, individual: Individual) -> Individual:
        """Append an evaluated individual.

        If its identity is waiting in the cache it is stored inactive and
        the cache entry is consumed.
        """
        if individual.loss is None:
            raise ValueError(f"{individual!r} has not been evaluated")
        ident = individual.identity
        if ident in self._index:
            raise DuplicateIdentity(ident)
        if ident in self.replaced_cache:
            self.replaced_cache.remove(ident)
            individual.active = False
        n = len(self.records)
        if n == len(self._loss):
            self._loss = np.concatenate([self._loss, np.empty(n)])
            self._mask = np.concatenate([self._mask, np.zeros(n, dtype=bool)])
        self._loss[n] = individual.loss
        self._mask[n] = individual.active
        self.records.append(individual)
        self._index[ident] = individual
        self._pos[ident] = n
        if individual.active:
            self._active[ident] = individual
        return individual

    def deactivate(self, identity: Identity) -> str:
        """Condemn ``identity``; returns ``"deactivated"`` or ``"deferred"``."""
        ind = self._index.get(identity)
        if ind is None:
            if identity not in self.replaced_cache:
                self.replaced_cache.append(identity)
            return DEFERRED
        ind.active = False
        self._active.pop(identity, None)
        self._mask[self._pos[identity]] = False
        return DEACTIVATED

    def active_view(self) -> Population:
        """Active records in append order."""
        pop = Population(self._active.values())
        n = len(self.records)
        pop.losses = self._loss[:n][self._mask[:n]]
        return pop

    def flush_cache(self) -> int:
        """Retry every cached deactivation; returns how many resolved."""
        if not self.replaced_cache:
            return 0
        pending, self.replaced_cache = self.replaced_cache, []
        resolved = 0
        for ident in pending:
            if self.deactivate(ident) == DEACTIVATED:
                resolved += 1
        return resolved

    def best(self, n: int = 1) -> List[Individual]:
        """``n`` lowest-loss records, active or not."""
        return sorted(self.records, key=lambda i: i.loss)[:n]

    def state(self) -> Tuple[frozenset, Tuple[Identity, ...]]:
        """(active identities, cache) snapshot, for comparisons."""
        return frozenset(self._active), tuple(self.replaced_cache)

    def signature(self) -> frozenset:
        """Set of (identity, active, loss) triples."""
        return frozenset((i.identity, i.active, i.loss) for i in self.records)

    # -- CSV dump -----------------------------------------------------------

    def dump_csv(self, space: SearchSpace, stream: Optional[io.TextIOBase] = None) -> str:
        """Write one row per record; returns the text if no stream is given."""
        out = stream if stream is not None else io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(ledger_header(space))
        for ind in self.records:
            writer.writerow(ledger_row(ind))
        return out.getvalue() if stream is None else ""


def ledger_header(space: SearchSpace) -> List[str]:
    return ["origin_island", "origin_rank", "generation", "active", "loss", *space.names]


def ledger_row(ind: Individual) -> list:
    return [
        ind.origin_island,
        ind.origin_rank,
        ind.generation,
        int(ind.active),
        repr(float(ind.loss)),
        *(repr(g) if isinstance(g, float) else g for g in ind.genes),
    ]


def read_ledger_csv(lines: Iterable[str], space: Optional[SearchSpace] = None) -> List[Individual]:
    """Parse a ledger dump back into individuals.

    Without ``space`` all genes are read as floats.
    """
    reader = csv.reader(lines)
    header = next(reader)
    n_genes = len(header) - 5
    kinds = [g.kind for g in space.genes] if space is not None else ["continuous"] * n_genes
    out = []
    for row in reader:
        if not row:
            continue
        genes = []
        for kind, raw in zip(kinds, row[5:]):
            if kind == "continuous":
                genes.append(float(raw))
            elif kind == "integer":
                genes.append(int(raw))
            else:
                genes.append(raw)
        out.append(
            Individual(
                tuple(genes),
                float(row[4]),
                int(row[0]),
                int(row[1]),
                int(row[2]),
                bool(int(row[3])),
            )
        )
    return out
