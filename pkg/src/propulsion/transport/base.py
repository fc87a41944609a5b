"""Addresses, envelopes, the binary wire format, and the endpoint interface."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from ..space import CATEGORICAL, CONTINUOUS, Identity, Individual, SearchSpace

INTRA_ISLAND = 0
EMIGRANT = 1
DEACTIVATE = 2
CHANNELS = (INTRA_ISLAND, EMIGRANT, DEACTIVATE)
CHANNEL_NAMES = {INTRA_ISLAND: "INTRA_ISLAND", EMIGRANT: "EMIGRANT", DEACTIVATE: "DEACTIVATE"}

# control frames, mesh backend only
HELLO = 250
BARRIER = 251

NO_MODE = 0
MIGRATION = 1
POLLINATION = 2


class TransportError(RuntimeError):
    pass


class UnknownDestination(TransportError):
    pass


class TransportClosed(TransportError):
    pass


class TimeoutExceeded(TransportError):
    pass


@dataclass(frozen=True, order=True)
class WorkerAddress:
    global_id: int
    island: int
    rank: int

    def __repr__(self) -> str:
        return f"W{self.global_id}(i{self.island}r{self.rank})"


class Layout:
    """Workers of a run, flattened island by island.

    ``global_id`` enumerates island 0's ranks first, then island 1's, etc.
    """

    def __init__(self, island_sizes: Sequence[int]):
        sizes = [int(s) for s in island_sizes]
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError(f"island sizes must be positive, got {list(island_sizes)}")
        self.island_sizes = tuple(sizes)
        self.addresses: List[WorkerAddress] = []
        self._by_pair: Dict[Tuple[int, int], WorkerAddress] = {}
        for island, size in enumerate(sizes):
            for rank in range(size):
                a = WorkerAddress(len(self.addresses), island, rank)
                self.addresses.append(a)
                self._by_pair[(island, rank)] = a

    @property
    def n_islands(self) -> int:
        return len(self.island_sizes)

    @property
    def n_workers(self) -> int:
        return len(self.addresses)

    def __getitem__(self, global_id: int) -> WorkerAddress:
        return self.addresses[global_id]

    def __contains__(self, address: WorkerAddress) -> bool:
        return 0 <= address.global_id < len(self.addresses) and self.addresses[address.global_id] == address

    def at(self, island: int, rank: int) -> WorkerAddress:
        return self._by_pair[(island, rank)]

    def island(self, island: int) -> List[WorkerAddress]:
        return [self._by_pair[(island, r)] for r in range(self.island_sizes[island])]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Layout) and self.island_sizes == other.island_sizes

    def __repr__(self) -> str:
        return f"Layout({list(self.island_sizes)})"


@dataclass
class Envelope:
    """One transport message.

    ``individual`` travels on INTRA_ISLAND and EMIGRANT; ``identity`` names
    the condemned individual on DEACTIVATE. EMIGRANT envelopes carry the
    exchange ``mode`` and, for pollination, the ``coordinator`` rank on the
    receiving island.
    """

    channel: int
    sender: WorkerAddress
    individual: Optional[Individual] = None
    identity: Optional[Identity] = None
    mode: int = NO_MODE
    coordinator: int = -1

    @property
    def target(self) -> Identity:
        return self.identity if self.individual is None else self.individual.identity


_HEAD = struct.Struct("<BIIIiiqBdBiiI")


def encode(env: Envelope, space: Optional[SearchSpace] = None) -> bytes:
    """Fixed-layout little-endian encoding; floats travel as raw IEEE-754 bits."""
    ind = env.individual
    if ind is not None:
        ident = ind.identity
        active = ind.active
        loss = math.nan if ind.loss is None else ind.loss
        resident = ind.resident_island
        genes = ind.genes
    else:
        ident = env.identity if env.identity is not None else (-1, -1, -1)
        active, loss, resident, genes = False, math.nan, -1, ()
    s = env.sender
    head = _HEAD.pack(
        env.channel, s.island, s.rank, s.global_id, ident[0], ident[1], ident[2],
        int(active), loss, env.mode, env.coordinator, resident, len(genes),
    )
    return head + _pack_genes(genes, space)


def decode(data: bytes, space: Optional[SearchSpace] = None) -> Envelope:
    (channel, s_island, s_rank, s_gid, i_island, i_rank, i_gen,
     active, loss, mode, coordinator, resident, n) = _HEAD.unpack_from(data, 0)
    sender = WorkerAddress(s_gid, s_island, s_rank)
    if channel == DEACTIVATE or channel >= HELLO:
        return Envelope(channel, sender, identity=(i_island, i_rank, i_gen), mode=mode, coordinator=coordinator)
    genes = _unpack_genes(data, _HEAD.size, n, space)
    ind = Individual(
        genes, None if math.isnan(loss) else loss, i_island, i_rank, i_gen, bool(active), resident
    )
    return Envelope(channel, sender, individual=ind, mode=mode, coordinator=coordinator)


def _gene_codes(n: int, space: Optional[SearchSpace]) -> str:
    if space is None or space.all_continuous:
        return "d" * n
    if len(space) != n:
        raise ValueError(f"expected {len(space)} genes, got {n}")
    return "".join("d" if g.kind == CONTINUOUS else "q" for g in space.genes)


def _pack_genes(genes, space):
    if not genes:
        return b""
    codes = _gene_codes(len(genes), space)
    if space is not None and not space.all_continuous:
        genes = [
            g.categories.index(v) if g.kind == CATEGORICAL else v for g, v in zip(space.genes, genes)
        ]
    return struct.pack("<" + codes, *genes)


def _unpack_genes(data, offset, n, space):
    if n == 0:
        return ()
    codes = _gene_codes(n, space)
    vals = struct.unpack_from("<" + codes, data, offset)
    if space is not None and not space.all_continuous:
        vals = tuple(
            g.categories[v] if g.kind == CATEGORICAL else v for g, v in zip(space.genes, vals)
        )
    return tuple(vals)


class Endpoint:
    """One worker's view of the transport.

    ``post`` is callable at any time by the owner and never waits for the
    receiver. ``poll`` never blocks. Delivery is reliable, exactly once,
    and FIFO per (sender, destination, channel).
    """

    address: WorkerAddress
    layout: Layout

    def post(self, dest: WorkerAddress, envelope: Envelope) -> None:
        raise NotImplementedError

    def poll(self, channel: int) -> List[Envelope]:
        raise NotImplementedError

    def barrier(self) -> None:
        raise NotImplementedError

    def now(self) -> float:
        raise NotImplementedError

    def close(self) -> None:
        pass
