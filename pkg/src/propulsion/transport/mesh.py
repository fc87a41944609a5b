"""TCP full-mesh transport for one worker per process.

Every process listens on its own port and opens one outbound connection to
each peer, so every ordered pair of workers has a dedicated TCP stream and
per-pair FIFO comes for free. Frames are a 4-byte little-endian length
followed by an encoded envelope. A barrier sends a marker frame down every
outbound stream and waits for the markers of all peers; because a peer's
marker trails everything it posted earlier on the same stream, those frames
are already queued when the barrier returns.

Rank file: one line per worker, ``global_id island rank host port``;
blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import logging
import os
import socket
import struct
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

from ..space import SearchSpace
from .base import (
    BARRIER,
    CHANNELS,
    HELLO,
    Endpoint,
    Envelope,
    Layout,
    TimeoutExceeded,
    TransportClosed,
    TransportError,
    UnknownDestination,
    WorkerAddress,
    decode,
    encode,
)

log = logging.getLogger(__name__)

RANK_ENV = "PROPULSION_RANK"
_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class RankEntry:
    global_id: int
    island: int
    rank: int
    host: str
    port: int


class RankTable:
    """Parsed rank file; checks that it describes a contiguous island layout."""

    def __init__(self, entries: List[RankEntry]):
        entries = sorted(entries, key=lambda e: e.global_id)
        if [e.global_id for e in entries] != list(range(len(entries))):
            raise ValueError("rank file global ids must be 0..n-1 without gaps")
        sizes: Dict[int, int] = defaultdict(int)
        for e in entries:
            sizes[e.island] += 1
        if sorted(sizes) != list(range(len(sizes))):
            raise ValueError("rank file islands must be numbered 0..k-1")
        self.layout = Layout([sizes[i] for i in range(len(sizes))])
        for e in entries:
            a = self.layout[e.global_id]
            if (a.island, a.rank) != (e.island, e.rank):
                raise ValueError(
                    f"rank file entry {e.global_id} is (island {e.island}, rank {e.rank}); "
                    f"expected (island {a.island}, rank {a.rank})"
                )
        self.entries = entries

    @classmethod
    def parse(cls, text: str) -> "RankTable":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"rank file line {lineno}: expected 5 fields, got {len(parts)}")
            gid, island, rank, host, port = parts
            entries.append(RankEntry(int(gid), int(island), int(rank), host, int(port)))
        return cls(entries)

    @classmethod
    def read(cls, path: Union[str, Path]) -> "RankTable":
        return cls.parse(Path(path).read_text())

    def dumps(self) -> str:
        return "".join(f"{e.global_id} {e.island} {e.rank} {e.host} {e.port}\n" for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, global_id: int) -> RankEntry:
        return self.entries[global_id]


def rank_from_env() -> int:
    try:
        return int(os.environ[RANK_ENV])
    except KeyError:
        raise TransportError(f"{RANK_ENV} is not set") from None


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


class MeshEndpoint(Endpoint):
    """Endpoint of worker ``global_id`` in a TCP mesh described by ``table``."""

    def __init__(
        self,
        table: RankTable,
        global_id: int,
        space: Optional[SearchSpace] = None,
        *,
        connect_timeout: float = 30.0,
        barrier_timeout: Optional[float] = 60.0,
    ):
        self.table = table
        self.layout = table.layout
        self.address = self.layout[global_id]
        self.space = space
        self.connect_timeout = connect_timeout
        self.barrier_timeout = barrier_timeout
        self.closed = False
        self._t0 = time.monotonic()
        self._cond = threading.Condition()
        self._inbox: Dict[int, deque] = {c: deque() for c in CHANNELS}
        self._markers: Dict[int, int] = defaultdict(int)
        self._epoch = 0
        self._out: Dict[int, socket.socket] = {}
        self._inbound: Dict[int, socket.socket] = {}
        self._threads: List[threading.Thread] = []
        self._listener: Optional[socket.socket] = None
        self._error: Optional[BaseException] = None

    # -- bootstrap ------------------------------------------------------------

    def start(self) -> "MeshEndpoint":
        me = self.table[self.address.global_id]
        n_peers = len(self.table) - 1
        lst = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lst.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        lst.bind((me.host, me.port))
        lst.listen(max(n_peers, 1))
        self._listener = lst
        acceptor = threading.Thread(target=self._accept_loop, args=(n_peers,), daemon=True)
        acceptor.start()
        deadline = time.monotonic() + self.connect_timeout
        hello = encode(Envelope(HELLO, self.address))
        for entry in self.table.entries:
            if entry.global_id == self.address.global_id:
                continue
            sock = self._connect(entry, deadline)
            sock.sendall(_LEN.pack(len(hello)) + hello)
            self._out[entry.global_id] = sock
        acceptor.join(max(deadline - time.monotonic(), 0.0))
        if len(self._inbound) < n_peers:
            self.close()
            raise TimeoutExceeded(
                f"{self.address!r}: only {len(self._inbound)}/{n_peers} peers connected"
            )
        return self

    def _connect(self, entry: RankEntry, deadline: float) -> socket.socket:
        while True:
            try:
                sock = socket.create_connection((entry.host, entry.port), timeout=5.0)
                sock.settimeout(None)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return sock
            except OSError:
                if time.monotonic() > deadline:
                    raise TimeoutExceeded(f"cannot reach worker {entry.global_id} at {entry.host}:{entry.port}")
                time.sleep(0.05)

    def _accept_loop(self, n_peers: int) -> None:
        while len(self._inbound) < n_peers:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            head = _recv_exact(conn, _LEN.size)
            body = _recv_exact(conn, _LEN.unpack(head)[0]) if head else None
            if body is None:
                conn.close()
                continue
            peer = decode(body).sender.global_id
            self._inbound[peer] = conn
            t = threading.Thread(target=self._reader, args=(peer, conn), daemon=True)
            t.start()
            self._threads.append(t)

    def _reader(self, peer: int, conn: socket.socket) -> None:
        try:
            while True:
                head = _recv_exact(conn, _LEN.size)
                if head is None:
                    return
                body = _recv_exact(conn, _LEN.unpack(head)[0])
                if body is None:
                    return
                channel = body[0]
                with self._cond:
                    if channel == BARRIER:
                        self._markers[decode(body).identity[2]] += 1
                    else:
                        self._inbox[channel].append(body)
                    self._cond.notify_all()
        except OSError as exc:
            if not self.closed:
                log.warning("%r: connection from worker %d failed: %s", self.address, peer, exc)
                self._error = exc

    # -- endpoint API ---------------------------------------------------------

    def post(self, dest: WorkerAddress, envelope: Envelope) -> None:
        if self.closed:
            raise TransportClosed(f"{self.address!r} is closed")
        if dest not in self.layout:
            raise UnknownDestination(repr(dest))
        frame = encode(envelope, self.space)
        if dest.global_id == self.address.global_id:
            with self._cond:
                self._inbox[envelope.channel].append(frame)
            return
        self._out[dest.global_id].sendall(_LEN.pack(len(frame)) + frame)

    def poll(self, channel: int) -> List[Envelope]:
        with self._cond:
            q = self._inbox[channel]
            frames = list(q)
            q.clear()
        return [decode(f, self.space) for f in frames]

    def barrier(self) -> None:
        if self.closed:
            raise TransportClosed(f"{self.address!r} is closed")
        self._epoch += 1
        epoch = self._epoch
        marker = encode(Envelope(BARRIER, self.address, identity=(-1, -1, epoch)))
        frame = _LEN.pack(len(marker)) + marker
        for sock in self._out.values():
            sock.sendall(frame)
        need = len(self.table) - 1
        with self._cond:
            ok = self._cond.wait_for(lambda: self._markers[epoch] >= need, timeout=self.barrier_timeout)
            if not ok:
                raise TimeoutExceeded(
                    f"{self.address!r}: barrier {epoch} saw {self._markers[epoch]}/{need} peers"
                )

    def now(self) -> float:
        return time.monotonic() - self._t0

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        for sock in list(self._out.values()):
            try:
                sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            sock.close()
        if self._listener is not None:
            self._listener.close()
        for sock in list(self._inbound.values()):
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        for t in self._threads:
            t.join(timeout=1.0)

    def __enter__(self) -> "MeshEndpoint":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def free_ports(n: int, host: str = "127.0.0.1") -> List[int]:
    """Ask the OS for ``n`` currently unused TCP ports."""
    socks, ports = [], []
    for _ in range(n):
        s = socket.socket()
        s.bind((host, 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    for s in socks:
        s.close()
    return ports


def localhost_table(island_sizes, host: str = "127.0.0.1") -> RankTable:
    """Rank table for a mesh of local processes on fresh ports."""
    layout = Layout(island_sizes)
    ports = free_ports(layout.n_workers, host)
    return RankTable([RankEntry(a.global_id, a.island, a.rank, host, p) for a, p in zip(layout.addresses, ports)])
