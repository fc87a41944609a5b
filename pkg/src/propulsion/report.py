"""Run output files and the data series derived from them.

A run directory holds ``config.toml``, one ``ledger_w<gid>.csv`` and one
``events_w<gid>.csv`` per worker, and ``summary.txt``. Everything here is
a pure function of those files.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
import re
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .engine import EVENT_FIELDS, RunResult
from .ledger import read_ledger_csv
from .space import Identity, Individual, SearchSpace

SERIES_FIELDS = (
    "time", "worker", "kind", "island", "rank", "generation", "loss",
    "best_so_far", "median_active", "distance",
)
# event kinds that make an individual known to a worker
ARRIVALS = ("bred", "received", "immigrated")
REMOVALS = ("deactivated", "resolved")

_FILE_RE = re.compile(r"^(ledger|events)_w(\d+)\.csv$")


class ReportError(RuntimeError):
    """Run directory is missing files or holds unreadable ones."""


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


# -- writing ------------------------------------------------------------------


def events_csv(events: Iterable[tuple]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(EVENT_FIELDS)
    for row in events:
        writer.writerow([_fmt(v) for v in row])
    return out.getvalue()


def write_worker_files(directory: Path, global_id: int, space: SearchSpace, ledger, events) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"ledger_w{global_id}.csv").write_text(ledger.dump_csv(space))
    (directory / f"events_w{global_id}.csv").write_text(events_csv(events))


def write_run(directory: Path, result: RunResult) -> None:
    for gid in sorted(result.ledgers):
        write_worker_files(directory, gid, result.space, result.ledgers[gid], result.events[gid])


# -- reading ------------------------------------------------------------------


@dataclass
class Event:
    time: float
    worker: int
    kind: str
    island: int
    rank: int
    generation: int
    loss: float
    counterparty: int

    @property
    def identity(self) -> Identity:
        return (self.island, self.rank, self.generation)


def _worker_files(directory: Path, prefix: str) -> Dict[int, Path]:
    found = {}
    for path in Path(directory).iterdir():
        m = _FILE_RE.match(path.name)
        if m and m.group(1) == prefix:
            found[int(m.group(2))] = path
    return found


def read_events(directory: Path) -> Dict[int, List[Event]]:
    files = _worker_files(directory, "events")
    if not files:
        raise ReportError(f"no events_w*.csv files in {directory}")
    out = {}
    for gid, path in sorted(files.items()):
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != EVENT_FIELDS:
                raise ReportError(f"{path.name}: unexpected header {header}")
            rows = []
            for lineno, row in enumerate(reader, 2):
                try:
                    t, kind, isl, rank, gen, loss, cp = row
                    rows.append(Event(float(t), gid, kind, int(isl), int(rank), int(gen), float(loss), int(cp)))
                except ValueError:
                    raise ReportError(f"{path.name}:{lineno}: malformed row {row}") from None
            out[gid] = rows
    return out


def read_ledgers(directory: Path, space: Optional[SearchSpace] = None) -> Dict[int, List[Individual]]:
    files = _worker_files(directory, "ledger")
    if not files:
        raise ReportError(f"no ledger_w*.csv files in {directory}")
    out = {}
    for gid, path in sorted(files.items()):
        try:
            with path.open(newline="") as fh:
                out[gid] = read_ledger_csv(fh, space)
        except (ValueError, IndexError, StopIteration) as exc:
            raise ReportError(f"{path.name}: {exc}") from None
    return out


def merge_events(per_worker: Dict[int, List[Event]]) -> List[Event]:
    """All events ordered by (time, worker), keeping each worker's own order."""
    keyed = [
        (e.time, gid, i, e)
        for gid, events in per_worker.items()
        for i, e in enumerate(events)
    ]
    keyed.sort(key=lambda k: k[:3])
    return [k[3] for k in keyed]


# -- series -------------------------------------------------------------------


def distance(genes: Sequence, optimum: Sequence[float]) -> float:
    return math.sqrt(sum((float(g) - float(o)) ** 2 for g, o in zip(genes, optimum)))


def series(
    events: Sequence[Event],
    genes: Optional[Dict[Identity, Sequence]] = None,
    optimum: Optional[Sequence[float]] = None,
    layout_islands: Optional[Dict[int, int]] = None,
    migration: bool = False,
) -> List[dict]:
    """One row per event: running best loss, median active loss, incumbent distance.

    The active population is tracked per island: an arrival makes an
    identity active on the worker's island, a deactivation (or, for
    migration, an emigration) ends it there for good. ``layout_islands``
    maps worker ids to islands; without it the worker's own island is
    taken from its first ``bred`` event.
    """
    islands = dict(layout_islands or {})
    for e in events:
        if e.kind == "bred":
            islands.setdefault(e.worker, e.island)
    active: Dict[Tuple[int, Identity], float] = {}
    dead: set = set()
    losses: List[float] = []
    best = math.inf
    incumbent: Optional[Identity] = None
    rows = []
    for e in events:
        island = islands.get(e.worker, e.island)
        key = (island, e.identity)
        if e.kind in ARRIVALS:
            if e.loss < best:
                best, incumbent = e.loss, e.identity
            if key not in active and key not in dead:
                active[key] = e.loss
                bisect.insort(losses, e.loss)
        elif e.kind in REMOVALS or (migration and e.kind == "emigrated"):
            if key in active:
                loss = active.pop(key)
                del losses[bisect.bisect_left(losses, loss)]
            dead.add(key)
        if losses:
            n = len(losses)
            med = losses[n // 2] if n % 2 else 0.5 * (losses[n // 2 - 1] + losses[n // 2])
        else:
            med = math.nan
        dist = math.nan
        if optimum is not None and genes is not None and incumbent in genes:
            dist = distance(genes[incumbent], optimum)
        rows.append({
            "time": e.time, "worker": e.worker, "kind": e.kind, "island": e.island,
            "rank": e.rank, "generation": e.generation, "loss": e.loss,
            "best_so_far": best, "median_active": med, "distance": dist,
        })
    return rows


def series_csv(rows: Sequence[dict]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SERIES_FIELDS)
    for r in rows:
        writer.writerow([_fmt(r[k]) for k in SERIES_FIELDS])
    return out.getvalue()


# -- summaries ----------------------------------------------------------------


def unique_individuals(ledgers: Dict[int, List[Individual]]) -> Dict[Identity, Individual]:
    out: Dict[Identity, Individual] = {}
    for gid in sorted(ledgers):
        for ind in ledgers[gid]:
            out.setdefault(ind.identity, ind)
    return out


def format_table(rows: Sequence[Tuple[str, str]]) -> str:
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)


def summary_text(
    individuals: Dict[Identity, Individual],
    space: SearchSpace,
    makespan: float,
    top_n: int = 1,
) -> str:
    ranked = sorted(individuals.values(), key=lambda i: (i.loss, i.identity))
    rows = [("evaluations", str(len(individuals))), ("makespan", _fmt(float(makespan)))]
    if ranked:
        best = ranked[0]
        rows.append(("best loss", _fmt(best.loss)))
        rows.append(("best identity", "island {} rank {} generation {}".format(*best.identity)))
        rows.extend((f"  {name}", _fmt(g)) for name, g in zip(space.names, best.genes))
    for i, ind in enumerate(ranked[1:top_n], 2):
        rows.append((f"#{i} loss", f"{_fmt(ind.loss)}  (island {ind.identity[0]} rank {ind.identity[1]} "
                                   f"generation {ind.identity[2]})"))
    return format_table(rows)


def stats(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def time_to_best(result: RunResult) -> float:
    best = result.best
    gid = result.layout.at(best.origin_island, best.origin_rank).global_id
    for row in result.events[gid]:
        if row[1] == "bred" and (row[2], row[3], row[4]) == best.identity:
            return float(row[0])
    raise ValueError(f"no bred event for {best.identity}")
