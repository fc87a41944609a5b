"""Command-line interface.

::

    propulsion run CONFIG [--seed N] [--backend inprocess|mesh] [--rank-file PATH] [--out DIR]
    propulsion report DIR
    propulsion bench SUITE [--out DIR]

Exit status is 0 on success, 1 for configuration or input errors and 2
for failures during a run.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .benchmarks import BENCHMARKS
from .config import RunConfig, tomllib
from .engine import ConfigError, run, run_worker
from .report import (
    ReportError,
    merge_events,
    read_events,
    read_ledgers,
    series,
    series_csv,
    stats,
    summary_text,
    time_to_best,
    unique_individuals,
    format_table,
    write_run,
    write_worker_files,
)
from .transport import InProcessHub, Layout, MeshEndpoint, RankTable, TransportError, rank_from_env

log = logging.getLogger("propulsion")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
BENCH_FIELDS = ("benchmark", "seed", "best_loss", "best_loss_std", "time_to_best", "time_to_best_std", "status")


# -- run ----------------------------------------------------------------------


def load_run_config(path: str, seed=None, backend=None, rank_file=None, out=None) -> RunConfig:
    cfg = RunConfig.read(path)
    if seed is not None:
        cfg.island.seed = seed
    if backend is not None:
        cfg.backend = backend
    if rank_file is not None:
        cfg.rank_file = rank_file
    if out is not None:
        cfg.out = out
    return cfg


def _inprocess(cfg: RunConfig, space, objective, pcfg, icfg):
    layout = Layout(icfg.sizes)
    if cfg.threads:
        hub = InProcessHub(layout, space, virtual=False)
        return run(space, objective, pcfg, icfg, hub=hub)
    latency = cfg.latency
    hub = InProcessHub(layout, space, latency=(lambda s, d, e: latency) if latency else None)
    delay = float(cfg.eval_delay)
    return run(space, objective, pcfg, icfg, hub=hub, eval_delay=lambda a, g: delay)


def execute(cfg: RunConfig, stdout=None) -> int:
    """Run ``cfg`` and write its output directory."""
    stdout = stdout or sys.stdout
    space, objective, pcfg, icfg = cfg.build()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.backend == "inprocess":
        cfg.write(out / "config.toml")
        result = _inprocess(cfg, space, objective, pcfg, icfg)
        write_run(out, result)
        text = summary_text(result.unique(), space, result.makespan, cfg.report_top_n)
    else:
        text = _mesh(cfg, space, objective, pcfg, icfg, out)
    if text is not None:
        (out / "summary.txt").write_text(text)
        stdout.write(text)
    return EXIT_OK


def _mesh(cfg: RunConfig, space, objective, pcfg, icfg, out: Path) -> Optional[str]:
    try:
        table = RankTable.read(cfg.rank_file)
    except (OSError, ValueError) as exc:
        raise ConfigError("rank_file", str(exc)) from None
    gid = rank_from_env()
    if not 0 <= gid < len(table):
        raise ConfigError("rank_file", f"PROPULSION_RANK={gid} is not in the rank file")
    if gid == 0:
        cfg.write(out / "config.toml")
    with MeshEndpoint(table, gid, space).start() as endpoint:
        worker = run_worker(endpoint, space, objective, pcfg, icfg)
        makespan = endpoint.now()
        write_worker_files(out, gid, space, worker.ledger, worker.events)
        # every worker's files exist once this returns
        endpoint.barrier()
        if gid != 0:
            return None
        ledgers = read_ledgers(out, space)
        per_worker = read_events(out)
        times = [e.time for events in per_worker.values() for e in events]
        return summary_text(unique_individuals(ledgers), space, max(times + [makespan]), cfg.report_top_n)


# -- report -------------------------------------------------------------------


def make_report(directory: Path, stdout=None) -> List[dict]:
    stdout = stdout or sys.stdout
    directory = Path(directory)
    if not directory.is_dir():
        raise ReportError(f"{directory} is not a directory")
    cfg_path = directory / "config.toml"
    cfg = RunConfig.read(cfg_path) if cfg_path.exists() else None
    space = None
    optimum = None
    migration = False
    islands = None
    if cfg is not None:
        space = cfg.resolve_space()
        optimum = cfg.optimum_point()
        migration = cfg.island.exchange_mode == "migration"
        islands = {a.global_id: a.island for a in Layout(cfg.island.sizes).addresses}
    ledgers = read_ledgers(directory, space)
    events = read_events(directory)
    if set(ledgers) != set(events):
        raise ReportError("ledger and event files cover different workers")
    genes = {i: ind.genes for i, ind in unique_individuals(ledgers).items()}
    rows = series(merge_events(events), genes, optimum, islands, migration)
    (directory / "series.csv").write_text(series_csv(rows))
    last = rows[-1] if rows else None
    table = [
        ("workers", str(len(events))),
        ("events", str(len(rows))),
        ("evaluations", str(len(genes))),
    ]
    if last is not None:
        table += [
            ("final time", repr(last["time"])),
            ("best so far", repr(last["best_so_far"])),
            ("median active", repr(last["median_active"])),
            ("distance", "" if math.isnan(last["distance"]) else repr(last["distance"])),
        ]
    stdout.write(format_table(table))
    return rows


# -- bench --------------------------------------------------------------------


def _cells(suite: Dict[str, Any]) -> List[Dict[str, Any]]:
    suite = dict(suite)
    cells = suite.pop("cell", None)
    if not cells:
        raise ConfigError("cell", "suite needs at least one [[cell]] table")
    out = []
    for i, cell in enumerate(cells):
        merged = {**suite, **cell}
        if "benchmark" not in merged:
            raise ConfigError(f"cell[{i}].benchmark", "missing")
        if merged["benchmark"] not in BENCHMARKS:
            raise ConfigError(f"cell[{i}].benchmark", f"unknown benchmark {merged['benchmark']!r}")
        seeds = merged.pop("seeds", None)
        reps = merged.pop("repetitions", None)
        if seeds is None:
            if reps is None:
                raise ConfigError(f"cell[{i}].seeds", "give seeds or repetitions")
            seeds = list(range(int(reps)))
        elif reps is not None and int(reps) != len(seeds):
            raise ConfigError(f"cell[{i}].repetitions", f"{reps} repetitions but {len(seeds)} seeds")
        if "budget" in merged:
            merged["generations"] = merged.pop("budget")
        merged["objective"] = merged.pop("benchmark")
        for key in ("out", "backend", "rank_file"):
            merged.pop(key, None)
        # parse once so configuration errors surface before anything runs
        RunConfig.from_dict(merged).build()
        out.append({"config": merged, "seeds": [int(s) for s in seeds]})
    return out


def bench_rows(suite: Dict[str, Any]) -> List[Dict[str, Any]]:
    rows = []
    for cell in _cells(suite):
        name = cell["config"]["objective"]
        good = []
        for seed in cell["seeds"]:
            row = {"benchmark": name, "seed": str(seed), "best_loss_std": "", "time_to_best_std": ""}
            try:
                cfg = RunConfig.from_dict(cell["config"])
                cfg.island.seed = seed
                space, objective, pcfg, icfg = cfg.build()
                result = _inprocess(cfg, space, objective, pcfg, icfg)
                row.update(best_loss=result.best.loss, time_to_best=time_to_best(result), status="ok")
                good.append(row)
            except Exception as exc:  # a failed cell must not stop the suite
                log.error("bench %s seed %s failed: %s", name, seed, exc)
                row.update(best_loss="", time_to_best="", status=f"error: {exc}")
            rows.append(row)
        agg = {"benchmark": name, "seed": "mean", "status": "ok" if len(good) == len(cell["seeds"]) else "partial"}
        if good:
            agg["best_loss"], agg["best_loss_std"] = stats([r["best_loss"] for r in good])
            agg["time_to_best"], agg["time_to_best_std"] = stats([r["time_to_best"] for r in good])
        else:
            agg.update(best_loss="", best_loss_std="", time_to_best="", time_to_best_std="", status="failed")
        rows.append(agg)
    return rows


def bench_csv(rows: Sequence[Dict[str, Any]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(BENCH_FIELDS)
    for r in rows:
        writer.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in BENCH_FIELDS])
    return out.getvalue()


def run_bench(path: str, out: Optional[str], stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        suite = tomllib.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from None
    out_dir = Path(out or suite.pop("out", "propulsion-bench"))
    suite.pop("out", None)
    rows = bench_rows(suite)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = bench_csv(rows)
    (out_dir / "bench.csv").write_text(text)
    stdout.write(text)
    failed = any(r["status"].startswith("error") for r in rows)
    return EXIT_RUNTIME if failed else EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="propulsion", description="Asynchronous island-model genetic optimizer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one optimization from a config file")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--backend", choices=("inprocess", "mesh"))
    r.add_argument("--rank-file", help="rank file for the mesh backend")
    r.add_argument("--out", help="output directory")

    rep = sub.add_parser("report", help="derive plot-ready series from a run directory")
    rep.add_argument("dir")

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite")
    b.add_argument("--out", help="output directory")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = load_run_config(args.config, args.seed, args.backend, args.rank_file, args.out)
            return execute(cfg)
        if args.command == "report":
            make_report(Path(args.dir))
            return EXIT_OK
        return run_bench(args.suite, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, RuntimeError, OSError, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
