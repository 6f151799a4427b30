"""Command line entry point: ``superscale <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import experiments as ex
from .config import ConfigError, Scenario, load_scenario
from .model import DivergenceError

COMMANDS = ("fluid", "heuristic", "chunk-eta", "simulate", "simulate-chunks", "netload", "feasibility", "sweep")
NEEDS_CONFIG = {"fluid", "simulate", "simulate-chunks", "netload", "feasibility", "sweep"}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="superscale", description="Spatial peer-to-peer latency models and simulators.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario TOML file")
    common.add_argument("--out", type=Path, help="directory for CSV output (default: print to stdout)")
    common.add_argument("--seed", type=int, help="first seed (overrides run.seed_base)")
    common.add_argument("--replications", type=int, help="independent runs per point")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    sub.add_parser("fluid", parents=[common], help="fluid densities and latencies")
    p = sub.add_parser("heuristic", parents=[common], help="latency multiplier over n_f")
    p.add_argument("--n-f", type=_floats, help="comma separated n_f values (default: config grid)")
    p = sub.add_parser("chunk-eta", parents=[common], help="chunk efficiency fixed point and bound")
    p.add_argument("--K", type=_ints, help="comma separated chunk counts (default: config grid)")
    p.add_argument("--n-f", type=float, default=40.0, help="neighbors for the one-to-one bound")
    p.add_argument("--target", type=float, default=0.95, help="efficiency target for the K threshold")
    sub.add_parser("simulate", parents=[common], help="event-driven (or fixed-step) simulation")
    sub.add_parser("simulate-chunks", parents=[common], help="chunk-level simulation")
    p = sub.add_parser("netload", parents=[common], help="traffic flux against network capacity")
    p.add_argument("--analytic-only", action="store_true", help="skip the simulated flux")
    sub.add_parser("feasibility", parents=[common], help="check the four scaling conditions")
    p = sub.add_parser("sweep", parents=[common], help="run a preset experiment")
    p.add_argument("--preset", required=True, choices=sorted(ex.PRESETS), help="experiment to run")
    return ap


def _scenario(args) -> Optional[Scenario]:
    if args.config is None:
        if args.command in NEEDS_CONFIG:
            raise ConfigError(f"'{args.command}' needs --config")
        sc = None
    else:
        sc = load_scenario(args.config)
    if sc is not None and (args.seed is not None or args.replications is not None):
        run = sc.run
        if args.seed is not None:
            run = replace(run, seed_base=args.seed)
        if args.replications is not None:
            if args.replications < 1:
                raise ConfigError("--replications must be >= 1")
            run = replace(run, replications=args.replications)
        sc = replace(sc, run=run)
    return sc


def _emit(name: str, columns, rows, out: Optional[Path]) -> None:
    if out is not None:
        path = ex.write_csv(out / f"{name}.csv", columns, rows)
        print(f"wrote {path}")
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([ex._fmt(row[c]) for c in columns])
    sys.stdout.write(buf.getvalue())


def dispatch(args) -> None:
    sc = _scenario(args)
    cmd = args.command
    jobs = max(1, args.jobs)
    if cmd == "fluid":
        _emit("fluid", ex.FLUID_COLUMNS, ex.fluid_rows(sc), args.out)
    elif cmd == "heuristic":
        grid = args.n_f or (sc.run.n_f_grid if sc else ex.RunSettings.n_f_grid)
        _emit("heuristic", ex.HEURISTIC_COLUMNS, ex.heuristic_rows(grid), args.out)
    elif cmd == "chunk-eta":
        grid = args.K or (sc.run.K_grid if sc else ex.RunSettings.K_grid)
        _emit("chunk_eta", ex.CHUNK_ETA_COLUMNS, ex.chunk_eta_rows(grid, args.n_f), args.out)
        k = ex.eta_threshold(args.target)
        msg = f"smallest K with many-to-one efficiency >= {args.target}: {k if k is not None else 'none up to 1024'}"
        print(msg, file=sys.stderr)
    elif cmd == "simulate":
        _emit("simulate", ex.SIM_CSV_COLUMNS, ex.simulate_rows(sc, jobs), args.out)
    elif cmd == "simulate-chunks":
        _emit("simulate_chunks", ex.CHUNK_CSV_COLUMNS, ex.simulate_chunk_rows(sc, jobs), args.out)
    elif cmd == "netload":
        rows = ex.netload_rows(sc, jobs, empirical=not args.analytic_only)
        _emit("netload", ex.NETLOAD_COLUMNS, rows, args.out)
    elif cmd == "feasibility":
        rep = ex.feasibility_report(sc)
        _emit("feasibility", ex.FEASIBILITY_COLUMNS, ex.feasibility_rows(rep), args.out)
    elif cmd == "sweep":
        fn, columns = ex.PRESETS[args.preset]
        _emit(args.preset.replace("-", "_"), columns, fn(sc, jobs), args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
