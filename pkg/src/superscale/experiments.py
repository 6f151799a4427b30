"""Scenario orchestration: analytic tables, simulation sweeps and reports.

Every function returns a list of rows (dicts keyed by the CSV columns) so
the command line only has to write them.  Replications are independent and
may run in worker processes; results are always collected in submission
order, which keeps the output independent of ``jobs``.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .chunks import eta_many_to_one, eta_one_to_one_bound
from .config import ChunkParams, RunSettings, Scenario
from .fluid import (
    abandonment,
    access_check,
    degree_limited,
    fluid_solution,
    heuristic_m,
    heuristic_m_constant_rate,
    latency_prediction,
    seeder_latency,
    servers_latency,
)
from .model import KNearest, TcpLike, dimensionless
from .network import NETWORK_CSV_COLUMNS, capacity, empirical_flow, feasibility
from .sim.chunked import CHUNK_CSV_COLUMNS, chunk_row, run_chunked
from .sim.discrete import run_discrete
from .sim.spatial import SIM_CSV_COLUMNS, SimConfig, run, stats_row

__all__ = [
    "FeasibilityReport",
    "map_ordered",
    "write_csv",
    "fluid_rows",
    "heuristic_rows",
    "chunk_eta_rows",
    "eta_threshold",
    "simulate_rows",
    "simulate_chunk_rows",
    "netload_rows",
    "feasibility_report",
    "feasibility_rows",
    "fig2_rows",
    "eta_sweep_rows",
    "superscaling_rows",
    "PRESETS",
]

FLUID_COLUMNS = (
    "lambda", "file_size", "rate", "range", "gamma", "beta_f", "mu_f", "W_f", "n_f", "rho", "m_hat", "W_o",
    "W_servers", "server_regime", "abandonment_ratio", "W_seeders", "access_ok", "W_degree",
)
HEURISTIC_COLUMNS = ("n_f", "m_hat", "m_hat_constant", "inv_n_f")
CHUNK_ETA_COLUMNS = ("K", "eta_many", "eta_bound", "iterations")
FEASIBILITY_COLUMNS = ("condition", "value", "threshold", "ok")
FIG2_COLUMNS = ("n_f", "seed", "m_emp", "ci", "m_hat", "inv_n_f")
ETA_SWEEP_COLUMNS = ("K", "seed", "eta_emp", "eta_sigma", "eta_bound", "eta_many")
SUPERSCALING_COLUMNS = ("lambda", "seed", "n_f", "W_f", "W_emp", "ci", "W_ratio")
NETLOAD_COLUMNS = ("lambda", "seed", "n_f", "psi_analytic", "psi_emp", "psi_rel_err", "xi", "feasible", "headroom")


def map_ordered(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """``[fn(t) for t in tasks]``, optionally across ``jobs`` processes."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, t) for t in tasks]
        return [f.result() for f in futures]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    """Write rows with a header line; floats use their shortest exact repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


# ---------------------------------------------------------------------------
# analytic tables
# ---------------------------------------------------------------------------


def fluid_rows(sc: Scenario) -> list[dict]:
    p = sc.params
    ext = sc.extensions
    row = {c: None for c in FLUID_COLUMNS}
    row.update({"lambda": p.lam, "file_size": p.file_size, "rate": p.rate.name, "range": p.range})
    if isinstance(sc.policy, KNearest):
        dl = degree_limited(p, sc.policy.L)
        row.update(gamma=dl.gamma, beta_f=dl.beta, W_degree=dl.w, n_f=sc.policy.L)
        return [row]
    fs = fluid_solution(p)
    ds = dimensionless(p)
    lp = latency_prediction(p)
    row.update(gamma=fs.gamma, beta_f=fs.beta_f, mu_f=fs.mu_f, W_f=fs.w_f, n_f=ds.n_f, rho=ds.rho,
               m_hat=lp.m_hat, W_o=lp.w_o)
    if ext.server_rate_density > 0:
        sl = servers_latency(p, ext.server_rate_density)
        row.update(W_servers=sl.w, server_regime=sl.regime)
    if ext.abandonment_rate > 0:
        row["abandonment_ratio"] = abandonment(p, ext.abandonment_rate).abandonment_ratio
    if ext.seed_time > 0:
        row["W_seeders"] = seeder_latency(fs.w_f, ext.seed_time)
    if ext.upload_cap is not None:
        row["access_ok"] = access_check(p, ext.upload_cap).feasible
    return [row]


def heuristic_rows(n_f_values: Iterable[float]) -> list[dict]:
    return [
        {"n_f": n, "m_hat": heuristic_m(n), "m_hat_constant": heuristic_m_constant_rate(n), "inv_n_f": 1.0 / n}
        for n in n_f_values
    ]


def chunk_eta_rows(K_values: Iterable[int], n_f: float) -> list[dict]:
    rows = []
    for K in K_values:
        prof = eta_many_to_one(K)
        rows.append({"K": K, "eta_many": prof.eta_harmonic,
                     "eta_bound": eta_one_to_one_bound(K, n_f).eta_harmonic, "iterations": prof.iterations})
    return rows


def eta_threshold(target: float = 0.95, K_max: int = 1024) -> Optional[int]:
    """Smallest ``K`` whose many-to-one efficiency reaches ``target``."""
    if eta_many_to_one(K_max).eta_harmonic < target:
        return None
    lo, hi = 2, K_max
    if eta_many_to_one(lo).eta_harmonic >= target:
        return lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if eta_many_to_one(mid).eta_harmonic >= target:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# simulations
# ---------------------------------------------------------------------------


def sim_config(sc: Scenario, seed: int, params=None, n_snapshots: Optional[int] = None) -> SimConfig:
    s = sc.sim
    return SimConfig(
        params=sc.params if params is None else params,
        policy=sc.policy if params is None or isinstance(sc.policy, KNearest) else None,
        extensions=sc.extensions,
        seed=seed,
        horizon=s.horizon,
        warmup=s.warmup,
        initial_state=s.initial_state,
        min_departures=s.min_departures,
        n_batches=s.n_batches,
        n_snapshots=s.n_snapshots if n_snapshots is None else n_snapshots,
        backend=s.backend,
    )


def _simulate(cfg: SimConfig, method: str, dt: Optional[float]):
    return run_discrete(cfg, dt) if method == "fixed-step" else run(cfg)


def _sim_task(task):
    sc, seed, params = task
    st = _simulate(sim_config(sc, seed, params), sc.sim.method, sc.sim.dt)
    return stats_row(st)


def simulate_rows(sc: Scenario, jobs: int = 1) -> list[dict]:
    return map_ordered(_sim_task, [(sc, seed, None) for seed in sc.seeds()], jobs)


def _chunk_task(task):
    sc, seed, K = task
    ch = sc.chunks or ChunkParams()
    params = sc.params if sc.params.file_size_dist == "constant" else replace(sc.params, file_size_dist="constant")
    cfg = sim_config(sc, seed, params)
    st = run_chunked(cfg, K, ch.mode, seeder_fraction=ch.seeder_fraction,
                     steps_per_chunk=ch.steps_per_chunk, reassign=ch.reassign)
    return st


def simulate_chunk_rows(sc: Scenario, jobs: int = 1) -> list[dict]:
    K = (sc.chunks or ChunkParams()).K
    stats = map_ordered(_chunk_task, [(sc, seed, K) for seed in sc.seeds()], jobs)
    return [chunk_row(s) for s in stats]


def _flux_task(task):
    sc, seed, params = task
    n_snap = max(sc.sim.n_snapshots, 50)
    st = run(sim_config(sc, seed, params, n_snapshots=n_snap))
    rng = np.random.default_rng(seed)
    return empirical_flow(st.snapshots, params.rate, params.range, n_segments=20, rng=rng, eps=params.eps_r)


def netload_rows(sc: Scenario, jobs: int = 1, empirical: bool = True) -> list[dict]:
    """Flux and feasibility for each ``lambda`` factor, one row per seed."""
    if sc.network is None:
        raise ValueError("netload needs a [network] section")
    tasks = []
    for fac in sc.run.lambda_factors:
        p = replace(sc.params, lam=sc.params.lam * fac)
        for seed in sc.seeds():
            tasks.append((sc, seed, p))
    psi_emp = map_ordered(_flux_task, tasks, jobs) if empirical else [math.nan] * len(tasks)
    rows = []
    for (_, seed, p), pe in zip(tasks, psi_emp):
        rep = feasibility(p, sc.network)
        # n_f sits next to the mismatch since the fluid picture degrades at small n_f
        rows.append({"lambda": p.lam, "seed": seed, "n_f": fluid_solution(p).n_f, "psi_analytic": rep.psi,
                     "psi_emp": pe, "psi_rel_err": (pe - rep.psi) / rep.psi, "xi": rep.xi,
                     "feasible": rep.feasible, "headroom": rep.headroom})
    return rows


# ---------------------------------------------------------------------------
# feasibility report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeasibilityReport:
    """The four scaling conditions; ``None`` marks a condition not evaluated."""

    chunk_regime_ok: Optional[bool]
    peer_regime_ok: Optional[bool]
    network_ok: Optional[bool]
    access_ok: Optional[bool]
    K: Optional[int]
    n_f: float
    headroom: Optional[float]
    mu_f: float
    upload_cap: Optional[float]
    min_chunks: int
    min_neighbors: float

    @property
    def all_ok(self) -> bool:
        return all(v is True for v in (self.chunk_regime_ok, self.peer_regime_ok, self.network_ok, self.access_ok))


def feasibility_report(sc: Scenario) -> FeasibilityReport:
    p = sc.params
    if isinstance(sc.policy, KNearest):
        dl = degree_limited(p, sc.policy.L)
        n_f = float(sc.policy.L)
        mu_f = p.lam * p.file_size / dl.beta
    else:
        fs = fluid_solution(p)
        n_f, mu_f = fs.n_f, fs.mu_f
    K = sc.chunks.K if sc.chunks is not None else None
    headroom = None
    net_ok = None
    if sc.network is not None and p.range is not None:
        rep = feasibility(p, sc.network)
        headroom, net_ok = rep.headroom, rep.feasible
    cap = sc.extensions.upload_cap
    return FeasibilityReport(
        chunk_regime_ok=None if K is None else K >= sc.run.min_chunks,
        peer_regime_ok=n_f >= sc.run.min_neighbors,
        network_ok=net_ok,
        access_ok=None if cap is None else mu_f <= cap,
        K=K,
        n_f=n_f,
        headroom=headroom,
        mu_f=mu_f,
        upload_cap=cap,
        min_chunks=sc.run.min_chunks,
        min_neighbors=sc.run.min_neighbors,
    )


def feasibility_rows(rep: FeasibilityReport) -> list[dict]:
    def ok(v):
        return "not evaluated" if v is None else ("pass" if v else "fail")

    return [
        {"condition": "chunks", "value": rep.K, "threshold": rep.min_chunks, "ok": ok(rep.chunk_regime_ok)},
        {"condition": "neighbors", "value": rep.n_f, "threshold": rep.min_neighbors, "ok": ok(rep.peer_regime_ok)},
        {"condition": "network", "value": rep.headroom, "threshold": 1.0, "ok": ok(rep.network_ok)},
        {"condition": "access", "value": rep.upload_cap, "threshold": rep.mu_f, "ok": ok(rep.access_ok)},
    ]


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _lambda_for_n_f(sc: Scenario, n_f: float) -> float:
    """Arrival intensity giving ``n_f`` in the basic model of ``sc``."""
    p = sc.params
    if not isinstance(p.rate, TcpLike) or p.range is None:
        raise ValueError("the fig2 preset needs the C/r rate with a finite range")
    rho = 2.0 / math.pi * n_f * n_f
    return rho * p.rate.C / (p.file_size * p.range**3)


def _fig2_task(task):
    sc, seed, n_f = task
    p = replace(sc.params, lam=_lambda_for_n_f(sc, n_f))
    st = _simulate(sim_config(sc, seed, p), sc.sim.method, sc.sim.dt)
    return {"n_f": n_f, "seed": seed, "m_emp": st.m_emp, "ci": st.m_ci, "m_hat": heuristic_m(n_f),
            "inv_n_f": 1.0 / n_f}


def fig2_rows(sc: Scenario, jobs: int = 1) -> list[dict]:
    """Empirical and heuristic latency multipliers over the ``n_f`` grid."""
    tasks = [(sc, seed, n) for n in sc.run.n_f_grid for seed in sc.seeds()]
    return map_ordered(_fig2_task, tasks, jobs)


def eta_sweep_rows(sc: Scenario, jobs: int = 1) -> list[dict]:
    """Chunk efficiency from simulation, bound and many-to-one fixed point per ``K``."""
    tasks = [(sc, seed, K) for K in sc.run.K_grid for seed in sc.seeds()]
    stats = map_ordered(_chunk_task, tasks, jobs)
    rows = []
    for (_, seed, K), st in zip(tasks, stats):
        rows.append({"K": K, "seed": seed, "eta_emp": st.eta_emp, "eta_sigma": st.eta_sigma,
                     "eta_bound": eta_one_to_one_bound(K, st.n_f).eta_harmonic,
                     "eta_many": eta_many_to_one(K).eta_harmonic if K >= 2 else math.nan})
    return rows


def superscaling_rows(sc: Scenario, jobs: int = 1) -> list[dict]:
    """Latency against load; ``W_ratio`` is relative to the first factor."""
    tasks = []
    for fac in sc.run.lambda_factors:
        p = replace(sc.params, lam=sc.params.lam * fac)
        for seed in sc.seeds():
            tasks.append((sc, seed, p))

    stats = map_ordered(_super_task, tasks, jobs)
    base = {}
    rows = []
    for (_, seed, p), st in zip(tasks, stats):
        base.setdefault(seed, st.w_emp)
        rows.append({"lambda": p.lam, "seed": seed, "n_f": st.n_f, "W_f": st.w_f, "W_emp": st.w_emp,
                     "ci": st.w_ci, "W_ratio": st.w_emp / base[seed]})
    return rows


def _super_task(task):
    sc, seed, p = task
    return _simulate(sim_config(sc, seed, p), sc.sim.method, sc.sim.dt)


PRESETS = {
    "fig2": (fig2_rows, FIG2_COLUMNS),
    "eta-sweep": (eta_sweep_rows, ETA_SWEEP_COLUMNS),
    "superscaling": (superscaling_rows, SUPERSCALING_COLUMNS),
}

CSV_COLUMNS = {
    "fluid": FLUID_COLUMNS,
    "heuristic": HEURISTIC_COLUMNS,
    "chunk-eta": CHUNK_ETA_COLUMNS,
    "simulate": SIM_CSV_COLUMNS,
    "simulate-chunks": CHUNK_CSV_COLUMNS,
    "netload": NETLOAD_COLUMNS,
    "feasibility": FEASIBILITY_COLUMNS,
}
