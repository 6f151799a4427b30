"""Exact event-driven simulation of the spatial birth-death dynamics.

Peers arrive as Poisson rain on a square torus, download from the peers
they are linked to at the additive rate ``sum f(d)``, and leave when their
file is complete.  Rates only change at arrivals and departures, so
completion times follow exactly from ``remaining / rate``.  The event loop
runs in the kernel selected by :mod:`superscale.sim._backend`; this module
draws all randomness, drives the kernel and turns its records into
statistics.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats as sps

from ..fluid import (
    ExtensionParams,
    degree_limited,
    fluid_solution,
    heuristic_m,
    heuristic_m_constant_rate,
)
from ..model import Constant, KNearest, Range, SystemParams, TcpLike
from ._backend import get_core

__all__ = [
    "SimConfig",
    "SimStats",
    "MEstimate",
    "KSResult",
    "Snapshot",
    "Arrivals",
    "draw_arrivals",
    "predicted_latency",
    "run",
    "simulate",
    "estimate_m",
    "latency_distribution_check",
    "snapshot",
    "stats_row",
    "SIM_CSV_COLUMNS",
]

SIM_CSV_COLUMNS = (
    "seed", "n_f", "lambda", "W_emp", "beta_emp", "m_emp", "ci", "departures", "ks", "abandonment_count",
)


@dataclass(frozen=True)
class SimConfig:
    """One simulation run.

    ``policy`` defaults to the range policy at ``params.range``.  With
    ``horizon=None`` the run lasts long enough for about ``min_departures``
    departures after ``warmup``; ``warmup=None`` means five predicted
    latencies.  ``n_snapshots`` evenly spaced post-warmup snapshots are kept.
    """

    params: SystemParams
    policy: Optional[Union[Range, KNearest]] = None
    extensions: ExtensionParams = field(default_factory=ExtensionParams)
    seed: int = 0
    horizon: Optional[float] = None
    warmup: Optional[float] = None
    initial_state: str = "fluid"
    min_departures: int = 20_000
    n_batches: int = 20
    n_snapshots: int = 0
    backend: Optional[str] = None
    arrival_intensity: Optional[float] = None

    def __post_init__(self):
        if self.initial_state not in ("fluid", "empty"):
            raise ValueError(f"initial_state must be 'fluid' or 'empty', got {self.initial_state!r}")
        if self.policy is None:
            if self.params.range is None:
                raise ValueError("a range or an explicit policy is required")
            object.__setattr__(self, "policy", Range(self.params.range))
        if not isinstance(self.policy, (Range, KNearest)):
            raise TypeError("simulation supports the Range and KNearest policies")
        side = self.params.torus_side
        if side is None or not math.isfinite(side):
            raise ValueError("simulation needs a finite torus_side")
        if self.warmup is not None and self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if self.horizon is not None and self.warmup is not None and not self.warmup < self.horizon:
            raise ValueError("warmup must be smaller than horizon")
        if self.n_batches < 2:
            raise ValueError("n_batches must be >= 2")
        if self.min_departures < 0 or self.n_snapshots < 0:
            raise ValueError("min_departures and n_snapshots must be nonnegative")
        if self.arrival_intensity is not None and not self.arrival_intensity >= 0:
            raise ValueError("arrival_intensity must be nonnegative")

    @property
    def area(self) -> float:
        return self.params.torus_side ** 2

    @property
    def lam(self) -> float:
        """Intensity of the simulated arrival stream (``params.lam`` unless overridden)."""
        return self.params.lam if self.arrival_intensity is None else self.arrival_intensity

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class MEstimate:
    m: float
    sigma: float
    ci_low: float
    ci_high: float
    n_batches: int
    wide_ci: bool = False


@dataclass(frozen=True)
class KSResult:
    ks_distance: float
    p_value: float
    mean: float
    n: int


@dataclass(frozen=True)
class Snapshot:
    """Frozen view of the population at time ``t``.

    ``roles`` is 1 for leechers and 2 for seeders; ``rates`` are the
    per-peer download rates from other peers (server share excluded).
    """

    t: float
    positions: np.ndarray
    roles: np.ndarray
    rates: np.ndarray
    ids: np.ndarray
    side: float
    server_share: float = 0.0

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def leechers(self) -> np.ndarray:
        return self.roles == 1


@dataclass(frozen=True)
class SimStats:
    seed: int
    n_f: float
    lam: float
    w_f: float
    departures: int
    w_emp: float
    w_sigma: float
    w_ci: float
    beta_emp: float
    m_emp: float
    m_sigma: float
    m_ci: float
    latency_samples: np.ndarray
    abandonment_count: int
    abandonment_ratio: float
    little_residual: float
    seeder_density: float
    warmup: float
    horizon: float
    events: int
    backend: str
    snapshots: tuple = ()

    @property
    def ci(self) -> float:
        """Half-width of the 95% interval on ``m_emp``."""
        return self.m_ci


@dataclass(frozen=True)
class Arrivals:
    """Pre-drawn arrival stream; initial peers come first with ``t = 0``."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    size: np.ndarray
    deadline: np.ndarray
    initial: np.ndarray


def predicted_latency(config: SimConfig) -> tuple[float, float, float]:
    """``(w_f, n_f, beta_f)`` used for normalization and warmup."""
    p = config.params
    if isinstance(config.policy, KNearest):
        dl = degree_limited(p, config.policy.L)
        return dl.w, math.pi * dl.R**2 * dl.beta, dl.beta
    fs = fluid_solution(p)
    return fs.w_f, fs.n_f, fs.beta_f


def _warmup_latency(config: SimConfig, w_f: float, n_f: float) -> float:
    p = config.params
    if isinstance(config.policy, Range) and math.isfinite(p.range):
        if isinstance(p.rate, TcpLike):
            return heuristic_m(n_f) * w_f
        if isinstance(p.rate, Constant):
            return heuristic_m_constant_rate(n_f) * w_f
    return w_f


def draw_arrivals(config: SimConfig, horizon: float, beta0: float, rng: np.random.Generator) -> Arrivals:
    p = config.params
    side = p.torus_side
    A = side * side
    F = p.file_size
    a = config.extensions.abandonment_rate

    def sizes(n):
        if p.file_size_dist == "constant":
            return np.full(n, F)
        return rng.exponential(F, n)

    n0 = rng.poisson(beta0 * A) if config.initial_state == "fluid" else 0
    x0 = rng.uniform(0.0, side, n0)
    y0 = rng.uniform(0.0, side, n0)
    s0 = sizes(n0) * rng.uniform(0.0, 1.0, n0)
    s0 = np.maximum(s0, 1e-12 * F)

    n = rng.poisson(config.lam * A * horizon) if config.lam * A * horizon > 0 else 0
    t = np.sort(rng.uniform(0.0, horizon, n))
    x = rng.uniform(0.0, side, n)
    y = rng.uniform(0.0, side, n)
    s = sizes(n)

    tt = np.concatenate([np.zeros(n0), t])
    if a > 0:
        dl = tt + rng.exponential(1.0 / a, n0 + n)
    else:
        dl = np.full(n0 + n, np.inf)
    return Arrivals(
        t=tt,
        x=np.concatenate([x0, x]),
        y=np.concatenate([y0, y]),
        size=np.concatenate([s0, s]),
        deadline=dl,
        initial=np.concatenate([np.ones(n0, dtype=np.uint8), np.zeros(n, dtype=np.uint8)]),
    )


def make_core(config: SimConfig, arr: Arrivals, warmup: float):
    p = config.params
    core_mod = get_core(config.backend)
    kind, p1, p2, p3 = p.rate.kernel_params()
    if isinstance(config.policy, KNearest):
        L, R = config.policy.L, math.inf
        eps = p.eps_r
    else:
        L, R = 0, float(config.policy.R)
        eps = p.eps_r
    ext = config.extensions
    return core_mod.EventCore(
        p.torus_side, R, kind, p1, p2, p3, eps, L, ext.seed_time, ext.server_rate_density, warmup,
        arr.t, arr.x, arr.y, arr.size, arr.deadline, arr.initial,
    )


def snapshot(core) -> Snapshot:
    """Immutable copy of positions, roles and per-peer rates."""
    ids = np.sort(core.active_ids())
    pos = np.column_stack([core.x_arr[ids], core.y_arr[ids]])
    out = Snapshot(
        t=float(core.t),
        positions=pos,
        roles=np.asarray(core.state_arr[ids], dtype=np.int8).copy(),
        rates=np.asarray(core.rate_arr[ids]).copy(),
        ids=ids,
        side=float(core.side),
        server_share=float(core.server_share()),
    )
    for a in (out.positions, out.roles, out.rates, out.ids):
        a.setflags(write=False)
    return out


def _batch_means(samples: np.ndarray, n_batches: int) -> tuple[float, float, float]:
    """Mean, standard error and 95% half-width from contiguous batches."""
    n = len(samples)
    if n == 0:
        return math.nan, math.nan, math.nan
    mean = float(np.mean(samples))
    nb = min(n_batches, n)
    if nb < 2:
        return mean, math.inf, math.inf
    means = np.array([b.mean() for b in np.array_split(samples, nb)])
    se = float(np.std(means, ddof=1) / math.sqrt(nb))
    return mean, se, float(sps.t.ppf(0.975, nb - 1) * se)


def estimate_m(stats_or_samples, w_f: float, n_batches: int = 20) -> MEstimate:
    """``W_emp / W_f`` with a batch-means confidence interval.

    Accepts a :class:`SimStats` or a sequence of sojourn times ordered by
    departure.  Fewer than 100 samples sets ``wide_ci``.
    """
    if isinstance(stats_or_samples, SimStats):
        samples = stats_or_samples.latency_samples
    else:
        samples = np.asarray(stats_or_samples, dtype=float)
    if not w_f > 0:
        raise ValueError("w_f must be positive")
    mean, se, half = _batch_means(samples, n_batches)
    wide = len(samples) < 100
    if wide:
        warnings.warn(f"only {len(samples)} departures; the interval on m is unreliable", RuntimeWarning, stacklevel=2)
    m = mean / w_f
    return MEstimate(m=m, sigma=se / w_f, ci_low=m - half / w_f, ci_high=m + half / w_f,
                     n_batches=min(n_batches, len(samples)), wide_ci=wide)


def latency_distribution_check(stats_or_samples) -> KSResult:
    """KS distance between the sojourn times and an exponential of equal mean."""
    if isinstance(stats_or_samples, SimStats):
        samples = stats_or_samples.latency_samples
    else:
        samples = np.asarray(stats_or_samples, dtype=float)
    if len(samples) < 1000:
        raise ValueError(f"need at least 1000 samples, got {len(samples)}")
    mean = float(np.mean(samples))
    res = sps.kstest(samples, "expon", args=(0.0, mean))
    return KSResult(ks_distance=float(res.statistic), p_value=float(res.pvalue), mean=mean, n=len(samples))


def run(config: SimConfig) -> SimStats:
    """Simulate ``config`` and collect post-warmup statistics."""
    p = config.params
    rng = np.random.default_rng(config.seed)
    w_f, n_f, beta_f = predicted_latency(config)
    w_pred = _warmup_latency(config, w_f, n_f)
    warmup = 5.0 * w_pred if config.warmup is None else float(config.warmup)
    A = config.area
    arrival_rate = config.lam * A
    if config.horizon is not None:
        horizon = float(config.horizon)
    elif arrival_rate > 0:
        horizon = warmup + 1.1 * config.min_departures / arrival_rate + w_pred
    else:
        horizon = warmup + 1.0
    if not warmup < horizon:
        raise ValueError("warmup must be smaller than horizon")

    arr = draw_arrivals(config, horizon, beta_f, rng)
    return simulate(config, arr, warmup, horizon)


def simulate(config: SimConfig, arr: Arrivals, warmup: float, horizon: float) -> SimStats:
    """Run the kernel on a given arrival stream (``run`` draws one first)."""
    w_f, n_f, _ = predicted_latency(config)
    core = make_core(config, arr, warmup)

    snaps = []
    if config.n_snapshots > 0:
        for ts in np.linspace(warmup, horizon, config.n_snapshots + 1, endpoint=False)[1:]:
            core.run_until(float(ts))
            snaps.append(snapshot(core))
    core.run_until(horizon)
    return _collect(config, core, arr, warmup, horizon, w_f, n_f, tuple(snaps))


def _collect(config, core, arr, warmup, horizon, w_f, n_f, snaps) -> SimStats:
    p = config.params
    A = config.area
    ids, t_out, kinds = core.records()
    keep = (t_out > warmup) & (arr.initial[ids] == 0)
    ids, t_out, kinds = ids[keep], t_out[keep], kinds[keep]
    sojourn = t_out - arr.t[ids]
    done = kinds == 0
    samples = sojourn[done]
    samples.setflags(write=False)
    n_ab = int(np.count_nonzero(~done))

    span = horizon - warmup
    beta_emp = core.leech_integral / (A * span) if span > 0 else math.nan
    seeder_density = core.seed_integral / (A * span) if span > 0 else math.nan
    mean, se, half = _batch_means(samples, config.n_batches)
    all_mean = float(np.mean(sojourn)) if len(sojourn) else math.nan
    little = abs(beta_emp - config.lam * all_mean) / beta_emp if beta_emp > 0 else math.nan
    total = len(sojourn)
    return SimStats(
        seed=config.seed,
        n_f=n_f,
        lam=config.lam,
        w_f=w_f,
        departures=int(len(samples)),
        w_emp=mean,
        w_sigma=se,
        w_ci=half,
        beta_emp=beta_emp,
        m_emp=mean / w_f,
        m_sigma=se / w_f,
        m_ci=half / w_f,
        latency_samples=samples,
        abandonment_count=n_ab,
        abandonment_ratio=n_ab / total if total else math.nan,
        little_residual=little,
        seeder_density=seeder_density,
        warmup=warmup,
        horizon=horizon,
        events=int(core.events),
        backend="compiled" if type(core).__module__.endswith("_ccore") else "python",
        snapshots=snaps,
    )


def stats_row(stats: SimStats, ks: Optional[float] = None) -> dict:
    """CSV row for one run; ``ks`` is computed when enough samples exist."""
    if ks is None and len(stats.latency_samples) >= 1000:
        ks = latency_distribution_check(stats).ks_distance
    return {
        "seed": stats.seed,
        "n_f": stats.n_f,
        "lambda": stats.lam,
        "W_emp": stats.w_emp,
        "beta_emp": stats.beta_emp,
        "m_emp": stats.m_emp,
        "ci": stats.m_ci,
        "departures": stats.departures,
        "ks": math.nan if ks is None else ks,
        "abandonment_count": stats.abandonment_count,
    }
