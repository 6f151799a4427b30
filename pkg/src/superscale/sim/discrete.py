"""Fixed-step simulation of the spatial dynamics, for cross-checking.

Time advances in steps of ``dt``.  Rates are recomputed from the
population at the start of each step and held for the whole step, so the
result converges to the exact event-driven dynamics as ``dt -> 0``.
Arrivals join at the first step boundary after their arrival time.
"""
from __future__ import annotations

import math

import numpy as np

from ..model import Range, eval_rate
from .chunked import neighbor_graph
from .spatial import SimConfig, SimStats, _batch_means, _warmup_latency, draw_arrivals, predicted_latency

__all__ = ["run_discrete"]


def run_discrete(config: SimConfig, dt: float) -> SimStats:
    """Simulate ``config`` with time step ``dt`` (range policy only)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not isinstance(config.policy, Range):
        raise ValueError("the fixed-step mode supports the range policy only")
    p = config.params
    R = float(config.policy.R)
    side = float(p.torus_side)
    A = side * side
    ext = config.extensions
    rng = np.random.default_rng(config.seed)
    w_f, n_f, beta_f = predicted_latency(config)
    w_pred = _warmup_latency(config, w_f, n_f)
    warmup = 5.0 * w_pred if config.warmup is None else float(config.warmup)
    if config.horizon is not None:
        horizon = float(config.horizon)
    elif config.lam * A > 0:
        horizon = warmup + 1.1 * config.min_departures / (config.lam * A) + w_pred
    else:
        horizon = warmup + 1.0
    arr = draw_arrivals(config, horizon, beta_f, rng)
    server_total = ext.server_rate_density * A

    n_total = len(arr.t)
    next_arr = 0
    ids = np.zeros(0, dtype=np.int64)
    rem = np.zeros(0)
    seeding = np.zeros(0, dtype=bool)
    expiry = np.zeros(0)
    out_t, out_id, out_kind = [], [], []
    leech_int = 0.0
    seed_int = 0.0
    steps = int(math.ceil(horizon / dt))
    for k in range(steps):
        t = k * dt
        hi = int(np.searchsorted(arr.t, t, side="right"))
        if hi > next_arr:
            new = np.arange(next_arr, hi, dtype=np.int64)
            ids = np.concatenate([ids, new])
            rem = np.concatenate([rem, arr.size[new]])
            seeding = np.concatenate([seeding, np.zeros(len(new), dtype=bool)])
            expiry = np.concatenate([expiry, np.full(len(new), np.inf)])
            next_arr = hi
        t1 = min(t + dt, horizon)
        h = t1 - t
        if h <= 0:
            break
        leech = ~seeding
        n_l = int(np.count_nonzero(leech))
        lo = max(t, warmup)
        if t1 > lo:
            leech_int += n_l * (t1 - lo)
            seed_int += (len(ids) - n_l) * (t1 - lo)
        if len(ids) == 0:
            continue
        # leechers first so that they are the CSR rows
        order = np.concatenate([np.flatnonzero(leech), np.flatnonzero(~leech)])
        ids, rem, seeding, expiry = ids[order], rem[order], seeding[order], expiry[order]
        pos = np.column_stack([arr.x[ids], arr.y[ids]])
        indptr, indices, dist = neighbor_graph(pos, side, R, n_l)
        link = np.asarray(eval_rate(p.rate, dist, p.eps_r), dtype=float)
        rate = np.add.reduceat(link, indptr[:-1]) if len(link) else np.zeros(n_l)
        rate = np.where(np.diff(indptr) > 0, rate, 0.0)
        share = server_total / n_l if (n_l > 0 and server_total > 0) else 0.0
        r = rate + share

        lrem = rem[:n_l]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_done = np.where(r > 0, t + lrem / r, np.inf)
        dl = arr.deadline[ids[:n_l]]
        fin = (t_done <= t1) & (t_done <= dl)
        gone = (dl <= t1) & (dl < t_done)
        lrem = lrem - r * h
        rem[:n_l] = lrem
        for mask, kind, when in ((fin, 0, t_done), (gone, 1, dl)):
            if mask.any():
                out_t.append(when[mask])
                out_id.append(ids[:n_l][mask])
                out_kind.append(np.full(int(mask.sum()), kind, dtype=np.int8))
        expired = np.zeros(len(ids), dtype=bool)
        expired[n_l:] = expiry[n_l:] <= t1
        drop = expired.copy()
        drop[:n_l] = gone
        if ext.seed_time > 0:
            seeding[:n_l] |= fin
            expiry[:n_l] = np.where(fin, t_done + ext.seed_time, expiry[:n_l])
            rem[:n_l] = np.where(fin, 0.0, rem[:n_l])
        else:
            drop[:n_l] |= fin
        keep = ~drop
        ids, rem, seeding, expiry = ids[keep], rem[keep], seeding[keep], expiry[keep]

    if out_t:
        t_out = np.concatenate(out_t)
        id_out = np.concatenate(out_id)
        kind_out = np.concatenate(out_kind)
        o = np.argsort(t_out, kind="stable")
        t_out, id_out, kind_out = t_out[o], id_out[o], kind_out[o]
    else:
        t_out = np.zeros(0)
        id_out = np.zeros(0, dtype=np.int64)
        kind_out = np.zeros(0, dtype=np.int8)
    keep = (t_out > warmup) & (arr.initial[id_out] == 0)
    t_out, id_out, kind_out = t_out[keep], id_out[keep], kind_out[keep]
    sojourn = t_out - arr.t[id_out]
    done = kind_out == 0
    samples = sojourn[done]
    samples.setflags(write=False)
    n_ab = int(np.count_nonzero(~done))
    span = horizon - warmup
    beta_emp = leech_int / (A * span)
    mean, se, half = _batch_means(samples, config.n_batches)
    all_mean = float(np.mean(sojourn)) if len(sojourn) else math.nan
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
        abandonment_ratio=n_ab / len(sojourn) if len(sojourn) else math.nan,
        little_residual=abs(beta_emp - config.lam * all_mean) / beta_emp if beta_emp > 0 else math.nan,
        seeder_density=seed_int / (A * span),
        warmup=warmup,
        horizon=horizon,
        events=steps,
        backend="fixed-step",
        snapshots=(),
    )
