"""Fixed-step chunk-level simulation with rarest-first scheduling.

Each leecher holds a collection of the ``K`` equal chunks of a file of
constant size ``F``.  At every step it matches its free links to chunks it
lacks: the locally rarest wanted chunk goes first, and in one-to-one mode
each chunk is fetched from a single randomly ordered neighbor, while in
many-to-one mode all neighbors holding it pool their links.  A sparse
permanent-seeder population keeps every chunk available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ..chunks import eta_many_to_one, eta_one_to_one_bound
from ..fluid import fluid_solution
from ..model import Range, eval_rate, typical_range
from ._backend import get_core
from .spatial import SimConfig, _batch_means

__all__ = [
    "ChunkSimStats",
    "CopyCounts",
    "MODES",
    "CHUNK_CSV_COLUMNS",
    "run_chunked",
    "rarest_first_choice",
    "copy_count_stats",
    "neighbor_graph",
    "chunk_row",
]

MODES = ("one-to-one", "many-to-one")
CHUNK_CSV_COLUMNS = (
    "seed", "n_f", "K", "mode", "eta_emp", "possessed_mean", "missing_mean", "W_emp", "chi_servers",
)


@dataclass(frozen=True)
class CopyCounts:
    possessed_mean: Optional[float]
    missing_mean: Optional[float]


@dataclass(frozen=True)
class ChunkSimStats:
    seed: int
    n_f: float
    K: int
    mode: str
    w_f: float
    departures: int
    w_emp: float
    eta_emp: float
    eta_sigma: float
    copies_possessed_mean: Optional[float]
    copies_missing_mean: Optional[float]
    class_density: np.ndarray
    latency_samples: np.ndarray
    chi_servers: float
    dt: float
    steps: int
    stalled: bool


def rarest_first_choice(need: np.ndarray, neighborhood: np.ndarray, rng: np.random.Generator) -> Optional[int]:
    """Wanted chunk with the fewest copies among the neighbors.

    ``need`` flags the chunks the peer lacks, ``neighborhood`` is a
    (neighbors x K) possession matrix.  Ties are broken uniformly at random;
    ``None`` when no wanted chunk is available.
    """
    need = np.asarray(need, dtype=bool)
    nb = np.atleast_2d(np.asarray(neighborhood, dtype=bool))
    counts = nb.sum(axis=0) if nb.size else np.zeros(len(need), dtype=int)
    ok = need & (counts > 0)
    if not ok.any():
        return None
    cand = np.flatnonzero(ok)
    c = counts[cand]
    best = cand[c == c.min()]
    return int(best[0]) if len(best) == 1 else int(rng.choice(best))


def neighbor_graph(pos: np.ndarray, side: float, R: float, rows: int):
    """Directed links ``u -> v`` for the first ``rows`` points, within ``R`` on the torus.

    Returns ``(indptr, indices, dist)`` in CSR layout.
    """
    n = len(pos)
    if n < 2:
        return np.zeros(rows + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    # cKDTree needs coordinates strictly inside [0, side)
    tree = cKDTree(np.mod(pos, side), boxsize=side)
    pairs = tree.query_pairs(R, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(rows + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    i, j = pairs[:, 0], pairs[:, 1]
    d = pos[j] - pos[i]
    d -= side * np.round(d / side)
    dist = np.hypot(d[:, 0], d[:, 1])
    a = np.concatenate([i, j])
    b = np.concatenate([j, i])
    keep = a < rows
    # COO -> CSR conversion buckets by row and leaves each row sorted by column
    g = sparse.coo_matrix((np.concatenate([dist, dist])[keep], (a[keep], b[keep])), shape=(rows, n)).tocsr()
    if not g.has_sorted_indices:
        g.sort_indices()
    return g.indptr.astype(np.int64), g.indices.astype(np.int64), g.data


def copy_count_stats(have: np.ndarray, indptr: np.ndarray, indices: np.ndarray) -> CopyCounts:
    """Mean neighbor copies of possessed and of missing chunks.

    ``have`` is the (peers x K) possession matrix of the peers the counts are
    taken over; ``indptr/indices`` list each peer's neighbors among the same
    peers (self excluded).  Means are over (peer, chunk) pairs; an empty
    category gives ``None``.
    """
    have = np.asarray(have, dtype=bool)
    n = have.shape[0]
    if n == 0:
        return CopyCounts(None, None)
    A = sparse.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n))
    counts = A @ have.astype(np.float64)
    pos = counts[have]
    neg = counts[~have]
    return CopyCounts(
        float(pos.mean()) if pos.size else None,
        float(neg.mean()) if neg.size else None,
    )


def _assert_one_to_one(down, chunk, edge, K):
    """Each (downloader, chunk) has one uploader and each link carries one chunk."""
    if len(down) == 0:
        return
    if len(np.unique(down * K + chunk)) != len(down) or len(np.unique(edge)) != len(edge):
        raise AssertionError("one-to-one constraint violated")


def run_chunked(config: SimConfig, K: int, mode: str = "one-to-one", seeder_fraction: float = 0.01,
                steps_per_chunk: float = 10.0, copy_every: int = 10, chunk_policy: str = "rarest",
                reassign: str = "completion") -> ChunkSimStats:
    """Chunk-level simulation of ``config`` with ``K`` chunks.

    Permanent seeders are placed at density ``seeder_fraction * beta_f``.
    ``chunk_policy="random"`` replaces rarest-first by a uniform choice
    among wanted chunks, as a reference for the copy statistics.

    Free links are matched to chunks at every step.  With
    ``reassign="completion"`` (one-to-one only) a chunk in progress keeps its
    uploader until it completes or the link breaks; ``reassign="step"``
    rematches every link at every step.
    The step is ``(F/K) / (steps_per_chunk * f(R_typ))``.  Copy statistics
    are sampled every ``copy_every`` post-warmup steps over leecher
    neighborhoods.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if not isinstance(config.policy, Range):
        raise ValueError("chunk simulation supports the range policy only")
    if chunk_policy not in ("rarest", "random"):
        raise ValueError(f"chunk_policy must be 'rarest' or 'random', got {chunk_policy!r}")
    if reassign not in ("step", "completion"):
        raise ValueError(f"reassign must be 'step' or 'completion', got {reassign!r}")
    sticky = reassign == "completion" and mode == "one-to-one"
    if seeder_fraction < 0:
        raise ValueError("seeder_fraction must be nonnegative")
    p = config.params
    R = float(config.policy.R)
    if not math.isfinite(R):
        raise ValueError("chunk simulation needs a finite range")
    side = float(p.torus_side)
    A = side * side
    F = p.file_size
    lam = config.lam
    core = get_core(config.backend)
    rng = np.random.default_rng(config.seed)

    fs = fluid_solution(p)
    w_f, n_f, beta_f = fs.w_f, fs.n_f, fs.beta_f
    chunk = F / K
    f_typ = float(eval_rate(p.rate, typical_range(p.rate, R), p.eps_r))
    dt = chunk / (steps_per_chunk * f_typ)
    if K >= 2:
        eta_guess = eta_many_to_one(K).eta_harmonic if mode == "many-to-one" else eta_one_to_one_bound(K, n_f).eta_harmonic
    else:
        eta_guess = 1.0
    w_pred = w_f / max(eta_guess, 0.05)
    warmup = 5.0 * w_pred if config.warmup is None else float(config.warmup)
    if config.horizon is not None:
        horizon = float(config.horizon)
    elif lam * A > 0:
        horizon = warmup + 1.1 * config.min_departures / (lam * A)
    else:
        horizon = warmup + w_pred
    n_steps = int(math.ceil(horizon / dt))

    # permanent seeders, then the initial and arriving leechers
    n_seed = rng.poisson(seeder_fraction * beta_f * A) if seeder_fraction > 0 else 0
    seed_pos = rng.uniform(0.0, side, (n_seed, 2))
    n0 = rng.poisson(beta_f * A) if config.initial_state == "fluid" else 0
    n_arr = rng.poisson(lam * A * horizon) if lam * A * horizon > 0 else 0
    t_arr = np.sort(rng.uniform(0.0, horizon, n_arr))
    new_pos = rng.uniform(0.0, side, (n_arr, 2))

    pos = rng.uniform(0.0, side, (n0, 2))
    have = np.zeros((n0, K), dtype=np.uint8)
    classes = rng.integers(0, K, n0)
    for i, k in enumerate(classes):
        have[i, rng.permutation(K)[:k]] = 1
    prog = np.zeros((n0, K))
    t_join = np.zeros(n0)
    initial = np.ones(n0, dtype=bool)

    seed_have = np.ones((n_seed, K), dtype=np.uint8)
    # global ids: initial leechers, arrivals, then seeders
    gid = np.arange(n0, dtype=np.int64)
    seed_gid = n0 + n_arr + np.arange(n_seed, dtype=np.int64)
    loc = np.full(n0 + n_arr + n_seed, -1, dtype=np.int64)
    cur_up = np.full((n0, K), -1, dtype=np.int64)
    samples, dep_t = [], []
    class_acc = np.zeros(K)
    copies_pos, copies_neg = [], []
    seed_upload = 0.0
    measured_steps = 0
    next_arr = 0
    t = 0.0
    step = 0
    for step in range(n_steps):
        # admit arrivals from the last interval; they start now
        hi = np.searchsorted(t_arr, t, side="right")
        if hi > next_arr:
            m = hi - next_arr
            pos = np.vstack([pos, new_pos[next_arr:hi]])
            have = np.vstack([have, np.zeros((m, K), dtype=np.uint8)])
            prog = np.vstack([prog, np.zeros((m, K))])
            t_join = np.concatenate([t_join, np.full(m, t)])
            initial = np.concatenate([initial, np.zeros(m, dtype=bool)])
            gid = np.concatenate([gid, n0 + np.arange(next_arr, hi, dtype=np.int64)])
            cur_up = np.vstack([cur_up, np.full((m, K), -1, dtype=np.int64)])
            next_arr = hi
        n = len(pos)
        post = t >= warmup
        if n == 0:
            t = (step + 1) * dt
            continue

        allpos = np.vstack([pos, seed_pos]) if n_seed else pos
        allhave = np.vstack([have, seed_have]) if n_seed else have
        indptr, indices, dist = neighbor_graph(allpos, side, R, n)
        link = np.asarray(eval_rate(p.rate, dist, p.eps_r), dtype=np.float64)
        N = len(allpos)
        adj = sparse.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, N))
        if chunk_policy == "rarest":
            counts = np.ascontiguousarray(adj @ allhave.astype(np.float64))
        else:
            counts = np.zeros((n, K))
        need = np.ascontiguousarray(1 - have)
        chunk_key = rng.random((n, K))
        edge_key = rng.random(len(indices))
        out_rate = np.zeros((n, K))
        cap = len(indices)
        out_down = np.empty(cap, dtype=np.int64)
        out_chunk = np.empty(cap, dtype=np.int64)
        out_edge = np.empty(cap, dtype=np.int64)
        if sticky:
            m = _assign_sticky(core, indptr, indices, link, allhave, counts, need, chunk_key, edge_key,
                               out_rate, out_down, out_chunk, out_edge, cur_up, gid, seed_gid, loc, n)
        else:
            m = core.assign_chunks(indptr, indices, link, np.ascontiguousarray(allhave), counts, need,
                                   chunk_key, edge_key, mode == "many-to-one",
                                   out_rate, out_down, out_chunk, out_edge)
        if mode != "many-to-one":
            _assert_one_to_one(out_down[:m], out_chunk[:m], out_edge[:m], K)

        if post:
            measured_steps += 1
            class_acc += np.bincount(have.sum(axis=1), minlength=K + 1)[:K]
            if n_seed and m:
                e = out_edge[:m]
                seed_upload += float(np.sum(link[e[indices[e] >= n]]))
            if copy_every > 0 and (measured_steps - 1) % copy_every == 0:
                lp, li, _ = neighbor_graph(pos, side, R, n)
                cc = copy_count_stats(have, lp, li)
                if cc.possessed_mean is not None and cc.missing_mean is not None:
                    copies_pos.append(cc.possessed_mean)
                    copies_neg.append(cc.missing_mean)

        before = prog
        prog = prog + out_rate * dt
        newly = (prog >= chunk) & (have == 0)
        if newly.any():
            have = have | newly.astype(np.uint8)
            cur_up[newly] = -1
        done = have.all(axis=1)
        if done.any():
            # interpolate the crossing time of the last chunk within the step
            idx = np.flatnonzero(done)
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(newly[idx], (chunk - before[idx]) / (out_rate[idx] * dt), 0.0)
            t_done = t + dt * np.clip(frac.max(axis=1), 0.0, 1.0)
            ok = (t_done > warmup) & ~initial[idx]
            samples.append(t_done[ok] - t_join[idx][ok])
            dep_t.append(t_done[ok])
            keep = ~done
            pos, have, prog = pos[keep], have[keep], prog[keep]
            t_join, initial = t_join[keep], initial[keep]
            gid, cur_up = gid[keep], cur_up[keep]
        t = (step + 1) * dt

    if samples:
        s = np.concatenate(samples)
        s = s[np.argsort(np.concatenate(dep_t), kind="stable")]
    else:
        s = np.zeros(0)
    s.setflags(write=False)
    mean, se, _ = _batch_means(s, config.n_batches)
    eta = w_f / mean if len(s) else 0.0
    eta_sigma = eta * se / mean if len(s) > 1 else math.inf
    span = max(measured_steps, 1) * dt
    cd = class_acc / (max(measured_steps, 1) * A)
    cd.setflags(write=False)
    chi = (seed_upload * dt / span / A) / (lam * F) if lam > 0 else math.nan
    stalled = len(s) == 0 and config.lam > 0
    return ChunkSimStats(
        seed=config.seed,
        n_f=n_f,
        K=K,
        mode=mode,
        w_f=w_f,
        departures=len(s),
        w_emp=mean,
        eta_emp=eta,
        eta_sigma=eta_sigma,
        copies_possessed_mean=float(np.mean(copies_pos)) if copies_pos else None,
        copies_missing_mean=float(np.mean(copies_neg)) if copies_neg else None,
        class_density=cd,
        latency_samples=s,
        chi_servers=chi,
        dt=dt,
        steps=n_steps,
        stalled=stalled,
    )


def _assign_sticky(core, indptr, indices, link, allhave, counts, need, chunk_key, edge_key,
                   out_rate, out_down, out_chunk, out_edge, cur_up, gid, seed_gid, loc, n):
    """One-to-one matching where chunks in progress keep their uploader.

    Assignments whose link still exists are carried over; the remaining
    links and wanted chunks are matched afresh.  ``cur_up`` (uploader ids)
    is updated in place.
    """
    N = n + len(seed_gid)
    all_gid = np.concatenate([gid, seed_gid])
    loc[all_gid] = np.arange(N)
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    ekeys = rows * N + indices
    u, c = np.nonzero(cur_up >= 0)
    v = loc[cur_up[u, c]]
    alive = v >= 0
    key = u * N + np.where(alive, v, 0)
    e = np.minimum(np.searchsorted(ekeys, key), max(len(ekeys) - 1, 0))
    ok = alive & (len(ekeys) > 0) & (ekeys[e] == key if len(ekeys) else False)
    cur_up[u[~ok], c[~ok]] = -1
    u, c, e = u[ok], c[ok], e[ok]
    k = len(u)
    out_down[:k], out_chunk[:k], out_edge[:k] = u, c, e
    np.add.at(out_rate, (u, c), link[e])

    busy = np.zeros(len(indices), dtype=bool)
    busy[e] = True
    need2 = need.copy()
    need2[u, c] = 0
    free = ~busy
    indptr2 = np.zeros_like(indptr)
    np.cumsum(np.bincount(rows[free], minlength=n), out=indptr2[1:])
    emap = np.flatnonzero(free)
    m = core.assign_chunks(indptr2, np.ascontiguousarray(indices[free]), np.ascontiguousarray(link[free]),
                           np.ascontiguousarray(allhave), counts, need2, chunk_key,
                           np.ascontiguousarray(edge_key[free]), False,
                           out_rate, out_down[k:], out_chunk[k:], out_edge[k:])
    new_e = emap[out_edge[k:k + m]]
    out_edge[k:k + m] = new_e
    cur_up[out_down[k:k + m], out_chunk[k:k + m]] = all_gid[indices[new_e]]
    loc[all_gid] = -1
    return k + m


def chunk_row(stats: ChunkSimStats) -> dict:
    def opt(v):
        return math.nan if v is None else v

    return {
        "seed": stats.seed,
        "n_f": stats.n_f,
        "K": stats.K,
        "mode": stats.mode,
        "eta_emp": stats.eta_emp,
        "possessed_mean": opt(stats.copies_possessed_mean),
        "missing_mean": opt(stats.copies_missing_mean),
        "W_emp": stats.w_emp,
        "chi_servers": stats.chi_servers,
    }
