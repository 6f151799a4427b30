"""Pure-Python simulation kernels.

This module mirrors ``_ccore.pyx`` line for line (same data layout, same
arithmetic order) so that both backends produce the same trajectories.  It
is used when the compiled extension is unavailable or when
``SUPERSCALE_BACKEND=python`` is set.
"""
from __future__ import annotations

import math

import numpy as np

ABSENT, LEECHER, SEEDER, GONE = 0, 1, 2, 3
COMPLETED, ABANDONED = 0, 1

EV_NONE, EV_ARRIVAL, EV_COMPLETE, EV_ABANDON, EV_EXPIRE = 0, 1, 2, 3, 4


def link_rate(kind: int, p1: float, p2: float, p3: float, d: float, eps: float) -> float:
    if d < eps:
        d = eps
    if kind == 0:
        return p1 / d
    if kind == 1:
        return p1
    if kind == 2:
        v = p1 / d
        return v if v < p2 else p2
    if kind == 3:
        return p1 / (d + p2)
    if kind == 4:
        v = p1 / d - p2
        return v if v > 0.0 else 0.0
    if kind == 5:
        return 0.5 * p3 * math.log1p(p1 * d ** (-p2))
    raise ValueError(f"unknown rate kind {kind}")


class EventCore:
    """Exact event-driven spatial birth-death dynamics.

    All randomness is drawn up front by the caller: the arrival stream
    (times, positions, sizes, abandonment deadlines) is passed at
    construction, which keeps the kernel deterministic and lets the two
    backends be compared event for event.

    ``L == 0`` selects the range policy (neighbors within ``R``), ``L > 0``
    the L-nearest-peers policy.
    """

    def __init__(self, side, R, kind, p1, p2, p3, eps, L, seed_time, server_density, warmup,
                 t_arr, x, y, size, deadline, initial):
        self.side = float(side)
        self.half = 0.5 * self.side
        self.R = float(R)
        self.kind = int(kind)
        self.p1, self.p2, self.p3 = float(p1), float(p2), float(p3)
        self.eps = float(eps)
        self.L = int(L)
        self.seed_time = float(seed_time)
        self.server_total = float(server_density) * self.side * self.side
        self.warmup = float(warmup)

        self.t_arr = np.ascontiguousarray(t_arr, dtype=np.float64)
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.rem = np.array(size, dtype=np.float64)
        self.deadline = np.ascontiguousarray(deadline, dtype=np.float64)
        self.initial = np.ascontiguousarray(initial, dtype=np.uint8)
        n = len(self.t_arr)
        self.n = n
        self.rate = np.zeros(n)
        self.nb = np.zeros(n, dtype=np.int64)
        self.state = np.zeros(n, dtype=np.int8)
        self.expiry = np.full(n, np.inf)
        self.act = np.zeros(n, dtype=np.int64)
        self.pos = np.full(n, -1, dtype=np.int64)
        self.n_act = 0
        self.n_leech = 0
        self.n_seed = 0
        self.next_arrival = 0
        self.t = 0.0
        self.leech_integral = 0.0
        self.seed_integral = 0.0
        self.events = 0

        self.rec_id = np.zeros(n, dtype=np.int64)
        self.rec_t = np.zeros(n)
        self.rec_kind = np.zeros(n, dtype=np.int8)
        self.n_rec = 0

        # uniform grid with cells at least R wide (range policy only)
        g = int(math.floor(self.side / self.R)) if self.L == 0 and self.R > 0 else 1
        if g < 3:
            g = 1
        self.g = g
        self.cell_w = self.side / g
        self.cell = np.full(n, -1, dtype=np.int64)
        self.head = np.full(g * g, -1, dtype=np.int64)
        self.nxt = np.full(n, -1, dtype=np.int64)
        self.prv = np.full(n, -1, dtype=np.int64)

        if self.L > 0:
            self.nbr = np.full((n, self.L), -1, dtype=np.int64)
            self.nbd = np.zeros((n, self.L))
            self.ncount = np.zeros(n, dtype=np.int64)
            self.kth = np.zeros(n, dtype=np.int64)  # slot holding the farthest neighbor

    # -- geometry ---------------------------------------------------------

    def dist(self, i, j):
        dx = abs(self.x[i] - self.x[j])
        if dx > self.half:
            dx = self.side - dx
        dy = abs(self.y[i] - self.y[j])
        if dy > self.half:
            dy = self.side - dy
        return math.sqrt(dx * dx + dy * dy)

    def f(self, d):
        return link_rate(self.kind, self.p1, self.p2, self.p3, d, self.eps)

    def _cell_of(self, i):
        g = self.g
        cx = int(self.x[i] / self.cell_w)
        cy = int(self.y[i] / self.cell_w)
        if cx >= g:
            cx = g - 1
        if cy >= g:
            cy = g - 1
        return cx * g + cy

    def _grid_insert(self, i):
        c = self._cell_of(i)
        self.cell[i] = c
        h = self.head[c]
        self.nxt[i] = h
        self.prv[i] = -1
        if h >= 0:
            self.prv[h] = i
        self.head[c] = i

    def _grid_remove(self, i):
        c = self.cell[i]
        p, q = self.prv[i], self.nxt[i]
        if p >= 0:
            self.nxt[p] = q
        else:
            self.head[c] = q
        if q >= 0:
            self.prv[q] = p
        self.cell[i] = -1

    def _range_neighbors(self, i):
        """Yield (j, d) for present peers within R of i, in grid order."""
        g = self.g
        R = self.R
        if g == 1:
            cells = [0]
        else:
            c = self.cell[i]
            cx, cy = divmod(int(c), g)
            cells = []
            for ox in (-1, 0, 1):
                for oy in (-1, 0, 1):
                    cells.append(((cx + ox) % g) * g + (cy + oy) % g)
        for c in cells:
            j = self.head[c]
            while j >= 0:
                if j != i:
                    d = self.dist(i, j)
                    if d <= R:
                        yield j, d
                j = self.nxt[j]

    # -- active set ---------------------------------------------------------

    def _activate(self, i):
        self.pos[i] = self.n_act
        self.act[self.n_act] = i
        self.n_act += 1

    def _deactivate(self, i):
        k = self.pos[i]
        last = self.act[self.n_act - 1]
        self.act[k] = last
        self.pos[last] = k
        self.n_act -= 1
        self.pos[i] = -1

    # -- L-nearest bookkeeping ---------------------------------------------

    def _knn_refresh_kth(self, i):
        best = 0
        c = self.ncount[i]
        for s in range(1, c):
            a, b = self.nbr[i, s], self.nbr[i, best]
            if self.nbd[i, s] > self.nbd[i, best] or (self.nbd[i, s] == self.nbd[i, best] and a > b):
                best = s
        self.kth[i] = best

    def _knn_offer(self, i, j, d):
        """Offer j at distance d to the neighbor list of i."""
        c = self.ncount[i]
        if c < self.L:
            self.nbr[i, c] = j
            self.nbd[i, c] = d
            self.ncount[i] = c + 1
            self.rate[i] += self.f(d)
            self._knn_refresh_kth(i)
            return
        k = self.kth[i]
        dk = self.nbd[i, k]
        if d < dk or (d == dk and j < self.nbr[i, k]):
            self.rate[i] += self.f(d) - self.f(dk)
            self.nbr[i, k] = j
            self.nbd[i, k] = d
            self._knn_refresh_kth(i)

    def _knn_build(self, z):
        for a in range(self.n_act):
            j = self.act[a]
            if j != z:
                self._knn_offer(z, j, self.dist(z, j))

    def _knn_drop(self, i, y):
        """Remove y from i's list and pull in the next nearest peer."""
        c = self.ncount[i]
        slot = -1
        for s in range(c):
            if self.nbr[i, s] == y:
                slot = s
                break
        if slot < 0:
            return
        k = self.kth[i]
        dk = self.nbd[i, k]
        idk = self.nbr[i, k]
        self.rate[i] -= self.f(self.nbd[i, slot])
        last = c - 1
        self.nbr[i, slot] = self.nbr[i, last]
        self.nbd[i, slot] = self.nbd[i, last]
        self.nbr[i, last] = -1
        self.ncount[i] = last
        # the replacement is the nearest peer beyond the old farthest neighbor
        best = -1
        bd = math.inf
        for a in range(self.n_act):
            j = self.act[a]
            if j == i or j == y:
                continue
            d = self.dist(i, j)
            if d < dk or (d == dk and j <= idk):
                continue
            if d < bd or (d == bd and j < best):
                best = j
                bd = d
        if best >= 0:
            self.nbr[i, last] = best
            self.nbd[i, last] = bd
            self.ncount[i] = last + 1
            self.rate[i] += self.f(bd)
        if self.ncount[i] == 0:
            self.rate[i] = 0.0
        self._knn_refresh_kth(i)

    # -- events -------------------------------------------------------------

    def _arrive(self, z):
        self.state[z] = LEECHER
        self.n_leech += 1
        if self.L == 0:
            self._grid_insert(z)
            acc = 0.0
            cnt = 0
            for j, d in self._range_neighbors(z):
                v = self.f(d)
                acc += v
                cnt += 1
                self.rate[j] += v
                self.nb[j] += 1
            self.rate[z] = acc
            self.nb[z] = cnt
            self._activate(z)
        else:
            for a in range(self.n_act):
                j = self.act[a]
                self._knn_offer(j, z, self.dist(j, z))
            self._activate(z)
            self._knn_build(z)

    def _remove(self, i):
        """Take i out of the system; neighbors lose their link to i."""
        self._deactivate(i)
        self.state[i] = GONE
        if self.L == 0:
            for j, d in self._range_neighbors(i):
                self.nb[j] -= 1
                if self.nb[j] == 0:
                    self.rate[j] = 0.0
                else:
                    self.rate[j] -= self.f(d)
            self._grid_remove(i)
        else:
            for a in range(self.n_act):
                j = self.act[a]
                if self.ncount[j] == 0:
                    continue
                d = self.dist(i, j)
                if d <= self.nbd[j, self.kth[j]]:
                    self._knn_drop(j, i)
        self.rate[i] = 0.0

    def _record(self, i, kind):
        self.rec_id[self.n_rec] = i
        self.rec_t[self.n_rec] = self.t
        self.rec_kind[self.n_rec] = kind
        self.n_rec += 1

    def run_until(self, t_stop):
        """Advance the dynamics to ``t_stop`` (exclusive of events after it)."""
        t_stop = float(t_stop)
        while True:
            share = self.server_total / self.n_leech if (self.n_leech > 0 and self.server_total > 0) else 0.0
            t_next = math.inf
            ev = EV_NONE
            who = -1
            if self.next_arrival < self.n:
                t_next = self.t_arr[self.next_arrival]
                ev = EV_ARRIVAL
                who = self.next_arrival
            for a in range(self.n_act):
                i = self.act[a]
                st = self.state[i]
                if st == LEECHER:
                    r = self.rate[i] + share
                    if r > 0.0:
                        tc = self.t + self.rem[i] / r
                        if tc < t_next:
                            t_next, ev, who = tc, EV_COMPLETE, i
                    if self.deadline[i] < t_next:
                        t_next, ev, who = self.deadline[i], EV_ABANDON, i
                elif st == SEEDER:
                    if self.expiry[i] < t_next:
                        t_next, ev, who = self.expiry[i], EV_EXPIRE, i
            if t_next < self.t:
                t_next = self.t
            if t_next > t_stop:
                self._advance(t_stop, share)
                return
            self._advance(t_next, share)
            self.events += 1
            if ev == EV_ARRIVAL:
                self.next_arrival += 1
                self._arrive(who)
            elif ev == EV_COMPLETE:
                self.rem[who] = 0.0
                self._record(who, COMPLETED)
                self.n_leech -= 1
                if self.seed_time > 0.0:
                    self.state[who] = SEEDER
                    self.expiry[who] = self.t + self.seed_time
                    self.n_seed += 1
                else:
                    self._remove(who)
            elif ev == EV_ABANDON:
                self._record(who, ABANDONED)
                self.n_leech -= 1
                self._remove(who)
            elif ev == EV_EXPIRE:
                self.n_seed -= 1
                self._remove(who)

    def _advance(self, t_new, share):
        dt = t_new - self.t
        if dt > 0.0:
            for a in range(self.n_act):
                i = self.act[a]
                if self.state[i] == LEECHER:
                    self.rem[i] -= (self.rate[i] + share) * dt
            lo = self.t if self.t > self.warmup else self.warmup
            if t_new > lo:
                self.leech_integral += self.n_leech * (t_new - lo)
                self.seed_integral += self.n_seed * (t_new - lo)
        self.t = t_new

    # -- views ---------------------------------------------------------------

    def active_ids(self):
        return np.array(self.act[: self.n_act], dtype=np.int64)

    def server_share(self):
        if self.n_leech > 0 and self.server_total > 0:
            return self.server_total / self.n_leech
        return 0.0

    def records(self):
        k = self.n_rec
        return self.rec_id[:k].copy(), self.rec_t[:k].copy(), self.rec_kind[:k].copy()

    def neighbor_lists(self, i):
        """Indices of the peers i downloads from (test helper)."""
        if self.L == 0:
            return sorted(j for j, _ in self._range_neighbors(i))
        return sorted(int(v) for v in self.nbr[i, : self.ncount[i]])

    x_arr = property(lambda self: self.x)
    y_arr = property(lambda self: self.y)
    rem_arr = property(lambda self: self.rem)
    rate_arr = property(lambda self: self.rate)
    state_arr = property(lambda self: self.state)
    t_arr_arr = property(lambda self: self.t_arr)
    initial_arr = property(lambda self: self.initial)
    expiry_arr = property(lambda self: self.expiry)


def assign_chunks(indptr, indices, link, have, counts, need, chunk_key, edge_key, many_to_one,
                  out_rate, out_down, out_chunk, out_edge):
    """Match each downloader's links to wanted chunks for one time step.

    ``indptr/indices/link`` give, for downloader ``u``, its neighbors and the
    per-link rates.  ``have[v, c]`` flags possessed chunks and ``need[u, c]``
    wanted ones; ``counts[u, c]`` is the local copy count used by the
    rarest-first rule, with ``chunk_key`` (in [0, 1)) breaking ties.  In
    one-to-one mode each chunk, rarest first, takes the free holding link
    with the smallest ``edge_key`` (a random peer order).  Since chunks and
    links are each ranked the same way for every pair, this is the same
    matching as visiting links in ``edge_key`` order and giving each the
    rarest free chunk it holds.  In many-to-one mode every free holding link
    serves the chunk.  The per-(downloader, chunk) rate is accumulated in
    ``out_rate`` and the (downloader, chunk, link index) triples are written
    to the ``out_*`` arrays.  Returns the number of triples.
    """
    n, K = need.shape
    m = 0
    for u in range(n):
        lo, hi = indptr[u], indptr[u + 1]
        if lo == hi:
            continue
        wanted = np.flatnonzero(need[u])
        if len(wanted) == 0:
            continue
        used = np.zeros(hi - lo, dtype=np.uint8)
        nbrs = indices[lo:hi]
        # rarest first; chunk_key in [0, 1) orders chunks with equal counts
        key = counts[u, wanted] + chunk_key[u, wanted]
        order = wanted[np.argsort(key, kind="stable")]
        free = hi - lo
        for c in order:
            if free == 0:
                break
            if many_to_one:
                for e in range(hi - lo):
                    if not used[e] and have[nbrs[e], c]:
                        used[e] = 1
                        free -= 1
                        out_rate[u, c] += link[lo + e]
                        out_down[m], out_chunk[m], out_edge[m] = u, c, lo + e
                        m += 1
            else:
                best = -1
                bk = 2.0
                for e in range(hi - lo):
                    if not used[e] and have[nbrs[e], c] and edge_key[lo + e] < bk:
                        bk = edge_key[lo + e]
                        best = e
                if best >= 0:
                    used[best] = 1
                    free -= 1
                    out_rate[u, c] += link[lo + best]
                    out_down[m], out_chunk[m], out_edge[m] = u, c, lo + best
                    m += 1
    return m
