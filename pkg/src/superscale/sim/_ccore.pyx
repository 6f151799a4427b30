# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels; see ``_pycore.py`` for the reference version."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, floor, log1p, pow, INFINITY
from libc.stdlib cimport qsort, malloc, free

cnp.import_array()

DEF LEECHER = 1
DEF SEEDER = 2
DEF GONE = 3
DEF COMPLETED = 0
DEF ABANDONED = 1
DEF EV_NONE = 0
DEF EV_ARRIVAL = 1
DEF EV_COMPLETE = 2
DEF EV_ABANDON = 3
DEF EV_EXPIRE = 4


cdef inline double _link_rate(int kind, double p1, double p2, double p3, double d, double eps) noexcept nogil:
    cdef double v
    if d < eps:
        d = eps
    if kind == 0:
        return p1 / d
    elif kind == 1:
        return p1
    elif kind == 2:
        v = p1 / d
        return v if v < p2 else p2
    elif kind == 3:
        return p1 / (d + p2)
    elif kind == 4:
        v = p1 / d - p2
        return v if v > 0.0 else 0.0
    else:
        return 0.5 * p3 * log1p(p1 * pow(d, -p2))


def link_rate(int kind, double p1, double p2, double p3, double d, double eps):
    if kind < 0 or kind > 5:
        raise ValueError(f"unknown rate kind {kind}")
    return _link_rate(kind, p1, p2, p3, d, eps)


cdef class EventCore:
    """Exact event-driven spatial birth-death dynamics (compiled)."""

    cdef public double side, half, R, p1, p2, p3, eps, seed_time, server_total, warmup
    cdef public double t, leech_integral, seed_integral
    cdef public int kind, L, g
    cdef public long n, n_act, n_leech, n_seed, next_arrival, n_rec, events
    cdef public double cell_w

    cdef double[::1] t_arr, x, y, rem, deadline, rate, expiry, rec_t
    cdef unsigned char[::1] initial_
    cdef long[::1] nb, act, pos, cell, head, nxt, prv, rec_id, ncount, kth
    cdef signed char[::1] state, rec_kind
    cdef long[:, ::1] nbr
    cdef double[:, ::1] nbd
    cdef object _keep

    def __init__(self, double side, double R, int kind, double p1, double p2, double p3, double eps,
                 int L, double seed_time, double server_density, double warmup,
                 t_arr, x, y, size, deadline, initial):
        self.side = side
        self.half = 0.5 * side
        self.R = R
        self.kind = kind
        self.p1 = p1
        self.p2 = p2
        self.p3 = p3
        self.eps = eps
        self.L = L
        self.seed_time = seed_time
        self.server_total = server_density * side * side
        self.warmup = warmup

        a_t = np.ascontiguousarray(t_arr, dtype=np.float64)
        a_x = np.ascontiguousarray(x, dtype=np.float64)
        a_y = np.ascontiguousarray(y, dtype=np.float64)
        a_rem = np.array(size, dtype=np.float64)
        a_dl = np.ascontiguousarray(deadline, dtype=np.float64)
        a_in = np.ascontiguousarray(initial, dtype=np.uint8)
        self._keep = (a_t, a_x, a_y, a_rem, a_dl, a_in)
        self.t_arr = a_t
        self.x = a_x
        self.y = a_y
        self.rem = a_rem
        self.deadline = a_dl
        self.initial_ = a_in
        cdef long n = a_t.shape[0]
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

        cdef int g = 1
        if L == 0 and R > 0:
            g = <int>floor(side / R)
        if g < 3:
            g = 1
        self.g = g
        self.cell_w = side / g
        self.cell = np.full(n, -1, dtype=np.int64)
        self.head = np.full(g * g, -1, dtype=np.int64)
        self.nxt = np.full(n, -1, dtype=np.int64)
        self.prv = np.full(n, -1, dtype=np.int64)
        if L > 0:
            self.nbr = np.full((n, L), -1, dtype=np.int64)
            self.nbd = np.zeros((n, L))
            self.ncount = np.zeros(n, dtype=np.int64)
            self.kth = np.zeros(n, dtype=np.int64)
        else:
            self.nbr = np.zeros((1, 1), dtype=np.int64)
            self.nbd = np.zeros((1, 1))
            self.ncount = np.zeros(1, dtype=np.int64)
            self.kth = np.zeros(1, dtype=np.int64)

    # -- geometry -----------------------------------------------------------

    cdef inline double _dist(self, long i, long j) noexcept nogil:
        cdef double dx = fabs(self.x[i] - self.x[j])
        cdef double dy
        if dx > self.half:
            dx = self.side - dx
        dy = fabs(self.y[i] - self.y[j])
        if dy > self.half:
            dy = self.side - dy
        return sqrt(dx * dx + dy * dy)

    def dist(self, long i, long j):
        return self._dist(i, j)

    cdef inline double _f(self, double d) noexcept nogil:
        return _link_rate(self.kind, self.p1, self.p2, self.p3, d, self.eps)

    def f(self, double d):
        return self._f(d)

    cdef inline long _cell_of(self, long i) noexcept nogil:
        cdef int g = self.g
        cdef long cx = <long>(self.x[i] / self.cell_w)
        cdef long cy = <long>(self.y[i] / self.cell_w)
        if cx >= g:
            cx = g - 1
        if cy >= g:
            cy = g - 1
        return cx * g + cy

    cdef void _grid_insert(self, long i) noexcept nogil:
        cdef long c = self._cell_of(i)
        cdef long h = self.head[c]
        self.cell[i] = c
        self.nxt[i] = h
        self.prv[i] = -1
        if h >= 0:
            self.prv[h] = i
        self.head[c] = i

    cdef void _grid_remove(self, long i) noexcept nogil:
        cdef long c = self.cell[i]
        cdef long p = self.prv[i]
        cdef long q = self.nxt[i]
        if p >= 0:
            self.nxt[p] = q
        else:
            self.head[c] = q
        if q >= 0:
            self.prv[q] = p
        self.cell[i] = -1

    cdef int _cells(self, long i, long* out) noexcept nogil:
        cdef int g = self.g
        cdef long c, cx, cy
        cdef int ox, oy, k = 0
        if g == 1:
            out[0] = 0
            return 1
        c = self.cell[i]
        cx = c // g
        cy = c % g
        for ox in range(-1, 2):
            for oy in range(-1, 2):
                out[k] = ((cx + ox + g) % g) * g + (cy + oy + g) % g
                k += 1
        return k

    # -- active set ---------------------------------------------------------

    cdef inline void _activate(self, long i) noexcept nogil:
        self.pos[i] = self.n_act
        self.act[self.n_act] = i
        self.n_act += 1

    cdef inline void _deactivate(self, long i) noexcept nogil:
        cdef long k = self.pos[i]
        cdef long last = self.act[self.n_act - 1]
        self.act[k] = last
        self.pos[last] = k
        self.n_act -= 1
        self.pos[i] = -1

    # -- L-nearest bookkeeping -----------------------------------------------

    cdef void _knn_refresh_kth(self, long i) noexcept nogil:
        cdef long best = 0
        cdef long c = self.ncount[i]
        cdef long s
        for s in range(1, c):
            if self.nbd[i, s] > self.nbd[i, best] or (self.nbd[i, s] == self.nbd[i, best] and self.nbr[i, s] > self.nbr[i, best]):
                best = s
        self.kth[i] = best

    cdef void _knn_offer(self, long i, long j, double d) noexcept nogil:
        cdef long c = self.ncount[i]
        cdef long k
        cdef double dk
        if c < self.L:
            self.nbr[i, c] = j
            self.nbd[i, c] = d
            self.ncount[i] = c + 1
            self.rate[i] += self._f(d)
            self._knn_refresh_kth(i)
            return
        k = self.kth[i]
        dk = self.nbd[i, k]
        if d < dk or (d == dk and j < self.nbr[i, k]):
            self.rate[i] += self._f(d) - self._f(dk)
            self.nbr[i, k] = j
            self.nbd[i, k] = d
            self._knn_refresh_kth(i)

    cdef void _knn_build(self, long z) noexcept nogil:
        cdef long a, j
        for a in range(self.n_act):
            j = self.act[a]
            if j != z:
                self._knn_offer(z, j, self._dist(z, j))

    cdef void _knn_drop(self, long i, long y) noexcept nogil:
        cdef long c = self.ncount[i]
        cdef long slot = -1
        cdef long s, k, idk, last, a, j, best
        cdef double dk, d, bd
        for s in range(c):
            if self.nbr[i, s] == y:
                slot = s
                break
        if slot < 0:
            return
        k = self.kth[i]
        dk = self.nbd[i, k]
        idk = self.nbr[i, k]
        self.rate[i] -= self._f(self.nbd[i, slot])
        last = c - 1
        self.nbr[i, slot] = self.nbr[i, last]
        self.nbd[i, slot] = self.nbd[i, last]
        self.nbr[i, last] = -1
        self.ncount[i] = last
        best = -1
        bd = INFINITY
        for a in range(self.n_act):
            j = self.act[a]
            if j == i or j == y:
                continue
            d = self._dist(i, j)
            if d < dk or (d == dk and j <= idk):
                continue
            if d < bd or (d == bd and j < best):
                best = j
                bd = d
        if best >= 0:
            self.nbr[i, last] = best
            self.nbd[i, last] = bd
            self.ncount[i] = last + 1
            self.rate[i] += self._f(bd)
        if self.ncount[i] == 0:
            self.rate[i] = 0.0
        self._knn_refresh_kth(i)

    # -- events ---------------------------------------------------------------

    cdef void _arrive(self, long z) noexcept nogil:
        cdef long cells[9]
        cdef int nc, ci
        cdef long j, a, cnt = 0
        cdef double d, v, acc = 0.0
        self.state[z] = LEECHER
        self.n_leech += 1
        if self.L == 0:
            self._grid_insert(z)
            nc = self._cells(z, cells)
            for ci in range(nc):
                j = self.head[cells[ci]]
                while j >= 0:
                    if j != z:
                        d = self._dist(z, j)
                        if d <= self.R:
                            v = self._f(d)
                            acc += v
                            cnt += 1
                            self.rate[j] += v
                            self.nb[j] += 1
                    j = self.nxt[j]
            self.rate[z] = acc
            self.nb[z] = cnt
            self._activate(z)
        else:
            for a in range(self.n_act):
                j = self.act[a]
                self._knn_offer(j, z, self._dist(j, z))
            self._activate(z)
            self._knn_build(z)

    cdef void _remove(self, long i) noexcept nogil:
        cdef long cells[9]
        cdef int nc, ci
        cdef long j, a
        cdef double d
        self._deactivate(i)
        self.state[i] = GONE
        if self.L == 0:
            nc = self._cells(i, cells)
            for ci in range(nc):
                j = self.head[cells[ci]]
                while j >= 0:
                    if j != i:
                        d = self._dist(i, j)
                        if d <= self.R:
                            self.nb[j] -= 1
                            if self.nb[j] == 0:
                                self.rate[j] = 0.0
                            else:
                                self.rate[j] -= self._f(d)
                    j = self.nxt[j]
            self._grid_remove(i)
        else:
            for a in range(self.n_act):
                j = self.act[a]
                if self.ncount[j] == 0:
                    continue
                d = self._dist(i, j)
                if d <= self.nbd[j, self.kth[j]]:
                    self._knn_drop(j, i)
        self.rate[i] = 0.0

    cdef inline void _record(self, long i, int kind) noexcept nogil:
        self.rec_id[self.n_rec] = i
        self.rec_t[self.n_rec] = self.t
        self.rec_kind[self.n_rec] = kind
        self.n_rec += 1

    cdef void _advance(self, double t_new, double share) noexcept nogil:
        cdef double dt = t_new - self.t
        cdef double lo
        cdef long a, i
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

    def run_until(self, double t_stop):
        """Advance the dynamics to ``t_stop``."""
        with nogil:
            self._run(t_stop)

    cdef void _run(self, double t_stop) noexcept nogil:
        cdef double share, t_next, r, tc
        cdef int ev
        cdef long who, a, i
        cdef signed char st
        while True:
            if self.n_leech > 0 and self.server_total > 0:
                share = self.server_total / self.n_leech
            else:
                share = 0.0
            t_next = INFINITY
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
                            t_next = tc
                            ev = EV_COMPLETE
                            who = i
                    if self.deadline[i] < t_next:
                        t_next = self.deadline[i]
                        ev = EV_ABANDON
                        who = i
                elif st == SEEDER:
                    if self.expiry[i] < t_next:
                        t_next = self.expiry[i]
                        ev = EV_EXPIRE
                        who = i
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

    # -- views -----------------------------------------------------------------

    def active_ids(self):
        return np.asarray(self.act[: self.n_act]).copy()

    def server_share(self):
        if self.n_leech > 0 and self.server_total > 0:
            return self.server_total / self.n_leech
        return 0.0

    def records(self):
        cdef long k = self.n_rec
        return (np.asarray(self.rec_id[:k]).copy(), np.asarray(self.rec_t[:k]).copy(),
                np.asarray(self.rec_kind[:k]).copy())

    def neighbor_lists(self, long i):
        cdef long cells[9]
        cdef int nc, ci
        cdef long j
        out = []
        if self.L == 0:
            nc = self._cells(i, cells)
            for ci in range(nc):
                j = self.head[cells[ci]]
                while j >= 0:
                    if j != i and self._dist(i, j) <= self.R:
                        out.append(j)
                    j = self.nxt[j]
            return sorted(out)
        return sorted(int(self.nbr[i, s]) for s in range(self.ncount[i]))

    @property
    def x_arr(self):
        return np.asarray(self.x)

    @property
    def y_arr(self):
        return np.asarray(self.y)

    @property
    def rem_arr(self):
        return np.asarray(self.rem)

    @property
    def rate_arr(self):
        return np.asarray(self.rate)

    @property
    def state_arr(self):
        return np.asarray(self.state)

    @property
    def t_arr_arr(self):
        return np.asarray(self.t_arr)

    @property
    def initial_arr(self):
        return np.asarray(self.initial_)

    @property
    def expiry_arr(self):
        return np.asarray(self.expiry)


ctypedef struct KeyIdx:
    double key
    long idx


cdef int _cmp_key(const void* a, const void* b) noexcept nogil:
    cdef double ka = (<KeyIdx*>a).key
    cdef double kb = (<KeyIdx*>b).key
    if ka < kb:
        return -1
    if ka > kb:
        return 1
    cdef long ia = (<KeyIdx*>a).idx
    cdef long ib = (<KeyIdx*>b).idx
    return (ia > ib) - (ia < ib)


def assign_chunks(const long[::1] indptr, const long[::1] indices, const double[::1] link,
                  const unsigned char[:, ::1] have, const double[:, ::1] counts,
                  const unsigned char[:, ::1] need, const double[:, ::1] chunk_key,
                  const double[::1] edge_key, bint many_to_one,
                  double[:, ::1] out_rate, long[::1] out_down, long[::1] out_chunk, long[::1] out_edge):
    """Compiled twin of ``_pycore.assign_chunks``."""
    cdef long n = need.shape[0]
    cdef long K = need.shape[1]
    cdef long m = 0
    cdef long u, lo, hi, e, c, nw, w, best, free_, deg, maxdeg = 1
    cdef double bk
    for u in range(n):
        if indptr[u + 1] - indptr[u] > maxdeg:
            maxdeg = indptr[u + 1] - indptr[u]
    cdef KeyIdx* order = <KeyIdx*>malloc(K * sizeof(KeyIdx))
    cdef unsigned char* used = <unsigned char*>malloc(maxdeg * sizeof(unsigned char))
    if order == NULL or used == NULL:
        free(order)
        free(used)
        raise MemoryError()
    try:
        with nogil:
            for u in range(n):
                lo = indptr[u]
                hi = indptr[u + 1]
                if lo == hi:
                    continue
                nw = 0
                for c in range(K):
                    if need[u, c]:
                        order[nw].key = counts[u, c] + chunk_key[u, c]
                        order[nw].idx = c
                        nw += 1
                if nw == 0:
                    continue
                qsort(order, nw, sizeof(KeyIdx), _cmp_key)
                deg = hi - lo
                for e in range(deg):
                    used[e] = 0
                free_ = deg
                for w in range(nw):
                    if free_ == 0:
                        break
                    c = order[w].idx
                    if many_to_one:
                        for e in range(deg):
                            if not used[e] and have[indices[lo + e], c]:
                                used[e] = 1
                                free_ -= 1
                                out_rate[u, c] += link[lo + e]
                                out_down[m] = u
                                out_chunk[m] = c
                                out_edge[m] = lo + e
                                m += 1
                    else:
                        best = -1
                        bk = 2.0
                        for e in range(deg):
                            if not used[e] and have[indices[lo + e], c] and edge_key[lo + e] < bk:
                                bk = edge_key[lo + e]
                                best = e
                        if best >= 0:
                            used[best] = 1
                            free_ -= 1
                            out_rate[u, c] += link[lo + best]
                            out_down[m] = u
                            out_chunk[m] = c
                            out_edge[m] = lo + best
                            m += 1
    finally:
        free(order)
        free(used)
    return m
