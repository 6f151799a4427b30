"""Compare the compiled and pure-Python simulation kernels.

Run with ``python benchmarks/bench_kernels.py``.  Each case is timed for
both backends on identical inputs and the outputs are checked to agree.
"""

import argparse
import math
import time

import numpy as np

from superscale.model import SystemParams, TcpLike
from superscale.sim import compiled_available, get_core
from superscale.sim.spatial import SimConfig, run


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def event_case(backend, n_f, departures):
    p = SystemParams(lam=2.0 / math.pi * n_f**2, file_size=1.0, rate=TcpLike(1.0), range=1.0)
    return run(SimConfig(p, seed=0, min_departures=departures, backend=backend))


def assignment_problem(seed, n=2000, K=200, deg=40):
    rng = np.random.default_rng(seed)
    N = n + n // 100
    counts_deg = rng.integers(deg // 2, deg + 1, n)
    indptr = np.concatenate([[0], np.cumsum(counts_deg)]).astype(np.int64)
    indices = rng.integers(0, N, indptr[-1]).astype(np.int64)
    link = rng.uniform(0.5, 2.0, indptr[-1])
    have = (rng.random((N, K)) < 0.5).astype(np.uint8)
    need = np.ascontiguousarray(1 - have[:n])
    counts = np.zeros((n, K))
    for u in range(n):
        counts[u] = have[indices[indptr[u]:indptr[u + 1]]].sum(axis=0)
    return indptr, indices, link, have, counts, need, rng.random((n, K)), rng.random(indptr[-1])


def assign_case(backend, prob, many):
    core = get_core(backend)
    indptr, indices, link, have, counts, need, ck, ek = prob
    n, K = need.shape
    m_max = len(indices)
    rate = np.zeros((n, K))
    down, chunk, edge = (np.empty(m_max, np.int64) for _ in range(3))
    m = core.assign_chunks(indptr, indices, link, have, counts, need, ck, ek, many, rate, down, chunk, edge)
    return m, rate


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--departures", type=int, default=2000)
    args = ap.parse_args(argv)
    if not compiled_available():
        print("compiled kernel not built; only the Python backend is available")
    backends = ["python"] + (["compiled"] if compiled_available() else [])

    print(f"{'case':<36}{'backend':<10}{'seconds':>10}{'speedup':>10}")
    cases = [(f"event sim N_f={n_f:g}, {args.departures} dep.",
              lambda b, n_f=n_f: event_case(b, n_f, args.departures),
              lambda s: s.latency_samples.tobytes())
             for n_f in (5.0, 20.0)]
    prob = assignment_problem(0)
    for many in (False, True):
        label = "many-to-one" if many else "one-to-one"
        cases.append((f"chunk assignment {label}", lambda b, many=many: assign_case(b, prob, many),
                      lambda r: (r[0], r[1].tobytes())))

    for name, fn, key in cases:
        base, ref = None, None
        for b in backends:
            t, out = best_of(lambda: fn(b), args.repeat)
            if ref is None:
                base, ref = t, key(out)
            elif key(out) != ref:
                raise SystemExit(f"{name}: backends disagree")
            print(f"{name:<36}{b:<10}{t:>10.3f}{base / t:>9.1f}x")


if __name__ == "__main__":
    main()
