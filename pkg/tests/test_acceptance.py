"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line for its criterion, so that
``pytest -v -s tests/test_acceptance.py`` gives a readable summary.
Simulation runs are shared through module fixtures.
"""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

import superscale
from superscale import experiments as ex
from superscale.chunks import eta_many_to_one, eta_one_to_one_bound, ratio_matrix
from superscale.cli import main
from superscale.config import load_scenario
from superscale.fluid import ExtensionParams, abandonment, fluid_solution, heuristic_m, seeder_latency
from superscale.model import (
    Constant,
    SystemParams,
    TcpCapped,
    TcpLike,
    TcpOffset,
    TcpOverhead,
    WirelessSnr,
    strength,
)
from superscale.network import analytic_flow, empirical_flow
from superscale.sim.chunked import run_chunked
from superscale.sim.spatial import SimConfig, latency_distribution_check, run

SCENARIOS = Path(superscale.__file__).parent / "scenarios"


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


def tcp_params(n_f, **kw):
    """Range-1, C=1 system with fluid neighbor count ``n_f`` on a 10x10 torus."""
    return SystemParams(lam=2.0 / math.pi * n_f**2, file_size=1.0, rate=TcpLike(1.0), range=1.0, **kw)


# ---------------------------------------------------------------------------
# 1. strength closed forms
# ---------------------------------------------------------------------------


def quad_strength(f, R, breaks=()):
    hi = min(R, f.C / f.o) if isinstance(f, TcpOverhead) else R
    edges = [0.0] + sorted(b for b in breaks if 0 < b < hi) + [hi]
    g = lambda r: r * float(f.eval(r)) if r > 0 else 0.0
    total = sum(integrate.quad(g, a, b, epsabs=0.0, epsrel=1e-12, limit=500)[0] for a, b in zip(edges[:-1], edges[1:]))
    return 2 * math.pi * total


def draw_rates(rng):
    C, U, q, o, R = rng.uniform(0.05, 20.0, 5)
    alpha = rng.uniform(2.2, 8.0)
    Rw = math.inf if rng.random() < 0.3 else R
    return {
        "tcp": (TcpLike(C), R, ()),
        "constant": (Constant(U), R, ()),
        "capped": (TcpCapped(C, U), R, (C / U,)),
        "offset": (TcpOffset(C, q), R, ()),
        "overhead": (TcpOverhead(C, o), R, ()),
        "wireless": (WirelessSnr(C, alpha), Rw, (C ** (1 / alpha),)),
        "wireless-a4": (WirelessSnr(C, 4.0), R, (C**0.25,)),
    }


def test_c1_strength_closed_forms(capsys):
    rng = np.random.default_rng(2024)
    worst = {}
    for _ in range(100):
        for name, (f, R, br) in draw_rates(rng).items():
            exact = quad_strength(f, R, br)
            worst[name] = max(worst.get(name, 0.0), abs(strength(f, R) - exact) / exact)
    ok = all(v <= 1e-9 for v in worst.values())
    report(capsys, 1, ok, f"max rel. error over 100 draws per row {max(worst.values()):.1e} (tol 1e-9)")
    assert ok, worst


# ---------------------------------------------------------------------------
# 2. heuristic multiplier
# ---------------------------------------------------------------------------


def test_c2_heuristic_laws(capsys):
    grid = np.logspace(-3, 4, 400)
    m = np.array([heuristic_m(x) for x in grid])
    ge1 = bool(np.all(m >= 1.0))
    dec = bool(np.all(np.diff(m) < 0))
    top = heuristic_m(1e4)
    slope = heuristic_m(1e-3) * 1e-3
    ok = ge1 and dec and top < 1.01 and 0.9 <= slope <= 1.1
    report(capsys, 2, ok, f">=1 {ge1}, decreasing {dec}, M(1e4)={top:.5f}, M(1e-3)*1e-3={slope:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 3-6. event-driven simulation of the basic model
# ---------------------------------------------------------------------------

FIG2_N_F = (0.1, 1.0, 10.0, 40.0)


@pytest.fixture(scope="module")
def fig2_runs():
    t0 = time.perf_counter()
    runs = {n: run(SimConfig(tcp_params(n), seed=11, min_departures=20_000)) for n in FIG2_N_F}
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def superscaling_runs():
    # fluid regime: n_f 20 -> 40 is a fourfold load increase
    return {n: run(SimConfig(tcp_params(n), seed=21, min_departures=20_000)) for n in (20.0, 40.0)}


def test_c3_fig2_shape(capsys, fig2_runs):
    runs, elapsed = fig2_runs
    lines = []
    ok = elapsed <= 300
    for n, st in runs.items():
        m_hat = heuristic_m(n)
        ok &= st.departures >= 20_000 and st.m_emp + 2 * st.m_sigma >= 1.0
        if n >= 10:
            ok &= abs(st.m_emp - m_hat) / m_hat <= 0.15
        lines.append(f"N_f={n:g} m={st.m_emp:.3f}+-{st.m_sigma:.3f} M^={m_hat:.3f}")
    slope = runs[0.1].m_emp * 0.1
    ok &= 0.8 <= slope <= 1.5
    report(capsys, 3, ok, "; ".join(lines) + f"; m*N_f at 0.1 = {slope:.3f}; {elapsed:.1f}s")
    assert ok


def test_c4_superscaling(capsys, superscaling_runs):
    ratio = superscaling_runs[40.0].w_emp / superscaling_runs[20.0].w_emp
    ok = 0.45 <= ratio <= 0.55
    report(capsys, 4, ok, f"W(4 lambda)/W(lambda) = {ratio:.4f} at N_f 20 -> 40")
    assert ok


def test_c5_littles_law(capsys, fig2_runs, superscaling_runs):
    fluid = [st for n, st in fig2_runs[0].items() if n >= 20] + list(superscaling_runs.values())
    worst = max(st.little_residual for st in fluid)
    ok = worst <= 0.03
    report(capsys, 5, ok, f"max |beta - lambda W|/beta = {worst:.4f} over {len(fluid)} fluid runs")
    assert ok


def test_c6_exponential_latency(capsys, fig2_runs):
    ks = latency_distribution_check(fig2_runs[0][40.0])
    ok = ks.n >= 10_000 and ks.ks_distance <= 0.1
    report(capsys, 6, ok, f"KS distance {ks.ks_distance:.4f} with n={ks.n} at N_f=40")
    assert ok


# ---------------------------------------------------------------------------
# 7. chunk fixed point
# ---------------------------------------------------------------------------


def fixed_point_residual(p):
    K = p.K
    eta = np.asarray(p.eta_by_class)
    zz = 1.0 - ratio_matrix(K, cutoff=0.0).toarray()
    return float(np.max(np.abs(eta - zz @ (1.0 / eta) / K)))


def test_c7_chunk_fixed_point(capsys):
    two = eta_many_to_one(2)
    exact = (abs(two.eta_by_class[0] - 1.0) <= 1e-12 and abs(two.eta_by_class[1] - 0.5) <= 1e-12
             and abs(two.eta_harmonic - 2 / 3) <= 1e-12)
    Ks = list(range(2, 129)) + list(range(144, 1024, 16)) + [1024]
    profiles = [eta_many_to_one(K) for K in Ks]
    worst = max(fixed_point_residual(p) for p in profiles)
    monotone = bool(np.all(np.diff([p.eta_harmonic for p in profiles]) > 0))
    k_star = ex.eta_threshold(0.95)
    reached = k_star is not None and eta_many_to_one(k_star).eta_harmonic >= 0.95
    ok = exact and worst < 1e-10 and monotone and reached
    report(capsys, 7, ok, f"K=2 exact {exact}, max residual {worst:.1e} over {len(Ks)} K values, "
                          f"monotone {monotone}, eta >= 0.95 from K={k_star}")
    assert ok


# ---------------------------------------------------------------------------
# 8. chunk simulation
# ---------------------------------------------------------------------------


def test_c8_chunk_simulation(capsys):
    n_f = 40.0
    p = tcp_params(n_f, file_size_dist="constant")
    t0 = time.perf_counter()
    stats = {K: run_chunked(SimConfig(p, seed=3, min_departures=3000), K) for K in (10, 50, 200)}
    elapsed = time.perf_counter() - t0
    ok = elapsed <= 300
    lines = []
    for K, st in stats.items():
        bound = eta_one_to_one_bound(K, n_f).eta_harmonic
        ok &= bound <= st.eta_emp <= 1 + 2 * st.eta_sigma
        lines.append(f"K={K} eta={st.eta_emp:.3f}+-{st.eta_sigma:.3f} bound={bound:.3f}")
    etas = [st.eta_emp for st in stats.values()]
    ok &= etas[0] < etas[1] < etas[2]
    big = stats[200]
    gap = abs(big.copies_possessed_mean - big.copies_missing_mean) / big.copies_missing_mean
    ok &= gap <= 0.05
    report(capsys, 8, ok, "; ".join(lines) + f"; copies {big.copies_possessed_mean:.2f} vs "
                          f"{big.copies_missing_mean:.2f} (gap {gap:.1%}); {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 9. network flux
# ---------------------------------------------------------------------------


def test_c9_network_flux(capsys, superscaling_runs):
    closed = []
    for lam, F, R, C in [(1.0, 1.0, 1.0, 1.0), (7.3, 2.5, 0.6, 3.0), (250.0, 0.1, 4.0, 0.01)]:
        p = SystemParams(lam=lam, file_size=F, rate=TcpLike(C), range=R)
        closed.append(abs(analytic_flow(p) - lam * F * R / math.pi) / (lam * F * R / math.pi))
    base = SystemParams(lam=3.0, file_size=1.0, rate=TcpLike(1.0), range=1.0)
    scaled = [abs(analytic_flow(replace(base, rate=TcpLike(c))) / analytic_flow(base) - 1) for c in (1e-3, 0.5, 7.0, 1e4)]
    errs = []
    for n in (20.0, 40.0):
        p = tcp_params(n)
        st = run(SimConfig(p, seed=4, min_departures=5000, n_snapshots=50))
        emp = empirical_flow(st.snapshots, p.rate, p.range, n_segments=20, rng=np.random.default_rng(0), eps=p.eps_r)
        errs.append(abs(emp / analytic_flow(p) - 1))
    ok = max(closed) <= 1e-14 and max(scaled) <= 1e-12 and max(errs) <= 0.10
    report(capsys, 9, ok, f"closed form rel. err {max(closed):.1e}; C-scaling {max(scaled):.1e}; "
                          f"empirical flux errors {', '.join(f'{e:.1%}' for e in errs)} (50 snapshots, 20 segments)")
    assert ok


# ---------------------------------------------------------------------------
# 10. extensions
# ---------------------------------------------------------------------------


def test_c10a_seeders(capsys):
    p = tcp_params(40.0)
    w_f = fluid_solution(p).w_f
    st = run(SimConfig(p, seed=2, extensions=ExtensionParams(seed_time=w_f), min_departures=20_000))
    target = w_f * (math.sqrt(5) / 2 - 0.5)
    ok = abs(st.w_emp - target) / target <= 0.10 and abs(seeder_latency(w_f, w_f) - target) <= 1e-12 * w_f
    report(capsys, "10a", ok, f"W_emp/W_f = {st.w_emp / w_f:.4f} vs {target / w_f:.4f}")
    assert ok


def test_c10b_abandonment(capsys):
    p = tcp_params(40.0)
    a = math.sqrt(p.lam * p.file_size * strength(p.rate, p.range)) / p.file_size
    st = run(SimConfig(p, seed=3, extensions=ExtensionParams(abandonment_rate=a), min_departures=20_000))
    target = abandonment(p, a).abandonment_ratio
    ok = abs(st.abandonment_ratio - target) / target <= 0.10
    report(capsys, "10b", ok, f"abandonment ratio {st.abandonment_ratio:.4f} vs {target:.4f} "
                              f"({st.abandonment_count} abandonments)")
    assert ok


def test_c10c_degree_limited(capsys):
    sc = load_scenario(SCENARIOS / "superscaling.toml")
    rows = ex.superscaling_rows(sc)
    ratio = rows[-1]["W_ratio"]
    ok = 0.45 <= ratio <= 0.55
    report(capsys, "10c", ok, f"L=40 W(8 lambda)/W(lambda) = {ratio:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 11. determinism
# ---------------------------------------------------------------------------

CHUNK_SCENARIO = """\
[model]
lambda = 63.66197723675813
file_size = 1.0
range = 1.0
file_size_dist = "constant"

[rate]
kind = "tcp"
C = 1.0

[sim]
min_departures = 500

[chunks]
K = 10

[run]
name = "chunks_small"
replications = 2
"""


def test_c11_determinism(capsys, tmp_path):
    basic = str(SCENARIOS / "basic.toml")
    small = tmp_path / "chunks_small.toml"
    small.write_text(CHUNK_SCENARIO)
    commands = [
        ["fluid", "--config", basic],
        ["simulate", "--config", basic],
        ["netload", "--config", basic, "--analytic-only"],
        ["feasibility", "--config", basic],
        ["simulate-chunks", "--config", str(small)],
        ["chunk-eta", "--K", "2,10,50"],
    ]
    same = []
    for cmd in commands:
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / rep / cmd[0]
            assert main(cmd + ["--out", str(out)]) == 0
            outs.append(b"".join(f.read_bytes() for f in sorted(out.glob("*.csv"))))
        same.append(outs[0] == outs[1] and len(outs[0]) > 0)
    ok = all(same)
    report(capsys, 11, ok, f"byte-identical reruns for {sum(same)}/{len(same)} commands")
    assert ok
