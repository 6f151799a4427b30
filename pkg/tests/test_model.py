import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from superscale.model import (
    Constant,
    DivergenceError,
    KNearest,
    Range,
    SystemParams,
    TcpCapped,
    TcpLike,
    TcpOffset,
    TcpOverhead,
    WirelessSnr,
    dimensionless,
    eval_rate,
    first_moment,
    rate_from_name,
    rescale_units,
    second_moment,
    strength,
    torus_distance,
    typical_range,
)


def quad_strength(f, R):
    """Independent oracle: plain scipy quad with explicit break points."""
    pts = [p for p in getattr(f, "_test_breaks", []) if 0 < p < R]
    hi = min(R, f.C / f.o) if isinstance(f, TcpOverhead) else R
    g = lambda r: r * float(f.eval(r)) if r > 0 else 0.0
    edges = [0.0] + sorted(p for p in pts if p < hi) + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += integrate.quad(g, a, b, epsabs=0.0, epsrel=1e-12, limit=500)[0]
    return 2 * math.pi * total


def with_breaks(f, *pts):
    object.__setattr__(f, "_test_breaks", list(pts))
    return f


# ---------------------------------------------------------------------------
# torus distance
# ---------------------------------------------------------------------------


def test_torus_distance_examples():
    assert torus_distance((2.0, 3.0), (2.0, 3.0), 10.0) == 0.0
    assert torus_distance((0.0, 0.0), (9.0, 0.0), 10.0) == pytest.approx(1.0, abs=1e-12)
    assert torus_distance((1.0, 1.0), (4.0, 5.0), 10.0) == pytest.approx(5.0, abs=1e-12)


def test_torus_distance_matches_nine_image_minimum():
    rng = np.random.default_rng(4)
    side = 7.0
    a = rng.uniform(0, side, (500, 2))
    b = rng.uniform(0, side, (500, 2))
    shifts = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]) * side
    brute = np.min(np.linalg.norm(b[:, None, :] + shifts[None] - a[:, None, :], axis=2), axis=1)
    np.testing.assert_allclose(torus_distance(a, b, side), brute, rtol=1e-12)


@given(st.lists(st.tuples(st.floats(0, 9.999), st.floats(0, 9.999)), min_size=3, max_size=3))
def test_torus_distance_metric_properties(pts):
    a, b, c = pts
    side = 10.0
    dab = torus_distance(a, b, side)
    assert dab == pytest.approx(torus_distance(b, a, side), abs=1e-12)
    assert dab <= side * math.sqrt(2) / 2 + 1e-12
    assert dab <= torus_distance(a, c, side) + torus_distance(c, b, side) + 1e-9


# ---------------------------------------------------------------------------
# rate functions
# ---------------------------------------------------------------------------


def test_eval_rate_examples():
    assert eval_rate(TcpLike(2.0), 4.0) == pytest.approx(0.5)
    assert eval_rate(TcpCapped(1.0, 2.0), 0.25) == pytest.approx(2.0)
    assert eval_rate(WirelessSnr(1.0, 4.0), 1.0) == pytest.approx(0.5 * math.log(2.0))
    assert eval_rate(TcpOverhead(1.0, 2.0), 1.0) == 0.0


def test_eval_rate_clamps_singular_origin():
    f = TcpLike(1.0)
    assert eval_rate(f, 0.0, eps=1e-6) == pytest.approx(1e6)
    with pytest.raises(ValueError):
        eval_rate(f, 0.0)


def test_strength_examples():
    assert strength(TcpLike(1.0), 1.0) == pytest.approx(2 * math.pi, rel=1e-14)
    assert strength(Constant(1.0), 1.0) == pytest.approx(math.pi, rel=1e-14)
    assert strength(WirelessSnr(1.0, 4.0), math.inf) == pytest.approx(math.pi**2 / 2, rel=1e-12)


def test_strength_diverges_for_unbounded_tcp():
    with pytest.raises(DivergenceError):
        strength(TcpLike(1.0), math.inf)
    with pytest.raises(DivergenceError):
        strength(WirelessSnr(1.0, 2.0), math.inf)


pos = st.floats(0.05, 20.0)


@settings(max_examples=100, deadline=None)
@given(C=pos, R=pos)
def test_strength_tcp_matches_quadrature(C, R):
    f = TcpLike(C)
    assert strength(f, R) == pytest.approx(quad_strength(f, R), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(U=pos, R=pos)
def test_strength_constant_matches_quadrature(U, R):
    f = Constant(U)
    assert strength(f, R) == pytest.approx(quad_strength(f, R), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(C=pos, U=pos, R=pos)
def test_strength_capped_matches_quadrature(C, U, R):
    f = with_breaks(TcpCapped(C, U), C / U)
    assert strength(f, R) == pytest.approx(quad_strength(f, R), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(C=pos, q=pos, R=pos)
def test_strength_offset_matches_quadrature(C, q, R):
    f = TcpOffset(C, q)
    assert strength(f, R) == pytest.approx(quad_strength(f, R), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(C=pos, o=pos, R=pos)
def test_strength_overhead_matches_quadrature(C, o, R):
    f = TcpOverhead(C, o)
    assert strength(f, R) == pytest.approx(quad_strength(f, R), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(C=pos, alpha=st.floats(2.2, 8.0), R=st.one_of(pos, st.just(math.inf)))
def test_strength_wireless_matches_quadrature(C, alpha, R):
    f = with_breaks(WirelessSnr(C, alpha), C ** (1 / alpha))
    if math.isinf(R):
        s = C ** (1 / alpha)
        g = lambda r: r * float(f.eval(r)) if r > 0 else 0.0
        oracle = 2 * math.pi * (integrate.quad(g, 0, s, epsrel=1e-12, limit=500)[0]
                                + integrate.quad(g, s, math.inf, epsrel=1e-12, limit=500)[0])
    else:
        oracle = quad_strength(f, R)
    assert strength(f, R) == pytest.approx(oracle, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(C=pos, R=pos)
def test_strength_wireless_alpha4_closed_form(C, R):
    f = with_breaks(WirelessSnr(C, 4.0), C**0.25)
    assert strength(f, R) == pytest.approx(quad_strength(f, R), rel=1e-9)


def test_typical_range_examples():
    for C, R in [(1.0, 1.0), (3.0, 7.5)]:
        assert typical_range(TcpLike(C), R) == pytest.approx(R / 2, rel=1e-12)
        assert typical_range(Constant(C), R) == pytest.approx(2 * R / 3, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(C=pos, U=pos, q=pos, R=pos)
def test_typical_range_within_range(C, U, q, R):
    for f in (TcpLike(C), Constant(U), TcpCapped(C, U), TcpOffset(C, q), TcpOverhead(C, U)):
        assert 0 < typical_range(f, R) <= R * (1 + 1e-12)


def test_typical_range_matches_quadrature():
    f = TcpOffset(2.0, 0.3)
    R = 4.0
    m1 = integrate.quad(lambda r: r * f.eval(r), 0, R, epsrel=1e-13)[0]
    m2 = integrate.quad(lambda r: r * r * f.eval(r), 0, R, epsrel=1e-13)[0]
    assert first_moment(f, R) == pytest.approx(m1, rel=1e-9)
    assert second_moment(f, R) == pytest.approx(m2, rel=1e-9)
    assert typical_range(f, R) == pytest.approx(m2 / m1, rel=1e-9)


def test_typical_range_reports_infinite_traffic():
    with pytest.raises(DivergenceError, match="traffic load intensity is infinite"):
        typical_range(WirelessSnr(1.0, 3.0), math.inf)


def test_capped_rate_normalizes_to_constant_when_cap_binds_everywhere():
    p = SystemParams(lam=1.0, file_size=1.0, rate=TcpCapped(5.0, 2.0), range=1.0)
    assert isinstance(p.rate, Constant) and p.rate.U == 2.0


def test_rate_from_name():
    assert rate_from_name("tcp", C=2) == TcpLike(2.0)
    assert rate_from_name("wireless", C=1, alpha=4) == WirelessSnr(1.0, 4.0)
    with pytest.raises(ValueError):
        rate_from_name("tcp", U=1)
    with pytest.raises(ValueError):
        rate_from_name("udp", U=1)


# ---------------------------------------------------------------------------
# parameters and units
# ---------------------------------------------------------------------------


def test_system_params_defaults_and_validation():
    p = SystemParams(lam=1.0, file_size=1.0, rate=TcpLike(1.0), range=2.0)
    assert p.torus_side == 20.0
    with pytest.raises(ValueError):
        SystemParams(lam=1.0, file_size=1.0, rate=TcpLike(1.0), range=2.0, torus_side=10.0)
    with pytest.raises(ValueError):
        SystemParams(lam=0.0, file_size=1.0, rate=TcpLike(1.0))
    with pytest.raises(ValueError):
        SystemParams(lam=1.0, file_size=1.0, rate=TcpLike(1.0), file_size_dist="pareto")


def test_dimensionless_examples():
    p = SystemParams(lam=1.0, file_size=1.0, rate=TcpLike(1.0), range=1.0)
    assert dimensionless(p).rho == pytest.approx(1.0)
    p = SystemParams(lam=2.0, file_size=3.0, rate=TcpLike(4.0), range=2.0)
    assert dimensionless(p).rho == pytest.approx(12.0)
    p = SystemParams(lam=2 / math.pi, file_size=1.0, rate=TcpLike(1.0), range=1.0)
    ds = dimensionless(p)
    assert ds.n_f == pytest.approx(1.0, rel=1e-14)
    beta_f = math.sqrt(p.lam * p.file_size / strength(p.rate, 1.0))
    assert math.pi * beta_f == pytest.approx(ds.n_f, rel=1e-14)


def test_dimensionless_non_basic_has_no_rho():
    p = SystemParams(lam=1.0, file_size=1.0, rate=Constant(1.0), range=1.0)
    ds = dimensionless(p)
    assert ds.rho is None
    assert ds.n_f == pytest.approx(math.pi * math.sqrt(1 / math.pi))


def test_rescale_units_examples():
    p = SystemParams(lam=1.0, file_size=1.0, rate=TcpLike(1.0), range=1.0)
    assert rescale_units(p, 1, 1, 1) == p
    q = rescale_units(p, 2.0, 1.0, 1.0)
    assert (q.lam, q.file_size, q.range, q.rate.C) == (0.25, 1.0, 2.0, 2.0)
    assert dimensionless(q).rho == pytest.approx(1.0, rel=1e-14)


@settings(max_examples=1000, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_rescale_units_leaves_dimensionless_state_invariant(m, b, s):
    p = SystemParams(lam=3.0, file_size=2.0, rate=TcpLike(0.7), range=1.5)
    a, z = dimensionless(p), dimensionless(rescale_units(p, m, b, s))
    assert z.rho == pytest.approx(a.rho, rel=1e-12)
    assert z.n_f == pytest.approx(a.n_f, rel=1e-12)


def test_policies():
    assert Range(2.0).reach() == 2.0
    L = KNearest(40)
    assert math.pi * L.reach(3.0) ** 2 * 3.0 == pytest.approx(40.0)
    with pytest.raises(ValueError):
        KNearest(0)
