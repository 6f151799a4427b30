"""Peer-to-peer traffic load on the underlying network.

Traffic between two linked peers is routed along the straight segment that
joins them, so the mean flux through a cut of unit length follows from the
first two moments of the rate function.  A router network of intensity
``theta`` with link capacity ``E`` sustains a flux ``2 sqrt(theta) E``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .fluid import fluid_solution
from .model import DivergenceError, SystemParams, eval_rate, first_moment, second_moment

__all__ = [
    "NetworkParams",
    "FlowReport",
    "NETWORK_CSV_COLUMNS",
    "analytic_flow",
    "analytic_flow_moment_form",
    "capacity",
    "feasibility",
    "conclusion_margin",
    "empirical_flow",
    "segment_crossings",
    "poisson_snapshot",
    "flow_row",
]

NETWORK_CSV_COLUMNS = ("lambda", "psi_analytic", "psi_emp", "xi", "feasible", "headroom")


@dataclass(frozen=True)
class NetworkParams:
    """Router intensity ``theta`` (m^-2) and per-link capacity ``E`` (bits/s)."""

    theta: float
    E: float

    def __post_init__(self):
        for name in ("theta", "E"):
            v = getattr(self, name)
            if not (v > 0) or math.isinf(v):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")


@dataclass(frozen=True)
class FlowReport:
    psi: float
    xi: float
    feasible: bool
    headroom: float


def _moments(params: SystemParams) -> tuple[float, float]:
    if params.range is None:
        raise ValueError("traffic flux needs a range")
    try:
        m1 = first_moment(params.rate, params.range)
        m2 = second_moment(params.rate, params.range)
    except DivergenceError as exc:
        raise DivergenceError(
            "flux is ill-defined with respect to the underlying, capacity-limited, network: "
            "the second moment of the rate function diverges"
        ) from exc
    if not (math.isfinite(m1) and math.isfinite(m2)):
        raise DivergenceError(
            "flux is ill-defined with respect to the underlying, capacity-limited, network"
        )
    return m1, m2


def analytic_flow(params: SystemParams) -> float:
    """Mean flux ``(2/pi) lam F (int r^2 f) / (int r f)`` in the fluid regime."""
    m1, m2 = _moments(params)
    return 2.0 / math.pi * params.lam * params.file_size * m2 / m1


def analytic_flow_moment_form(params: SystemParams) -> float:
    """The same flux written as ``4 beta_f^2 int r^2 f``."""
    _, m2 = _moments(params)
    beta = fluid_solution(params).beta_f
    return 4.0 * beta * beta * m2


def capacity(network: NetworkParams) -> float:
    """Sustainable flux ``2 sqrt(theta) E``."""
    return 2.0 * math.sqrt(network.theta) * network.E


def feasibility(params: SystemParams, network: NetworkParams) -> FlowReport:
    """Compare the P2P flux with the network capacity; ``headroom = xi / psi``."""
    psi = analytic_flow(params)
    xi = capacity(network)
    return FlowReport(psi=psi, xi=xi, feasible=psi < xi, headroom=xi / psi if psi > 0 else math.inf)


def conclusion_margin(params: SystemParams, network: NetworkParams) -> float:
    """``E sqrt(theta) - (2 lam F / gamma) int r^2 f``; positive iff the network copes."""
    _, m2 = _moments(params)
    gamma = fluid_solution(params).gamma
    return network.E * math.sqrt(network.theta) - 2.0 * params.lam * params.file_size / gamma * m2


def segment_crossings(p: np.ndarray, q: np.ndarray, center, angle: float, length: float) -> np.ndarray:
    """Which segments ``p -> q`` cross the cut of ``length`` at ``center`` and ``angle``.

    Coordinates are plain Euclidean; the caller unwraps the torus.
    """
    u = np.array([math.cos(angle), math.sin(angle)])
    nrm = np.array([-u[1], u[0]])
    p = np.asarray(p, dtype=float) - center
    q = np.asarray(q, dtype=float) - center
    a = p @ nrm
    b = q @ nrm
    hit = a * b < 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (p @ u) + ((q - p) @ u) * (a / (a - b))
    return hit & (np.abs(s) <= 0.5 * length)


def _pair_weights(snap, rate, R, eps):
    pos = np.asarray(snap.positions, dtype=float)
    side = float(snap.side)
    n = len(pos)
    if n < 2:
        return None
    tree = cKDTree(np.mod(pos, side), boxsize=side)
    pairs = tree.query_pairs(R, output_type="ndarray")
    if len(pairs) == 0:
        return None
    i, j = pairs[:, 0], pairs[:, 1]
    delta = pos[j] - pos[i]
    delta -= side * np.round(delta / side)
    # drop pairs whose geodesic is ambiguous (antipodal on the torus)
    ok = np.all(np.abs(np.abs(delta) - 0.5 * side) > 1e-9, axis=1)
    i, j, delta = i[ok], j[ok], delta[ok]
    d = np.hypot(delta[:, 0], delta[:, 1])
    f = np.asarray(eval_rate(rate, d, eps), dtype=float)
    # each downloading end receives f(d); seeders only upload
    roles = np.asarray(snap.roles)
    w = f * ((roles[i] == 1).astype(float) + (roles[j] == 1).astype(float))
    return pos[i], delta, w


def empirical_flow(snapshots: Iterable, rate, R: float, segment_length: Optional[float] = None,
                   n_segments: int = 20, rng: Optional[np.random.Generator] = None, eps: float = 0.0,
                   angle: Optional[float] = None) -> float:
    """Mean traffic per unit length through random cuts, over the given snapshots.

    Every linked pair within ``R`` contributes ``f(d)`` per downloading end
    when the minimal-image segment between them crosses the cut.  Cuts have
    uniform centers and angles (or the fixed ``angle``); the default length
    is half the torus side.
    Returns 0 when no snapshot holds a linked pair.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    snaps = list(snapshots)
    if not snaps:
        return 0.0
    total = 0.0
    count = 0
    for snap in snaps:
        side = float(snap.side)
        ell = 0.5 * side if segment_length is None else float(segment_length)
        if not 0 < ell < side - 2 * R:
            raise ValueError("segment_length must lie in (0, side - 2R)")
        pw = _pair_weights(snap, rate, R, eps)
        for _ in range(n_segments):
            center = rng.uniform(0.0, side, 2)
            theta = rng.uniform(0.0, math.pi) if angle is None else angle
            count += 1
            if pw is None:
                continue
            start, delta, w = pw
            # unwrap the pair's first end to the image nearest the cut center
            p = start - center
            p -= side * np.round(p / side)
            hit = segment_crossings(p, p + delta, np.zeros(2), theta, ell)
            total += float(np.sum(w[hit])) / ell
    return total / count


def poisson_snapshot(density: float, side: float, rng: np.random.Generator):
    """Homogeneous Poisson pattern of leechers on the torus."""
    from .sim.spatial import Snapshot

    n = rng.poisson(density * side * side)
    pos = rng.uniform(0.0, side, (n, 2))
    return Snapshot(t=0.0, positions=pos, roles=np.ones(n, dtype=np.int8), rates=np.zeros(n),
                    ids=np.arange(n), side=side)


def flow_row(params: SystemParams, network: NetworkParams, psi_emp: float = math.nan) -> dict:
    rep = feasibility(params, network)
    return {
        "lambda": params.lam,
        "psi_analytic": rep.psi,
        "psi_emp": psi_emp,
        "xi": rep.xi,
        "feasible": rep.feasible,
        "headroom": rep.headroom,
    }
