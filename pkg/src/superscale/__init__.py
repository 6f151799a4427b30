"""Latency and capacity models for spatial peer-to-peer file sharing.

Analytic fluid limits, chunk-efficiency fixed points, exact and chunk-level
simulators, and network-load checks for peers scattered on a torus.
"""
from .chunks import DegenerateSystemError, EfficiencyProfile, chunk_latency, eta_many_to_one, eta_one_to_one_bound
from .config import ConfigError, Scenario, load_scenario, parse_scenario
from .fluid import (
    ExtensionParams,
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
from .model import (
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
    rate_from_name,
    typical_range,
)
from .network import NetworkParams, analytic_flow, capacity, empirical_flow, feasibility
from .sim.chunked import run_chunked
from .sim.discrete import run_discrete
from .sim.spatial import SimConfig, estimate_m, latency_distribution_check, run

__version__ = "0.1.0"

__all__ = [
    "Constant", "DivergenceError", "KNearest", "Range", "SystemParams", "TcpCapped", "TcpLike", "TcpOffset",
    "TcpOverhead", "WirelessSnr", "dimensionless", "rate_from_name", "typical_range",
    "ExtensionParams", "abandonment", "access_check", "degree_limited", "fluid_solution", "heuristic_m",
    "heuristic_m_constant_rate", "latency_prediction", "seeder_latency", "servers_latency",
    "DegenerateSystemError", "EfficiencyProfile", "chunk_latency", "eta_many_to_one", "eta_one_to_one_bound",
    "NetworkParams", "analytic_flow", "capacity", "empirical_flow", "feasibility",
    "SimConfig", "run", "run_discrete", "run_chunked", "estimate_m", "latency_distribution_check",
    "ConfigError", "Scenario", "load_scenario", "parse_scenario",
]
