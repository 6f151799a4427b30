"""Scenario files: TOML with a fixed schema and strict key checking.

A scenario has the sections ``model``, ``rate``, ``policy``,
``extensions``, ``network``, ``chunks``, ``sim`` and ``run``.  Unknown
sections or keys, wrong types and invalid values are reported with the
line they appear on.  See ``scenarios/`` for examples.
"""
from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .fluid import ExtensionParams
from .model import RATE_NAMES, KNearest, Range, SystemParams, rate_from_name
from .network import NetworkParams

__all__ = [
    "ConfigError",
    "ChunkParams",
    "SimSettings",
    "RunSettings",
    "Scenario",
    "SCHEMA",
    "load_scenario",
    "parse_scenario",
    "scenario_from_dict",
]


class ConfigError(ValueError):
    """Invalid scenario file; the message names the line and field."""


_NUM = (int, float)

#: section -> key -> accepted types
SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "lambda": _NUM,
        "file_size": _NUM,
        "range": _NUM,
        "torus_side": _NUM,
        "file_size_dist": (str,),
    },
    "rate": {"kind": (str,), "C": _NUM, "U": _NUM, "q": _NUM, "o": _NUM, "alpha": _NUM, "B": _NUM},
    "policy": {"kind": (str,), "L": (int,)},
    "extensions": {
        "server_rate_density": _NUM,
        "abandonment_rate": _NUM,
        "seed_time": _NUM,
        "upload_cap": _NUM,
    },
    "network": {"theta": _NUM, "E": _NUM},
    "chunks": {
        "K": (int,),
        "mode": (str,),
        "seeder_fraction": _NUM,
        "steps_per_chunk": _NUM,
        "reassign": (str,),
    },
    "sim": {
        "method": (str,),
        "dt": _NUM,
        "horizon": _NUM,
        "warmup": _NUM,
        "min_departures": (int,),
        "initial_state": (str,),
        "n_batches": (int,),
        "n_snapshots": (int,),
        "backend": (str,),
    },
    "run": {
        "name": (str,),
        "replications": (int,),
        "seed_base": (int,),
        "n_f_grid": (list,),
        "K_grid": (list,),
        "lambda_factors": (list,),
        "min_chunks": (int,),
        "min_neighbors": _NUM,
    },
}


@dataclass(frozen=True)
class ChunkParams:
    K: int = 200
    mode: str = "one-to-one"
    seeder_fraction: float = 0.01
    steps_per_chunk: float = 10.0
    reassign: str = "completion"


@dataclass(frozen=True)
class SimSettings:
    method: str = "event"
    dt: Optional[float] = None
    horizon: Optional[float] = None
    warmup: Optional[float] = None
    min_departures: int = 20_000
    initial_state: str = "fluid"
    n_batches: int = 20
    n_snapshots: int = 0
    backend: Optional[str] = None


@dataclass(frozen=True)
class RunSettings:
    name: str = "scenario"
    replications: int = 1
    seed_base: int = 0
    n_f_grid: tuple = (0.1, 0.4, 1.6, 6.4, 25.6, 40.0)
    K_grid: tuple = (10, 50, 200)
    lambda_factors: tuple = (1.0, 4.0, 16.0)
    min_chunks: int = 50
    min_neighbors: float = 10.0


@dataclass(frozen=True)
class Scenario:
    """Everything one experiment needs; seeds are ``seed_base + replication``."""

    params: SystemParams
    policy: Union[Range, KNearest]
    extensions: ExtensionParams = field(default_factory=ExtensionParams)
    network: Optional[NetworkParams] = None
    chunks: Optional[ChunkParams] = None
    sim: SimSettings = field(default_factory=SimSettings)
    run: RunSettings = field(default_factory=RunSettings)

    def __post_init__(self):
        if self.run.replications < 1:
            raise ValueError("replications must be >= 1")

    @property
    def name(self) -> str:
        return self.run.name

    def seeds(self) -> list[int]:
        return [self.run.seed_base + i for i in range(self.run.replications)]


def _line_of(text: str, section: Optional[str], key: Optional[str] = None) -> Optional[int]:
    """1-based line of ``key`` in ``[section]`` (or of the header itself)."""
    if text is None:
        return None
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return None


def _where(text, section, key=None) -> str:
    no = _line_of(text, section, key)
    loc = f"[{section}]" + (f".{key}" if key else "")
    return f"line {no}: {loc}" if no else loc


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse scenario TOML text."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return scenario_from_dict(data, text=text, source=source)


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_scenario(text, source=str(path))


def _check(data: dict, text: Optional[str], source: str) -> None:
    for sec, body in data.items():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: {_where(text, sec)}: unknown section; expected one of {sorted(SCHEMA)}")
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: '{sec}' must be a table")
        for key, val in body.items():
            if key not in SCHEMA[sec]:
                raise ConfigError(
                    f"{source}: {_where(text, sec, key)}: unknown key; expected one of {sorted(SCHEMA[sec])}"
                )
            types = SCHEMA[sec][key]
            ok = isinstance(val, types) and not (isinstance(val, bool) and bool not in types)
            if not ok:
                names = "/".join(t.__name__ for t in types)
                raise ConfigError(f"{source}: {_where(text, sec, key)}: expected {names}, got {type(val).__name__}")


def scenario_from_dict(data: dict, text: Optional[str] = None, source: str = "<dict>") -> Scenario:
    """Build a :class:`Scenario` from parsed TOML, validating every field."""
    _check(data, text, source)

    def fail(sec, key, msg):
        raise ConfigError(f"{source}: {_where(text, sec, key)}: {msg}")

    def build(sec, key, fn):
        try:
            return fn()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            fail(sec, key, str(exc))

    model = data.get("model", {})
    for key in ("lambda", "file_size"):
        if key not in model:
            fail("model", None, f"missing required key '{key}'")
    rate_sec = dict(data.get("rate", {"kind": "tcp", "C": 1.0}))
    kind = rate_sec.pop("kind", None)
    if kind is None:
        fail("rate", None, "missing required key 'kind'")
    if kind not in RATE_NAMES:
        fail("rate", "kind", f"unknown rate {kind!r}; expected one of {sorted(RATE_NAMES)}")
    rate = build("rate", None, lambda: rate_from_name(kind, **rate_sec))

    pol = data.get("policy", {"kind": "range"})
    pkind = pol.get("kind", "range")
    if pkind not in ("range", "knearest"):
        fail("policy", "kind", f"expected 'range' or 'knearest', got {pkind!r}")
    if pkind == "knearest" and "L" not in pol:
        fail("policy", None, "the knearest policy needs 'L'")
    if pkind == "range" and "L" in pol:
        fail("policy", "L", "'L' only applies to the knearest policy")

    rng_val = model.get("range")
    if pkind == "range" and rng_val is None:
        rng_val = 1.0
    params = build("model", None, lambda: SystemParams(
        lam=float(model["lambda"]),
        file_size=float(model["file_size"]),
        rate=rate,
        range=None if rng_val is None else float(rng_val),
        torus_side=None if "torus_side" not in model else float(model["torus_side"]),
        file_size_dist=model.get("file_size_dist", "exponential"),
    ))
    if pkind == "knearest":
        if params.torus_side is None:
            fail("model", "torus_side", "the knearest policy needs an explicit torus_side")
        policy = build("policy", "L", lambda: KNearest(int(pol["L"])))
    else:
        policy = Range(params.range)

    ext = data.get("extensions", {})
    extensions = build("extensions", None, lambda: ExtensionParams(
        server_rate_density=float(ext.get("server_rate_density", 0.0)),
        abandonment_rate=float(ext.get("abandonment_rate", 0.0)),
        seed_time=float(ext.get("seed_time", 0.0)),
        degree=policy.L if isinstance(policy, KNearest) else None,
        upload_cap=None if "upload_cap" not in ext else float(ext["upload_cap"]),
    ))

    network = None
    if "network" in data:
        net = data["network"]
        for key in ("theta", "E"):
            if key not in net:
                fail("network", None, f"missing required key '{key}'")
        network = build("network", None, lambda: NetworkParams(float(net["theta"]), float(net["E"])))

    chunks = None
    if "chunks" in data:
        ch = data["chunks"]
        chunks = ChunkParams(
            K=ch.get("K", 200),
            mode=ch.get("mode", "one-to-one"),
            seeder_fraction=float(ch.get("seeder_fraction", 0.01)),
            steps_per_chunk=float(ch.get("steps_per_chunk", 10.0)),
            reassign=ch.get("reassign", "completion"),
        )
        if chunks.K < 1:
            fail("chunks", "K", "must be >= 1")
        if chunks.mode not in ("one-to-one", "many-to-one"):
            fail("chunks", "mode", f"expected 'one-to-one' or 'many-to-one', got {chunks.mode!r}")
        if chunks.reassign not in ("step", "completion"):
            fail("chunks", "reassign", f"expected 'step' or 'completion', got {chunks.reassign!r}")
        if chunks.seeder_fraction < 0:
            fail("chunks", "seeder_fraction", "must be nonnegative")
        if not chunks.steps_per_chunk > 0:
            fail("chunks", "steps_per_chunk", "must be positive")

    s = data.get("sim", {})
    sim = SimSettings(
        method=s.get("method", "event"),
        dt=None if "dt" not in s else float(s["dt"]),
        horizon=None if "horizon" not in s else float(s["horizon"]),
        warmup=None if "warmup" not in s else float(s["warmup"]),
        min_departures=s.get("min_departures", 20_000),
        initial_state=s.get("initial_state", "fluid"),
        n_batches=s.get("n_batches", 20),
        n_snapshots=s.get("n_snapshots", 0),
        backend=s.get("backend"),
    )
    if sim.method not in ("event", "fixed-step"):
        fail("sim", "method", f"expected 'event' or 'fixed-step', got {sim.method!r}")
    if sim.method == "fixed-step" and sim.dt is None:
        fail("sim", None, "the fixed-step method needs 'dt'")
    if sim.dt is not None and not sim.dt > 0:
        fail("sim", "dt", "must be positive")
    if sim.initial_state not in ("fluid", "empty"):
        fail("sim", "initial_state", f"expected 'fluid' or 'empty', got {sim.initial_state!r}")
    if sim.backend not in (None, "python", "compiled"):
        fail("sim", "backend", f"expected 'python' or 'compiled', got {sim.backend!r}")
    if sim.horizon is not None and sim.warmup is not None and not sim.warmup < sim.horizon:
        fail("sim", "warmup", "must be smaller than horizon")
    for key in ("min_departures", "n_snapshots"):
        if getattr(sim, key) < 0:
            fail("sim", key, "must be nonnegative")
    if sim.n_batches < 2:
        fail("sim", "n_batches", "must be >= 2")

    r = data.get("run", {})

    def grid(key, default, cast):
        if key not in r:
            return default
        try:
            vals = tuple(cast(v) for v in r[key])
        except (TypeError, ValueError):
            fail("run", key, "must be a list of numbers")
        if not vals or any(not (v > 0) or (isinstance(v, float) and math.isinf(v)) for v in vals):
            fail("run", key, "must be a nonempty list of positive numbers")
        return vals

    run = RunSettings(
        name=r.get("name", "scenario"),
        replications=r.get("replications", 1),
        seed_base=r.get("seed_base", 0),
        n_f_grid=grid("n_f_grid", RunSettings.n_f_grid, float),
        K_grid=grid("K_grid", RunSettings.K_grid, int),
        lambda_factors=grid("lambda_factors", RunSettings.lambda_factors, float),
        min_chunks=r.get("min_chunks", 50),
        min_neighbors=float(r.get("min_neighbors", 10.0)),
    )
    if run.replications < 1:
        fail("run", "replications", "must be >= 1")
    return Scenario(params=params, policy=policy, extensions=extensions, network=network,
                    chunks=chunks, sim=sim, run=run)


def scenario_summary(sc: Scenario) -> dict[str, Any]:
    """Flat description used in CSV headers and logs."""
    p = sc.params
    return {
        "name": sc.name,
        "lambda": p.lam,
        "file_size": p.file_size,
        "rate": p.rate.name,
        "range": p.range,
        "torus_side": p.torus_side,
        "policy": type(sc.policy).__name__,
    }
