"""Scenario documents and their validation.

A scenario JSON document holds demand, planner and simulation settings
in conventional traffic units (veh/h for flows, km/h for speeds).
Parsing validates every field, converts to the SI units used
internally exactly once, and reports problems with dotted field paths
such as ``demand.ramp_vph: must be greater than 0``.

Six demand scenarios covering the case-study grid (2000 and 2200
veh/h/lane mainline against 300, 400 and 500 veh/h ramp) ship with the
package and can be addressed by name, e.g. ``1C`` or ``2a``, wherever
a scenario file is accepted.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError
from .microsim import SimConfig
from .optimizer import ControlPlan, CoordinationInputs
from .units import kmh_to_ms, vph_to_vps

PLANNER_DEFAULTS = {
    "reserved_capacity_fraction": 0.5,
    "mainline_weight": 0.5,
    "ramp_weight": 0.5,
    "cooperative_distance_m": 457.2,
    "comfortable_deceleration": 2.75,
    "max_acceleration": 2.75,
    "max_platoon_size": 20,
    "launch_distance_m": 300.0,
    "ramp_speed_kmh": 60.0,
}

SIMULATION_DEFAULTS = {
    "duration_s": 7200.0,
    "time_step_s": 0.1,
    "seed": 1,
}


@dataclass(frozen=True)
class Scenario:
    """A fully resolved scenario: planner inputs plus run settings."""

    name: str
    inputs: CoordinationInputs
    duration: float
    time_step: float
    seed: int

    def sim_config(self, control: bool, seed: Optional[int] = None,
                   duration: Optional[float] = None,
                   plan: Optional[ControlPlan] = None) -> SimConfig:
        """Run configuration for this scenario, with optional overrides."""
        return SimConfig(
            inputs=self.inputs,
            control=control,
            seed=self.seed if seed is None else seed,
            duration=self.duration if duration is None else duration,
            dt=self.time_step,
            plan=plan,
        )


def _mapping(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object")
    return dict(value)


def _number(sec: dict, section: str, key: str, default: Optional[float],
            minimum: Optional[float] = None, exclusive: bool = True,
            maximum: Optional[float] = None) -> float:
    path = f"{section}.{key}"
    if key not in sec:
        if default is None:
            raise ConfigError(f"{path}: required field is missing")
        return float(default)
    value = sec.pop(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    value = float(value)
    if minimum is not None:
        if exclusive and value <= minimum:
            raise ConfigError(f"{path}: must be greater than {minimum:g}")
        if not exclusive and value < minimum:
            raise ConfigError(f"{path}: must be at least {minimum:g}")
    if maximum is not None and value > maximum:
        raise ConfigError(f"{path}: must be at most {maximum:g}")
    return value


def _integer(sec: dict, section: str, key: str, default: Optional[int],
             minimum: int = 0) -> int:
    path = f"{section}.{key}"
    if key not in sec:
        if default is None:
            raise ConfigError(f"{path}: required field is missing")
        return int(default)
    value = sec.pop(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer")
    if value < minimum:
        raise ConfigError(f"{path}: must be at least {minimum}")
    return value


def _reject_unknown(sec: dict, section: str) -> None:
    if sec:
        key = sorted(sec)[0]
        raise ConfigError(f"{section}.{key}: unknown field")


def parse_scenario(doc: Any, fallback_name: str = "scenario") -> Scenario:
    """Validate a parsed JSON document and build the scenario object."""
    top = _mapping(doc, "scenario")

    name = top.pop("name", fallback_name)
    if not isinstance(name, str) or not name:
        raise ConfigError("name: expected a non-empty string")

    if "demand" not in top:
        raise ConfigError("demand: required section is missing")
    demand = _mapping(top.pop("demand"), "demand")
    q_m_vph = _number(demand, "demand", "mainline_per_lane_vph", None, minimum=0.0)
    q_r_vph = _number(demand, "demand", "ramp_vph", None, minimum=0.0)
    _reject_unknown(demand, "demand")

    dp = PLANNER_DEFAULTS
    planner = _mapping(top.pop("planner", {}), "planner")
    rho = _number(planner, "planner", "reserved_capacity_fraction",
                  dp["reserved_capacity_fraction"],
                  minimum=0.0, exclusive=False, maximum=1.0)
    w_m = _number(planner, "planner", "mainline_weight",
                  dp["mainline_weight"], minimum=0.0, exclusive=False)
    w_r = _number(planner, "planner", "ramp_weight",
                  dp["ramp_weight"], minimum=0.0, exclusive=False)
    if w_m + w_r <= 0.0:
        raise ConfigError("planner.mainline_weight: the two objective "
                          "weights must not both be zero")
    d_prime = _number(planner, "planner", "cooperative_distance_m",
                      dp["cooperative_distance_m"], minimum=0.0)
    b = _number(planner, "planner", "comfortable_deceleration",
                dp["comfortable_deceleration"], minimum=0.0)
    a_max = _number(planner, "planner", "max_acceleration",
                    dp["max_acceleration"], minimum=0.0)
    n_max = _integer(planner, "planner", "max_platoon_size",
                     dp["max_platoon_size"], minimum=1)
    s_accel = _number(planner, "planner", "launch_distance_m",
                      dp["launch_distance_m"], minimum=0.0)
    v_r_kmh = _number(planner, "planner", "ramp_speed_kmh",
                      dp["ramp_speed_kmh"], minimum=0.0)
    _reject_unknown(planner, "planner")

    ds = SIMULATION_DEFAULTS
    sim = _mapping(top.pop("simulation", {}), "simulation")
    duration = _number(sim, "simulation", "duration_s", ds["duration_s"],
                       minimum=0.0)
    time_step = _number(sim, "simulation", "time_step_s", ds["time_step_s"],
                        minimum=0.0, maximum=0.5)
    seed = _integer(sim, "simulation", "seed", ds["seed"], minimum=0)
    _reject_unknown(sim, "simulation")

    if top:
        raise ConfigError(f"{sorted(top)[0]}: unknown top-level field")

    try:
        inputs = CoordinationInputs(
            q_m=vph_to_vps(q_m_vph),
            lam=vph_to_vps(q_r_vph),
            rho=rho,
            w_m=w_m,
            w_r=w_r,
            v_r=kmh_to_ms(v_r_kmh),
            d_prime=d_prime,
            b=b,
            a_max=a_max,
            n_max=n_max,
            s_accel=s_accel,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return Scenario(name=name, inputs=inputs, duration=duration,
                    time_step=time_step, seed=seed)


def load_scenario(path) -> Scenario:
    """Read and validate one scenario file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read scenario file ({exc})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return parse_scenario(doc, fallback_name=p.stem)


def bundled_scenario_names() -> list[str]:
    """Names of the scenarios shipped with the package."""
    pkg = resources.files(__package__) / "scenarios"
    return sorted(entry.name[:-5].upper() for entry in pkg.iterdir()
                  if entry.name.endswith(".json"))


def load_bundled_scenario(name: str) -> Scenario:
    """Load one of the shipped scenarios by its table name, e.g. ``1C``."""
    res = resources.files(__package__) / "scenarios" / f"{name.lower()}.json"
    if not res.is_file():
        known = ", ".join(bundled_scenario_names())
        raise ConfigError(
            f"unknown bundled scenario {name!r}; available: {known}")
    return parse_scenario(json.loads(res.read_text()),
                          fallback_name=name.upper())


def find_scenario(ref: str) -> Scenario:
    """Resolve a scenario reference: a bundled name or a file path."""
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        return load_scenario(p)
    return load_bundled_scenario(ref)


def scenario_fingerprint(scenario: Scenario) -> str:
    """Stable short id of the resolved scenario values, for tagging
    batch output rows."""
    inp = scenario.inputs
    payload = {
        "name": scenario.name,
        "q_m": inp.q_m, "lam": inp.lam, "rho": inp.rho,
        "w_m": inp.w_m, "w_r": inp.w_r, "v_r": inp.v_r,
        "d_prime": inp.d_prime, "b": inp.b, "a_max": inp.a_max,
        "n_max": inp.n_max, "s_accel": inp.s_accel,
        "duration": scenario.duration, "time_step": scenario.time_step,
        "seed": scenario.seed,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
