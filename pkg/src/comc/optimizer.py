"""Merging-coordination planner.

Given the aggregate traffic state at an on-ramp bottleneck, choose the
platoon size n, the cooperative distance d (how far upstream of the
merging point the facilitating vehicle slows down) and the cooperative
speed v_c that minimize the weighted mainline + ramp delay per hour,
subject to gap, stability, speed-band, acceleration and size
constraints.

The solver is an exhaustive coarse-to-fine grid search, vectorized
per platoon size. Grids at the default resolution reproduce plan
tables to their published precision, and exhaustive enumeration
doubles as its own correctness oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InfeasibleDemandError
from .fundamental_diagram import (
    FdParams,
    TrafficFlowState,
    equilibrium_headway,
    fd_state_at_speed,
    lane_capacity,
    state_from_demand,
)
from .units import kmh_to_ms, ms_to_kmh


@dataclass(frozen=True)
class CoordinationInputs:
    """Aggregate scenario state feeding one plan computation.

    Flows are per lane in veh/s, speeds in m/s, distances in m.
    """

    q_m: float
    lam: float
    rho: float = 0.5
    w_m: float = 0.5
    w_r: float = 0.5
    v_r: float = kmh_to_ms(60.0)
    d_prime: float = 457.2
    b: float = 2.75
    a_max: float = 2.75
    n_max: int = 20
    s_accel: float = 300.0
    fd: FdParams = field(default_factory=FdParams)

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.w_m < 0.0 or self.w_r < 0.0:
            raise ValueError(f"weights must be non-negative, got ({self.w_m}, {self.w_r})")
        if self.w_m + self.w_r <= 0.0:
            raise ValueError("at least one weight must be positive")
        for name, value in (
            ("q_m", self.q_m),
            ("lam", self.lam),
            ("v_r", self.v_r),
            ("d_prime", self.d_prime),
            ("b", self.b),
            ("a_max", self.a_max),
            ("s_accel", self.s_accel),
        ):
            if value <= 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be at least 1, got {self.n_max}")


@dataclass(frozen=True)
class ControlPlan:
    """A fully evaluated coordination plan."""

    n: int
    d: float
    v_c: float
    m: int
    omega: float
    r: float
    delay_main: float
    delay_ramp: float
    objective: float
    a_req: float
    state_o: TrafficFlowState
    state_c: TrafficFlowState


@dataclass(frozen=True)
class SolverSettings:
    """Grid-search resolution and candidate-pruning switches.

    ``conservative_gap`` sizes the created gap against the equilibrium
    minimum headway at free flow instead of the average demand headway,
    so the plan works even for a facilitator that starts at the tightest
    admissible spacing. ``require_release_timing`` keeps only plans
    whose facilitator travel time d/v_c leaves enough room to launch the
    platoon after the cycle starts (n*h_c of lead plus the waiting-
    position-to-merge run at the acceleration cap). Both default on;
    they restrict the candidate set and never relax the reported
    constraints.
    """

    v_step_coarse: float = kmh_to_ms(0.5)
    v_step_fine: float = kmh_to_ms(0.05)
    d_step_coarse: float = 10.0
    d_step_fine: float = 1.0
    d_max: float = 2000.0
    conservative_gap: bool = True
    require_release_timing: bool = True

    def __post_init__(self):
        for name, value in (
            ("v_step_coarse", self.v_step_coarse),
            ("v_step_fine", self.v_step_fine),
            ("d_step_coarse", self.d_step_coarse),
            ("d_step_fine", self.d_step_fine),
            ("d_max", self.d_max),
        ):
            if value <= 0.0:
                raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class FeasibilityReport:
    """Signed constraint residuals for one candidate (n, d, v_c).

    Residuals are >= 0 when satisfied. ``release_gap_m`` is a
    diagnostic only: the distance margin d - n*h_c*v_c that appears
    inside the ramp-delay expression; a negative value flags that the
    expression is being used outside its derivation regime, but does
    not make the candidate infeasible.
    """

    feasible: bool
    gap_residual: float
    stability_residual: float
    speed_residual: float
    accel_residual: float
    size_ok: bool
    distance_ok: bool
    omega_ok: bool
    omega: float
    release_gap_m: float


def effective_outer_flow(q_m: float, rho: float, capacity: float) -> float:
    """Outer-lane flow left to coordinate with, after cooperative
    lane changes absorb a fraction rho of the inner lane's reserved
    capacity."""
    if q_m > capacity:
        raise InfeasibleDemandError(
            f"mainline demand {q_m:.4f} veh/s exceeds lane capacity {capacity:.4f} veh/s"
        )
    q_o = q_m - rho * (capacity - q_m)
    if q_o <= 0.0:
        raise InfeasibleDemandError(
            f"effective outer flow is non-positive ({q_o:.4f} veh/s) "
            f"for q_m={q_m:.4f}, rho={rho}"
        )
    return q_o


def shockwave_speed(state_o: TrafficFlowState, state_c: TrafficFlowState) -> float:
    """Propagation speed of the interface between the two states."""
    dk = state_c.k - state_o.k
    if dk == 0.0:
        raise ValueError("states have equal density; interface speed is undefined")
    return (state_c.q - state_o.q) / dk


def cooperative_count(
    d: float, inputs: CoordinationInputs, omega: float, state_o: TrafficFlowState
) -> int:
    """Number of mainline vehicles caught by the slowdown wave."""
    if not 0.0 < omega < state_o.v:
        raise ValueError(f"omega must lie in (0, v_o), got {omega}")
    value = (d + inputs.d_prime) / state_o.h * (1.0 / omega - 1.0 / state_o.v)
    return max(0, math.ceil(value))


def mainline_delay(
    m: int,
    d: float,
    v_c: float,
    omega: float,
    inputs: CoordinationInputs,
    state_o: TrafficFlowState,
) -> float:
    """Per-cycle delay summed over the m cooperating mainline vehicles."""
    v_o = state_o.v
    if v_c >= v_o:
        if v_c == v_o:
            return 0.0
        raise ValueError(f"cooperative speed {v_c} must not exceed mainline speed {v_o}")
    wave = (m - 1) * omega * state_o.h / (2.0 * (v_o - omega))
    return m * (v_o - v_c) / v_c * ((d + inputs.d_prime) / v_o - wave)


def ramp_delay(n: int, d: float, v_c: float, h_c: float, inputs: CoordinationInputs) -> float:
    """Per-cycle delay summed over the n platooned ramp vehicles."""
    if n < 1:
        raise ValueError(f"platoon size must be at least 1, got {n}")
    v_o = inputs.fd.v_free
    per_vehicle = (
        inputs.v_r / (2.0 * inputs.b)
        + (d + inputs.d_prime) / v_c
        - n * h_c
        - (d - n * h_c * v_c) / (2.0 * inputs.v_r)
        - inputs.d_prime / v_o
        + (n - 1) / (2.0 * inputs.lam)
    )
    return n * per_vehicle


def cycle_rate(n: int, inputs: CoordinationInputs) -> float:
    """Coordination cycles per hour at platoon size n."""
    return 3600.0 * inputs.lam / n


def objective(
    delay_main: float, delay_ramp: float, n: int, inputs: CoordinationInputs
) -> float:
    """Weighted delay per hour of operation."""
    return (inputs.w_m * delay_main + inputs.w_r * delay_ramp) * cycle_rate(n, inputs)


def required_platoon_acceleration(v_c: float, s_accel: float) -> float:
    """Constant acceleration taking a standing platoon leader to v_c
    exactly over the waiting-position-to-merge distance."""
    if s_accel <= 0.0:
        raise ValueError(f"s_accel must be positive, got {s_accel}")
    return v_c * v_c / (2.0 * s_accel)


def outer_lane_state(inputs: CoordinationInputs) -> TrafficFlowState:
    """Pre-coordination outer-lane state at free flow."""
    capacity = lane_capacity(inputs.fd)
    q_o = effective_outer_flow(inputs.q_m, inputs.rho, capacity)
    return state_from_demand(q_o, inputs.fd.v_free, inputs.fd)


def check_feasibility(
    n: int, d: float, v_c: float, inputs: CoordinationInputs
) -> FeasibilityReport:
    """Evaluate every constraint for one candidate and report signed
    residuals. Infeasibility is data, not an error."""
    fd = inputs.fd
    state_o = outer_lane_state(inputs)
    v_o = state_o.v

    size_ok = 1 <= n <= inputs.n_max
    distance_ok = 0.0 < d
    speed_residual = min(v_c - fd.v_crit, v_o - v_c)

    omega = math.nan
    omega_ok = False
    gap_residual = -math.inf
    stability_residual = -math.inf
    release_gap = -math.inf
    accel_residual = inputs.a_max - required_platoon_acceleration(v_c, inputs.s_accel)

    if 0.0 < v_c <= fd.v_free:
        state_c = fd_state_at_speed(v_c, fd)
        h_c = state_c.h
        if state_c.k != state_o.k:
            omega = shockwave_speed(state_o, state_c)
            omega_ok = 0.0 < omega < v_o
        gap_residual = state_o.h + d / v_c - d / v_o - (n + 1) * h_c
        if omega_ok:
            stability_residual = n / inputs.lam - (d + inputs.d_prime) / omega
        release_gap = d - n * h_c * v_c

    feasible = (
        size_ok
        and distance_ok
        and omega_ok
        and speed_residual >= 0.0
        and gap_residual >= 0.0
        and stability_residual >= 0.0
        and accel_residual >= 0.0
    )
    return FeasibilityReport(
        feasible=feasible,
        gap_residual=gap_residual,
        stability_residual=stability_residual,
        speed_residual=speed_residual,
        accel_residual=accel_residual,
        size_ok=size_ok,
        distance_ok=distance_ok,
        omega_ok=omega_ok,
        omega=omega,
        release_gap_m=release_gap,
    )


def _evaluate_grid(
    n: int,
    v_grid: np.ndarray,
    d_grid: np.ndarray,
    inputs: CoordinationInputs,
    settings: SolverSettings,
    state_o: TrafficFlowState,
):
    """Vectorized objective + feasibility over a (v_c, d) grid for one n.

    Returns (objective array, feasibility mask), both shaped
    (len(v_grid), len(d_grid)).
    """
    fd = inputs.fd
    v_o = state_o.v
    h_o = state_o.h
    q_o = state_o.q
    k_o = state_o.k

    v = v_grid[:, None]
    d = d_grid[None, :]

    h_c = (fd.cc0 + fd.veh_length + fd.cc1 * v) / v
    q_c = 1.0 / h_c
    k_c = q_c / v

    with np.errstate(divide="ignore", invalid="ignore"):
        omega = np.where(k_c != k_o, (q_c - q_o) / (k_c - k_o), np.nan)
    omega_ok = np.isfinite(omega) & (omega > 0.0) & (omega < v_o)

    # Gap requirement, solved for d: the slowdown must have grown the
    # facilitator's headway to fit n platoon vehicles plus itself.
    inv_gain = 1.0 / v - 1.0 / v_o
    h_start = equilibrium_headway(v_o, fd) if settings.conservative_gap else h_o
    need = (n + 1) * h_c - h_start
    with np.errstate(divide="ignore", invalid="ignore"):
        d_gap = np.where(inv_gain > 0.0, need / inv_gain, np.inf)
    d_gap = np.where(need <= 0.0, 0.0, d_gap)

    d_lo = np.maximum(d_gap, 0.0)
    if settings.require_release_timing:
        d_timing = n * h_c * v + inputs.s_accel + v * v / (2.0 * inputs.a_max)
        d_lo = np.maximum(d_lo, d_timing)

    with np.errstate(divide="ignore", invalid="ignore"):
        d_hi = np.where(omega_ok, n / inputs.lam * omega - inputs.d_prime, -np.inf)

    a_req = v * v / (2.0 * inputs.s_accel)
    feasible = (
        omega_ok
        & (d >= d_lo)
        & (d <= d_hi)
        & (a_req <= inputs.a_max)
        & (v >= fd.v_crit)
        & (v <= v_o)
    )
    # The literal gap constraint is implied by the conservative one but
    # enforced explicitly so the mask never depends on that implication.
    feasible &= h_o + d * inv_gain - (n + 1) * h_c >= 0.0

    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.ceil((d + inputs.d_prime) / h_o * (1.0 / omega - 1.0 / v_o))
        wave = (m - 1.0) * omega * h_o / (2.0 * (v_o - omega))
        delay_main = m * (v_o - v) / v * ((d + inputs.d_prime) / v_o - wave)
        delay_ramp = n * (
            inputs.v_r / (2.0 * inputs.b)
            + (d + inputs.d_prime) / v
            - n * h_c
            - (d - n * h_c * v) / (2.0 * inputs.v_r)
            - inputs.d_prime / v_o
            + (n - 1) / (2.0 * inputs.lam)
        )
        rate = 3600.0 * inputs.lam / n
        obj = (inputs.w_m * delay_main + inputs.w_r * delay_ramp) * rate
    obj = np.where(feasible & np.isfinite(obj), obj, np.inf)
    return obj, feasible


def _best_on_grid(obj: np.ndarray, v_grid: np.ndarray, d_grid: np.ndarray):
    """Minimum cell of one objective grid with deterministic
    tie-breaking: smaller d first, then larger v_c."""
    best = obj.min()
    if not np.isfinite(best):
        return None
    vi, di = np.nonzero(obj == best)
    order = np.lexsort((-v_grid[vi], d_grid[di]))
    pick = order[0]
    return best, float(v_grid[vi[pick]]), float(d_grid[di[pick]])


def _make_grid(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(math.floor((hi - lo) / step + 1e-9))
    grid = lo + step * np.arange(count + 1)
    return grid[grid <= hi + 1e-9]


def solve(
    inputs: CoordinationInputs, settings: SolverSettings = SolverSettings()
) -> Optional[ControlPlan]:
    """Find the minimum-delay feasible plan, or None when no grid
    point is feasible.

    For each platoon size the (v_c, d) grid is scanned coarsely, then
    refined around that size's best cell with the fine steps. Ties
    across sizes break toward smaller n, then smaller d, then larger
    v_c.
    """
    fd = inputs.fd
    state_o = outer_lane_state(inputs)

    v_coarse = _make_grid(fd.v_crit, fd.v_free, settings.v_step_coarse)
    d_coarse = _make_grid(settings.d_step_coarse, settings.d_max, settings.d_step_coarse)

    best_key = None
    best_candidate = None
    for n in range(1, inputs.n_max + 1):
        obj, _ = _evaluate_grid(n, v_coarse, d_coarse, inputs, settings, state_o)
        coarse_pick = _best_on_grid(obj, v_coarse, d_coarse)
        if coarse_pick is None:
            continue
        _, v0, d0 = coarse_pick

        v_fine = _make_grid(
            max(fd.v_crit, v0 - settings.v_step_coarse),
            min(fd.v_free, v0 + settings.v_step_coarse),
            settings.v_step_fine,
        )
        d_fine = _make_grid(
            max(settings.d_step_fine, d0 - settings.d_step_coarse),
            min(settings.d_max, d0 + settings.d_step_coarse),
            settings.d_step_fine,
        )
        obj_fine, _ = _evaluate_grid(n, v_fine, d_fine, inputs, settings, state_o)
        fine_pick = _best_on_grid(obj_fine, v_fine, d_fine)
        if fine_pick is None:
            fine_pick = coarse_pick
        value, v_best, d_best = fine_pick

        key = (value, n, d_best, -v_best)
        if best_key is None or key < best_key:
            best_key = key
            best_candidate = (n, d_best, v_best)

    if best_candidate is None:
        return None
    n, d, v_c = best_candidate
    return build_plan(n, d, v_c, inputs)


def build_plan(n: int, d: float, v_c: float, inputs: CoordinationInputs) -> ControlPlan:
    """Assemble the full derived-quantity record for a candidate."""
    state_o = outer_lane_state(inputs)
    state_c = fd_state_at_speed(v_c, inputs.fd)
    omega = shockwave_speed(state_o, state_c)
    m = cooperative_count(d, inputs, omega, state_o)
    d_main = mainline_delay(m, d, v_c, omega, inputs, state_o)
    d_ramp = ramp_delay(n, d, v_c, state_c.h, inputs)
    return ControlPlan(
        n=n,
        d=d,
        v_c=v_c,
        m=m,
        omega=omega,
        r=cycle_rate(n, inputs),
        delay_main=d_main,
        delay_ramp=d_ramp,
        objective=objective(d_main, d_ramp, n, inputs),
        a_req=required_platoon_acceleration(v_c, inputs.s_accel),
        state_o=state_o,
        state_c=state_c,
    )


def max_ramp_flow(
    inputs: CoordinationInputs, settings: SolverSettings = SolverSettings()
) -> float:
    """Largest ramp arrival rate [veh/h] that still admits a feasible
    plan, located by bisection to 1 veh/h."""

    def feasible_at(q_r_vph: float) -> bool:
        trial = CoordinationInputs(
            q_m=inputs.q_m,
            lam=q_r_vph / 3600.0,
            rho=inputs.rho,
            w_m=inputs.w_m,
            w_r=inputs.w_r,
            v_r=inputs.v_r,
            d_prime=inputs.d_prime,
            b=inputs.b,
            a_max=inputs.a_max,
            n_max=inputs.n_max,
            s_accel=inputs.s_accel,
            fd=inputs.fd,
        )
        return solve(trial, settings) is not None

    lo, hi = 1.0, 3600.0 * lane_capacity(inputs.fd)
    if not feasible_at(lo):
        return 0.0
    if feasible_at(hi):
        return hi
    while hi - lo > 1.0:
        mid = 0.5 * (lo + hi)
        if feasible_at(mid):
            lo = mid
        else:
            hi = mid
    return lo


def parameter_sweep(
    inputs: CoordinationInputs,
    axis: str,
    grid: Sequence[float],
    settings: SolverSettings = SolverSettings(),
) -> list[tuple[float, Optional[ControlPlan]]]:
    """Solve once per grid point along the weights or rho axis.

    The weights axis interprets each grid value as w_m and sets
    w_r = 1 - w_m. Points where the problem degenerates or has no
    feasible plan are reported with a None plan.
    """
    if axis not in ("weights", "rho"):
        raise ValueError(f"axis must be 'weights' or 'rho', got {axis!r}")
    rows: list[tuple[float, Optional[ControlPlan]]] = []
    for value in grid:
        if axis == "weights":
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"weight grid value outside [0, 1]: {value}")
            trial = CoordinationInputs(
                q_m=inputs.q_m,
                lam=inputs.lam,
                rho=inputs.rho,
                w_m=value,
                w_r=1.0 - value,
                v_r=inputs.v_r,
                d_prime=inputs.d_prime,
                b=inputs.b,
                a_max=inputs.a_max,
                n_max=inputs.n_max,
                s_accel=inputs.s_accel,
                fd=inputs.fd,
            )
        else:
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"rho grid value outside [0, 1]: {value}")
            trial = CoordinationInputs(
                q_m=inputs.q_m,
                lam=inputs.lam,
                rho=value,
                w_m=inputs.w_m,
                w_r=inputs.w_r,
                v_r=inputs.v_r,
                d_prime=inputs.d_prime,
                b=inputs.b,
                a_max=inputs.a_max,
                n_max=inputs.n_max,
                s_accel=inputs.s_accel,
                fd=inputs.fd,
            )
        try:
            plan = solve(trial, settings)
        except InfeasibleDemandError:
            plan = None
        rows.append((value, plan))
    return rows


def plan_table_rows(
    rows: Iterable[tuple[float, Optional[ControlPlan]]]
) -> list[dict]:
    """Flatten sweep output into report dictionaries (boundary units)."""
    out = []
    for axis_value, plan in rows:
        if plan is None:
            out.append({"axis_value": axis_value, "feasible": False})
            continue
        out.append(
            {
                "axis_value": axis_value,
                "n": plan.n,
                "d_m": plan.d,
                "v_c_kmh": ms_to_kmh(plan.v_c),
                "m": plan.m,
                "omega_ms": plan.omega,
                "r_per_h": plan.r,
                "delay_main_s": plan.delay_main,
                "delay_ramp_s": plan.delay_ramp,
                "objective_s_per_h": plan.objective,
                "feasible": True,
            }
        )
    return out
