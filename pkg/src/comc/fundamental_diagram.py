"""Equilibrium traffic-flow relations for one freeway lane.

A car-following calibration (standstill gap ``cc0``, time-gap
coefficient ``cc1``, vehicle length) induces an equilibrium time
headway at every speed:

    h(v) = (cc0 + veh_length + cc1 * v) / v

and from it the steady flow q = 1/h and density k = q/v. Both the
planner and the simulator anchor to these relations, so they live in
one place. All quantities are SI: metres, seconds, vehicles per
second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InfeasibleDemandError
from .units import kmh_to_ms

REL_TOL = 1e-9


@dataclass(frozen=True)
class FdParams:
    """Calibration of the equilibrium speed-headway relation."""

    cc0: float = 1.5
    cc1: float = 0.9
    veh_length: float = 4.37
    v_free: float = kmh_to_ms(120.0)
    v_crit: float = kmh_to_ms(75.0)

    def __post_init__(self):
        if self.cc0 <= 0.0:
            raise ValueError(f"cc0 must be positive, got {self.cc0}")
        if self.cc1 <= 0.0:
            raise ValueError(f"cc1 must be positive, got {self.cc1}")
        if self.veh_length <= 0.0:
            raise ValueError(f"veh_length must be positive, got {self.veh_length}")
        if self.v_free <= 0.0:
            raise ValueError(f"v_free must be positive, got {self.v_free}")
        if not 0.0 < self.v_crit < self.v_free:
            raise ValueError(
                f"v_crit must lie in (0, v_free), got {self.v_crit} "
                f"with v_free={self.v_free}"
            )


@dataclass(frozen=True)
class TrafficFlowState:
    """A steady lane state: speed, flow, density and time headway.

    The fields are redundant on purpose (q = k*v and h = 1/q); the
    constructor rejects inconsistent combinations so downstream code
    can rely on any of the four without re-deriving it.
    """

    v: float
    q: float
    k: float
    h: float

    def __post_init__(self):
        for name, value in (("v", self.v), ("q", self.q), ("k", self.k), ("h", self.h)):
            if value <= 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not math.isclose(self.q, self.k * self.v, rel_tol=REL_TOL):
            raise ValueError(f"inconsistent flow state: q={self.q} but k*v={self.k * self.v}")
        if not math.isclose(self.h, 1.0 / self.q, rel_tol=REL_TOL):
            raise ValueError(f"inconsistent flow state: h={self.h} but 1/q={1.0 / self.q}")


def equilibrium_headway(v: float, p: FdParams) -> float:
    """Time headway [s] of the equilibrium state at speed v."""
    if v <= 0.0:
        raise ValueError(f"speed must be positive, got {v}")
    return (p.cc0 + p.veh_length + p.cc1 * v) / v


def fd_state_at_speed(v: float, p: FdParams) -> TrafficFlowState:
    """Equilibrium state (headway, flow, density) at speed v."""
    if not 0.0 < v <= p.v_free:
        raise ValueError(f"speed must lie in (0, v_free={p.v_free}], got {v}")
    h = equilibrium_headway(v, p)
    q = 1.0 / h
    return TrafficFlowState(v=v, q=q, k=q / v, h=h)


def lane_capacity(p: FdParams) -> float:
    """Maximum steady flow of one lane [veh/s].

    For this headway family, flow strictly increases with speed, so
    the maximum sits at the free-flow endpoint.
    """
    return fd_state_at_speed(p.v_free, p).q


def state_from_demand(q: float, v: float, p: FdParams) -> TrafficFlowState:
    """Lane state for a demand flow q travelling at speed v.

    Unlike :func:`fd_state_at_speed`, the headway here is the demand
    headway 1/q, which may be any value at or above the equilibrium
    minimum for the given speed.
    """
    if q <= 0.0:
        raise ValueError(f"flow must be positive, got {q}")
    if v <= 0.0:
        raise ValueError(f"speed must be positive, got {v}")
    h = 1.0 / q
    h_min = equilibrium_headway(v, p)
    if h < h_min * (1.0 - REL_TOL):
        raise InfeasibleDemandError(
            f"demand headway {h:.4f} s below equilibrium minimum "
            f"{h_min:.4f} s at v={v:.3f} m/s"
        )
    return TrafficFlowState(v=v, q=q, k=q / v, h=h)
