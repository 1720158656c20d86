"""Travel-time and delay accounting plus space-time speed contours.

Trips are timed from the scheduled demand instant to the exit
detector, so time spent waiting for room to enter the modeled stretch
counts as delay the same as time lost inside it. Delay compares that
span against the free-flow time at the vehicle's own desired speeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import SimulationError

MAINLINE = "mainline"
RAMP = "ramp"

_NEGATIVE_DELAY_TOL = 0.1


@dataclass(frozen=True)
class TripRecord:
    """One completed trip.

    spawn_time is the scheduled demand instant, entry_time the entry
    detector crossing (later than spawn_time whenever the vehicle had
    to wait for room), exit_time the exit detector crossing.
    """

    vehicle_id: int
    vehicle_class: str
    spawn_time: float
    entry_time: float
    exit_time: float
    path_length: float
    ideal_time: float

    def __post_init__(self):
        if self.vehicle_class not in (MAINLINE, RAMP):
            raise ValueError(f"unknown vehicle class {self.vehicle_class!r}")
        if self.exit_time <= self.entry_time:
            raise ValueError("exit_time must be after entry_time")
        if self.entry_time < self.spawn_time:
            raise ValueError("entry_time must not precede spawn_time")
        if self.path_length <= 0.0 or self.ideal_time <= 0.0:
            raise ValueError("path_length and ideal_time must be positive")


def trip_time(trip: TripRecord) -> float:
    """Experienced time from scheduled demand instant to exit."""
    return trip.exit_time - trip.spawn_time


def trip_delay(trip: TripRecord) -> float:
    """Delay of one trip, clamped at zero.

    A measured time materially below the ideal time means the ideal
    time was computed against the wrong reference, so that raises
    instead of silently clamping.
    """
    raw = trip_time(trip) - trip.ideal_time
    if raw < -_NEGATIVE_DELAY_TOL:
        raise SimulationError(
            f"vehicle {trip.vehicle_id} measured {raw:.3f} s below its ideal "
            "travel time; the ideal-time reference is inconsistent")
    return max(raw, 0.0)


@dataclass(frozen=True)
class DelayReport:
    """Vehicle-weighted travel-time and delay means, split by class."""

    count_mainline: int
    count_ramp: int
    mean_tt_mainline: float
    mean_tt_ramp: float
    mean_tt_overall: float
    mean_delay_mainline: float
    mean_delay_ramp: float
    mean_delay_overall: float

    @property
    def count_overall(self) -> int:
        return self.count_mainline + self.count_ramp


def _class_means(trips: Sequence[TripRecord]) -> tuple[int, float, float]:
    if not trips:
        return 0, 0.0, 0.0
    tt = [trip_time(t) for t in trips]
    dl = [trip_delay(t) for t in trips]
    n = len(trips)
    return n, sum(tt) / n, sum(dl) / n


def aggregate_report(trips: Iterable[TripRecord]) -> DelayReport:
    """Build a report from completed trips. Empty classes report 0."""
    trips = list(trips)
    main = [t for t in trips if t.vehicle_class == MAINLINE]
    ramp = [t for t in trips if t.vehicle_class == RAMP]
    n_m, tt_m, dl_m = _class_means(main)
    n_r, tt_r, dl_r = _class_means(ramp)
    n = n_m + n_r
    tt_all = (n_m * tt_m + n_r * tt_r) / n if n else 0.0
    dl_all = (n_m * dl_m + n_r * dl_r) / n if n else 0.0
    return DelayReport(n_m, n_r, tt_m, tt_r, tt_all, dl_m, dl_r, dl_all)


def merge_reports(a: DelayReport, b: DelayReport) -> DelayReport:
    """Combine two reports as if their trips had been pooled.

    Vehicle-weighted, so merging is associative up to float rounding.
    """

    def _merge(na, xa, nb, xb):
        n = na + nb
        return (na * xa + nb * xb) / n if n else 0.0

    n_m = a.count_mainline + b.count_mainline
    n_r = a.count_ramp + b.count_ramp
    tt_m = _merge(a.count_mainline, a.mean_tt_mainline, b.count_mainline, b.mean_tt_mainline)
    tt_r = _merge(a.count_ramp, a.mean_tt_ramp, b.count_ramp, b.mean_tt_ramp)
    dl_m = _merge(a.count_mainline, a.mean_delay_mainline, b.count_mainline, b.mean_delay_mainline)
    dl_r = _merge(a.count_ramp, a.mean_delay_ramp, b.count_ramp, b.mean_delay_ramp)
    n = n_m + n_r
    tt_all = (n_m * tt_m + n_r * tt_r) / n if n else 0.0
    dl_all = (n_m * dl_m + n_r * dl_r) / n if n else 0.0
    return DelayReport(n_m, n_r, tt_m, tt_r, tt_all, dl_m, dl_r, dl_all)


@dataclass(frozen=True)
class SpeedContour:
    """Mean measured speed per (time bin, space bin) cell.

    mean_speed is NaN where a cell collected no samples. Bin edges tile
    the configured window exactly.
    """

    t_edges: np.ndarray
    x_edges: np.ndarray
    mean_speed: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        nt, nx = self.counts.shape
        if self.t_edges.shape != (nt + 1,) or self.x_edges.shape != (nx + 1,):
            raise ValueError("bin edges do not match the grid shape")
        if self.mean_speed.shape != (nt, nx):
            raise ValueError("mean_speed and counts must share a shape")


def speed_contour(count_grid: np.ndarray, sum_grid: np.ndarray,
                  fine_dt: float, fine_dx: float,
                  t_bin: float = 300.0, x_bin: float = 100.0,
                  window: Optional[tuple[float, float]] = None) -> SpeedContour:
    """Re-bin the simulator's fine sampling grids to the requested cells.

    count_grid and sum_grid are (time, space) accumulators at a fine
    resolution (fine_dt seconds by fine_dx meters, both anchored at
    zero). t_bin and x_bin must be multiples of the fine resolution and
    the window must land on bin edges, so cells tile exactly.
    """
    if count_grid.shape != sum_grid.shape:
        raise ValueError("count and sum grids must share a shape")
    t_fac = t_bin / fine_dt
    x_fac = x_bin / fine_dx
    if abs(t_fac - round(t_fac)) > 1e-9 or abs(x_fac - round(x_fac)) > 1e-9:
        raise ValueError("bin sizes must be integer multiples of the sampling grid")
    t_fac, x_fac = int(round(t_fac)), int(round(x_fac))

    nt_fine, nx_fine = count_grid.shape
    if window is None:
        window = (0.0, nx_fine * fine_dx)
    x_lo, x_hi = window
    i_lo = x_lo / fine_dx
    i_hi = x_hi / fine_dx
    if abs(i_lo - round(i_lo)) > 1e-9 or abs(i_hi - round(i_hi)) > 1e-9:
        raise ValueError("window edges must align with the sampling grid")
    i_lo, i_hi = int(round(i_lo)), int(round(i_hi))
    if not 0 <= i_lo < i_hi <= nx_fine:
        raise ValueError(f"window {window} outside the sampled range")
    if (i_hi - i_lo) % x_fac or nt_fine % t_fac:
        raise ValueError("window and duration must hold a whole number of bins")

    cnt = count_grid[:, i_lo:i_hi]
    tot = sum_grid[:, i_lo:i_hi]
    nt = nt_fine // t_fac
    nx = (i_hi - i_lo) // x_fac
    cnt = cnt.reshape(nt, t_fac, nx, x_fac).sum(axis=(1, 3))
    tot = tot.reshape(nt, t_fac, nx, x_fac).sum(axis=(1, 3))
    with np.errstate(invalid="ignore"):
        mean = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
    t_edges = np.arange(nt + 1) * t_bin
    x_edges = x_lo + np.arange(nx + 1) * x_bin
    return SpeedContour(t_edges=t_edges, x_edges=x_edges,
                        mean_speed=mean, counts=cnt.astype(np.int64))


def compare_cases(base: DelayReport, treated: DelayReport) -> dict:
    """Side-by-side comparison with percent reductions.

    Reductions are relative to the base case. A zero base value makes
    the percentage undefined, reported as None.
    """

    def _pct(b, t):
        if b == 0.0:
            return None
        return 100.0 * (b - t) / b

    out = {}
    for field in ("mean_tt_mainline", "mean_tt_ramp", "mean_tt_overall",
                  "mean_delay_mainline", "mean_delay_ramp", "mean_delay_overall"):
        b = getattr(base, field)
        t = getattr(treated, field)
        out[field] = {"base": b, "treated": t, "reduction_pct": _pct(b, t)}
    out["count_base"] = {"mainline": base.count_mainline, "ramp": base.count_ramp}
    out["count_treated"] = {"mainline": treated.count_mainline, "ramp": treated.count_ramp}
    return out
