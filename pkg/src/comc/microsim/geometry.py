"""Network layout for the two-lane freeway with a one-lane on-ramp.

Everything shares one longitudinal axis. The mainline runs from 0 to
``total_len``. The ramp is aligned so that its end coincides with the
merging point MP; ramp vehicles continue onto the acceleration lane,
which spans the merge segment, and must enter the outer freeway lane
before it ends. The end-of-merging position EM sits d' past MP.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class NetworkGeometry:
    upstream_len: float = 2000.0
    merge_len: float = 240.0
    downstream_len: float = 500.0
    ramp_len: float = 700.0
    mainline_lanes: int = 2
    mp_position: float = 2000.0
    em_position: float = 2457.2
    wp_position: float = 1700.0

    def __post_init__(self):
        for name, value in (
            ("upstream_len", self.upstream_len),
            ("merge_len", self.merge_len),
            ("downstream_len", self.downstream_len),
            ("ramp_len", self.ramp_len),
        ):
            if value <= 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.mainline_lanes != 2:
            raise ValueError("exactly two mainline lanes are supported")
        if self.mp_position != self.upstream_len:
            raise ValueError("the merging point must sit at the end of the upstream segment")
        if not self.mp_position <= self.em_position <= self.total_len:
            raise ValueError("em_position must lie between MP and the network end")
        if not self.ramp_origin <= self.wp_position < self.mp_position:
            raise ValueError("wp_position must lie on the ramp upstream of MP")

    @property
    def total_len(self) -> float:
        return self.upstream_len + self.merge_len + self.downstream_len

    @property
    def accel_end(self) -> float:
        return self.mp_position + self.merge_len

    @property
    def ramp_origin(self) -> float:
        return self.mp_position - self.ramp_len

    @property
    def s_accel(self) -> float:
        """Launch distance from the waiting position to MP."""
        return self.mp_position - self.wp_position


def standard_geometry(d_prime: float = 457.2, s_accel: float = 300.0) -> NetworkGeometry:
    """The case-study network with EM and WP derived from the plan
    geometry parameters."""
    base = NetworkGeometry()
    return NetworkGeometry(
        upstream_len=base.upstream_len,
        merge_len=base.merge_len,
        downstream_len=base.downstream_len,
        ramp_len=base.ramp_len,
        mainline_lanes=base.mainline_lanes,
        mp_position=base.mp_position,
        em_position=base.mp_position + d_prime,
        wp_position=base.mp_position - s_accel,
    )
