"""Unit conversion helpers.

All internal computation uses SI units: metres, seconds, vehicles per
second. Config files and reports use the conventional traffic units
(km/h for speeds, veh/h for flows), so conversion happens exactly once
at each boundary.
"""

KMH_PER_MS = 3.6
SECONDS_PER_HOUR = 3600.0


def kmh_to_ms(speed_kmh: float) -> float:
    return speed_kmh / KMH_PER_MS


def ms_to_kmh(speed_ms: float) -> float:
    return speed_ms * KMH_PER_MS


def vph_to_vps(flow_vph: float) -> float:
    return flow_vph / SECONDS_PER_HOUR


def vps_to_vph(flow_vps: float) -> float:
    return flow_vps * SECONDS_PER_HOUR
