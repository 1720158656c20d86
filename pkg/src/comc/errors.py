"""Exception types shared across the package."""


class ComcError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ComcError):
    """Raised when a scenario or settings document fails validation.

    The message always names the offending field with a dotted path,
    e.g. ``demand.ramp_flow``, so batch users can fix files quickly.
    """


class InfeasibleDemandError(ComcError):
    """Raised when a demand level cannot be carried by the roadway.

    Covers both a flow above lane capacity and a degenerate effective
    outer-lane flow (reserved-capacity absorption at or above the
    whole demand).
    """


class InfeasibleProblemError(ComcError):
    """Raised when no control plan satisfies the constraints."""


class SimulationError(ComcError):
    """Raised when a run violates an internal consistency check."""
