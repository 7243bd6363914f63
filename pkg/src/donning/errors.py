"""Exception types shared across the package."""


class DonningError(Exception):
    """Base class for all package errors."""


class ConfigError(DonningError):
    """Invalid or inconsistent configuration."""


class DegenerateGeometryError(DonningError):
    """Geometry too degenerate to operate on (collinear loop, zero-area plane fit)."""


class UnreachableVertexError(DonningError):
    """Mesh vertices not edge-connected to the feature loop."""

    def __init__(self, indices):
        self.indices = sorted(int(i) for i in indices)
        super().__init__(f"vertices unreachable from feature loop: {self.indices}")


class TopologyError(DonningError):
    """Mesh connectivity does not support the requested operation."""


class LimitViolationError(DonningError):
    """A joint angle or velocity is outside its configured limits."""

    def __init__(self, dof, value, lo, hi):
        self.dof = int(dof)
        super().__init__(f"dof {dof}: value {value} outside limits [{lo}, {hi}]")


class InvalidActionError(DonningError):
    """Action vector has the wrong shape or non-finite entries."""


class SolverDivergenceError(DonningError):
    """Cloth solver produced non-finite positions."""


class ObservationError(DonningError):
    """Observation assembly received non-finite inputs."""


class UsageError(DonningError):
    """API called out of order (e.g. step after done, unfitted feature plane)."""


class IncompatibleCheckpointError(DonningError):
    """Checkpoint dimensions do not match the requested environment/policy."""
