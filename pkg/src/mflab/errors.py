"""Exception hierarchy shared by every mflab module."""


class MflabError(Exception):
    """Base class for all library errors."""


class InvalidInputError(MflabError, ValueError):
    """Argument violates a documented precondition."""


class RangeError(MflabError, ArithmeticError):
    """Result would overflow or leave the domain where a formula is valid."""


class ResourceError(MflabError):
    """Request exceeds the desk-scale resource caps."""


class CutLocusError(MflabError):
    """A sphere primitive was asked for a minimal geodesic between antipodes."""


class DivergenceError(MflabError):
    """A simulated state left the finite range.

    Carries the simulation time of the blow-up and, when known, the replica
    and particle indices that diverged.
    """

    def __init__(self, message, time=None, replica=None, particle=None):
        super().__init__(message)
        self.time = time
        self.replica = replica
        self.particle = particle


class ConfigError(MflabError):
    """Experiment configuration is malformed or names an unknown entry."""
