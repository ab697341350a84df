"""Exception types shared across the package.

Every failure mode that callers are expected to catch has its own class so
that experiment drivers can distinguish "this run diverged" from "this model
cannot do that" without string matching.
"""


class DiffusimError(Exception):
    """Base class for all package-specific errors."""


class PropagationError(DiffusimError):
    """A process model produced a non-finite state for some member."""


class ObservationError(DiffusimError):
    """An observation model produced a non-finite value for some member."""


class BlowUpError(DiffusimError):
    """A fixed-step integrator left the finite range mid-trajectory."""


class SolverError(DiffusimError):
    """The adaptive reverse-time sampler exceeded its step budget or failed."""


class DegeneracyError(DiffusimError):
    """All particle weights vanished (every log-weight is -inf)."""


class CapabilityError(DiffusimError):
    """The requested operation is outside what this object supports."""
