"""Exception hierarchy.

Every error raised by the library derives from :class:`WSBLabError` so the CLI
can map it to a machine-readable record and a nonzero exit code.
"""


class WSBLabError(Exception):
    """Base class for library errors."""


class Singularity(WSBLabError, ValueError):
    """A quantity was evaluated at (or too close to) a primary."""


class Collision(WSBLabError):
    """A trajectory crossed the collision guard around a primary."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class StepFailure(WSBLabError):
    pass


class EnergyDriftExceeded(WSBLabError):
    pass


class NoAdmissibleEllipse(WSBLabError, ValueError):
    pass


class AmbiguousEllipse(WSBLabError, ValueError):
    pass


class HyperbolicOsculation(WSBLabError, ValueError):
    pass


class SpectrumMismatch(WSBLabError):
    pass


class NoConvergence(WSBLabError):
    pass


class SingularCorrection(WSBLabError):
    pass


class OutOfRange(WSBLabError, ValueError):
    pass


class NonHyperbolic(WSBLabError):
    pass


class WrongBranch(WSBLabError):
    pass


class CutNotReached(WSBLabError):
    pass


class CutNotClosed(WSBLabError):
    pass


class NotOnBoundary(WSBLabError, ValueError):
    pass


class NotIsolating(WSBLabError):
    pass


class EmptyRange(WSBLabError):
    pass


class BracketInvalid(WSBLabError, ValueError):
    pass


class ConfigError(WSBLabError, ValueError):
    pass
