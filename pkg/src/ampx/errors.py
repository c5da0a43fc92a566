"""Exception types raised across the toolkit."""


class AmpxError(Exception):
    """Base class for all toolkit errors."""


class DelayMismatch(AmpxError, ValueError):
    pass


class DegenerateLoop(AmpxError, ValueError):
    pass


class DelayedFeedbackUnsupported(AmpxError, ValueError):
    pass


class PoleOnAxis(AmpxError, ArithmeticError):
    pass


class DelayedSystem(AmpxError, ValueError):
    pass


class ImproperSystem(AmpxError, ValueError):
    pass


class NonPositiveRatio(AmpxError, ValueError):
    pass


class ZeroStiffness(AmpxError, ValueError):
    pass


class ConfigInconsistent(AmpxError, ValueError):
    pass


class NumericalBlowup(AmpxError, RuntimeError):
    """A simulated state left its configured bound (the loop is unstable)."""


class InsufficientData(AmpxError, ValueError):
    pass


class NoFlatRegion(AmpxError, ValueError):
    pass


class RankDeficient(AmpxError, ValueError):
    pass


class IdentificationError(AmpxError, ValueError):
    """Base for failures of the identification pipeline (CLI exit code 4)."""


class TooShort(IdentificationError):
    pass


class BandTooNoisy(IdentificationError):
    pass


class NoInertialAsymptote(IdentificationError):
    pass


class ConfigError(AmpxError, ValueError):
    """Invalid run configuration; ``line`` points into the source file when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
