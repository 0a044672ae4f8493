"""Exception hierarchy shared by every fvlab module."""


class FVLabError(Exception):
    """Base class for all fvlab errors."""


class NotStochastic(FVLabError, ValueError):
    pass


class EmptyDomain(FVLabError, ValueError):
    pass


class NotIrreducible(FVLabError, ValueError):
    pass


class DimensionMismatch(FVLabError, ValueError):
    pass


class StateNotInDomain(FVLabError, KeyError):
    pass


class ChainFileError(FVLabError, ValueError):
    """Raised when a chain file cannot be parsed; message names row/column."""


class EigenFailure(FVLabError, RuntimeError):
    pass


class NegativeTime(FVLabError, ValueError):
    pass


class MassUnderflow(FVLabError, FloatingPointError):
    pass


class InconsistentSpectralData(FVLabError, ValueError):
    pass


class NotCentered(FVLabError, ValueError):
    pass


class NotSymmetric(FVLabError, ValueError):
    pass


class UnstableDrift(FVLabError, ValueError):
    pass


class SingularSystem(FVLabError, RuntimeError):
    pass


class TailBoundFailure(FVLabError, RuntimeError):
    pass


class InvalidParams(FVLabError, ValueError):
    pass


class InvalidStepSize(InvalidParams):
    pass


class TooLarge(FVLabError, ValueError):
    pass


class SingularSolve(FVLabError, RuntimeError):
    pass


class NonRepresentableXi(FVLabError, ValueError):
    pass


class ConfigError(FVLabError, ValueError):
    pass


class ReportWriteFailure(FVLabError, OSError):
    pass


class QuadratureMismatch(FVLabError, RuntimeError):
    """The killed-semigroup and pi-return integrands disagree."""
