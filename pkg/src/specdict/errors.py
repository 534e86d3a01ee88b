"""Exception hierarchy shared by every module of the package."""


class SpecDictError(Exception):
    """Base class for all errors raised by :mod:`specdict`."""


class InvalidShape(SpecDictError, ValueError):
    pass


class DegenerateSpectrum(SpecDictError):
    """Eigenvalues too close to each other (or defective) to separate modes."""


class RankDeficient(SpecDictError):
    pass


class ConvergenceError(SpecDictError):
    pass


class IllConditionedBase(SpecDictError):
    """A Gram matrix ``L^*L`` or ``R^*R`` could not be factorized."""


class StepTooLarge(SpecDictError):
    pass


class InfeasibleAggregate(SpecDictError):
    """The aggregated right factor is numerically rank deficient."""


class InvalidMeasure(SpecDictError, ValueError):
    pass


class CoefficientFitFailed(SpecDictError):
    pass


class TrajectoryTooShort(SpecDictError, ValueError):
    pass


class InsufficientData(SpecDictError, ValueError):
    pass


class SimulationDiverged(SpecDictError):
    pass


class InvalidInput(SpecDictError, ValueError):
    pass


class IoError(SpecDictError, OSError):
    pass
