"""Exception hierarchy shared by every module of the package."""


class KatoError(Exception):
    """Base class; ``witness`` carries whatever data located the failure."""

    def __init__(self, message="", witness=None):
        super().__init__(message)
        self.witness = witness


class NonFiniteField(KatoError):
    pass


class ProjectionDiverged(KatoError):
    pass


class InsideObstacle(KatoError):
    pass


class StepFailure(KatoError):
    pass


class LeftDomain(KatoError):
    pass


class GrazingAmbiguity(KatoError):
    pass


class ChartDomainExceeded(KatoError):
    pass


class NotHyperbolic(KatoError):
    pass


class DerivativeUnstable(KatoError):
    pass


class UndeterminedContact(KatoError):
    pass


class EventBudgetExceeded(KatoError):
    pass


class NotFoundWithinBudget(KatoError):
    pass


class RegimeViolation(KatoError):
    pass


class InequalityViolated(KatoError):
    pass


class GridTooCoarse(KatoError):
    pass


class QuadratureNotConverged(KatoError):
    pass


class SpectrumNotCovered(KatoError):
    pass


class SolveFailed(KatoError):
    pass


class ZeroData(KatoError):
    pass


class AliasRisk(KatoError):
    pass


class ConfigInvalid(KatoError):
    pass
