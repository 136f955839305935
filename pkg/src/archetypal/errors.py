"""Exception types raised across the package."""


class ArchetypalError(Exception):
    """Base class for every error raised by this package."""


class InvalidLaw(ArchetypalError, ValueError):
    pass


class DegenerateZero(ArchetypalError):
    """Raised where a quantity is undefined because P(alpha = 0) > 0."""


class RuleUnconstructible(ArchetypalError):
    """Stopping rule needs exact bookkeeping the law does not provide."""


class AllPathsCapped(ArchetypalError):
    pass


class CapExceeded(ArchetypalError):
    pass


class RequiresPositiveAlpha(ArchetypalError):
    pass


class QuadratureUnderflow(ArchetypalError):
    pass


class GridTooCoarse(ArchetypalError):
    pass


class EmptySample(ArchetypalError, ValueError):
    pass


class NotCritical(ArchetypalError):
    pass


class AllResonant(ArchetypalError):
    def __init__(self, c: float):
        super().__init__(f"all rho_i coincide: law is in resonance with c = {c!r}")
        self.c = c


class Inapplicable(ArchetypalError):
    pass
