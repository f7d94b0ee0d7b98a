"""Exception hierarchy shared by all modules."""


class ClosingLabError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(ClosingLabError, ValueError):
    """A constructor or operation received parameters violating its contract."""


class OutOfSegment(ClosingLabError, ValueError):
    """A point lies outside the transversal segment."""


class OrbitStop(ClosingLabError):
    """The map is undefined at ``point``; orbits stop here."""

    kind = "stop"

    def __init__(self, point, message=None):
        self.point = point
        super().__init__(message or f"{self.kind} at x={point!r}")


class SaddleHit(OrbitStop):
    """The point is a branch-domain endpoint interior to the segment."""

    kind = "saddle_hit"

    def __init__(self, point, endpoint=None, message=None):
        self.endpoint = point if endpoint is None else endpoint
        super().__init__(point, message)


class Discontinuity(SaddleHit):
    """Breakpoint of an interval exchange."""

    kind = "discontinuity"


class LeftDomain(OrbitStop):
    """The point lies in a gap of the domain (or on the segment boundary)."""

    kind = "left_domain"


class DomainExhausted(ClosingLabError):
    """dom(P^n) is empty."""


class CertificateFailure(ClosingLabError):
    def __init__(self, best_sup, best_n, kappa_target):
        self.best_sup = best_sup
        self.best_n = best_n
        self.kappa_target = kappa_target
        super().__init__(
            f"no n in the search range with sup|DP^n| < {kappa_target}; best sup {best_sup:.6g} at n = {best_n}"
        )


class HypothesisViolation(ClosingLabError):
    """A hypothesis of the closing argument does not hold for the input."""


class SearchFailure(ClosingLabError):
    """The closing search did not find a return window within its depth limit."""


class MajorantFailure(ClosingLabError):
    def __init__(self, message, measure_index=None, integral=None):
        self.measure_index = measure_index
        self.integral = integral
        super().__init__(message)


class ShootingError(ClosingLabError):
    """The calibration target could not be bracketed."""


class GeometryError(ClosingLabError):
    """A flow-box trajectory would leave the rectangle."""


class ScenarioError(ClosingLabError, ValueError):
    """A scenario file failed to parse or validate."""
