"""Reference return maps used by the bundled scenarios and the tests."""

from __future__ import annotations

import math
from functools import lru_cache

from .errors import ParameterError
from .segment_map import Affine, Branch, Power, ReturnMap, Segment


def toy_contraction(slope: float = 0.05, offset: float = -0.001) -> ReturnMap:
    """Single full affine branch on (-1, 0.9), marked point 0."""
    seg = Segment(-1.0, 0.9, 0.0)
    return ReturnMap(seg, [Branch((-1.0, 0.9), Affine(slope, offset))])


def two_branch() -> ReturnMap:
    seg = Segment(-1.0, 0.9, 0.0)
    return ReturnMap(
        seg,
        [
            Branch((-1.0, 0.1), Affine(0.5, -0.001)),
            Branch((0.1, 0.6), Affine(0.5, -0.3)),
        ],
    )


def folded_slopes(s: float = 0.8) -> ReturnMap:
    """Two branches of slope +s and -s on [-1, 1] meeting at 0."""
    seg = Segment(-1.0, 1.0, 0.0)
    return ReturnMap(
        seg,
        [
            Branch((-1.0, 0.0), Affine(s, 0.3)),
            Branch((0.0, 1.0), Affine(-s, 0.2)),
        ],
    )


def power_branch(exponent: float = 2.0) -> ReturnMap:
    """x -> x**exponent on (0, 1); |DP| -> 0 at the left endpoint."""
    seg = Segment(0.0, 1.0, 0.5)
    return ReturnMap(seg, [Branch((0.0, 1.0), Power(0.0, 1.0, 0.0, exponent))])


def _rotation_number(mu: float, s_stay: float, s_wrap: float, n: int, x: float = 0.3) -> float:
    """(F^n(x) - x)/n for the circle lift F; within 1/n of the rotation number."""
    c = (1.0 - mu) / s_stay
    x0, w = x, 0
    for _ in range(n):
        if x < c:
            x = mu + s_stay * x
        else:
            x = s_wrap * (x - c)
            w += 1
    return (w + x - x0) / n


@lru_cache(maxsize=None)
def _plateau_centre(p: int, q: int, s_stay: float, s_wrap: float, n: int) -> float:
    lo0, hi0 = 1.0 - s_stay + 1e-12, 1.0 - 1e-12
    slack = 2.0 / n

    def edge(target):
        lo, hi = lo0, hi0
        for _ in range(55):
            mid = 0.5 * (lo + hi)
            if _rotation_number(mid, s_stay, s_wrap, n) > target:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    return 0.5 * (edge(p / q - slack) + edge(p / q + slack))


def contracted_rotation(
    p: int = 13,
    q: int = 21,
    slope_stay: float = 0.5,
    slope_wrap: float = 0.8,
    n_orbit: int = 4000,
) -> ReturnMap:
    """Contracting gap map of the circle locked to rotation number p/q, cut open at 0.

    On (0, c) the map is x -> mu + slope_stay*x (image (mu, 1)); on (c, 1) it
    is x -> slope_wrap*(x - c) (image (0, slope_wrap*(1 - c))).  The lift is
    monotone in mu, and mu is put at the centre of the parameter interval on
    which the rotation number equals p/q.  There the attractor is a periodic
    orbit that keeps away from the cut; with an irrational rotation number
    the attractor would be a Cantor set accumulating on the cut point.

    Fibonacci ratios give itineraries that follow the golden rotation.
    """
    if not (0 < p < q and math.gcd(p, q) == 1):
        raise ParameterError("need coprime 0 < p < q")
    if not 0 < slope_stay < 1:
        raise ParameterError("slope_stay must lie in (0, 1)")
    if slope_wrap <= 0:
        raise ParameterError("slope_wrap must be positive")
    mu = _plateau_centre(p, q, float(slope_stay), float(slope_wrap), n_orbit)
    c = (1.0 - mu) / slope_stay
    if slope_wrap * (1.0 - c) > mu:
        raise ParameterError("slopes give overlapping images; map is not injective")
    seg = Segment(0.0, 1.0, 0.0)
    return ReturnMap(
        seg,
        [
            Branch((0.0, c), Affine(slope_stay, mu)),
            Branch((c, 1.0), Affine(slope_wrap, -slope_wrap * c)),
        ],
    )


GOLDEN_ROTATION_NUMBER = (math.sqrt(5) - 1) / 2
