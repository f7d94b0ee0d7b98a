"""Polynomial step profiles used to build bump functions and twist families.

A step ``S`` maps ``[0, 1]`` onto ``[0, 1]``, is non-decreasing, and satisfies
``S(1 - t) = 1 - S(t)``.  All derivatives are available in closed form.
"""

from __future__ import annotations

from math import comb

import numpy as np
from numpy.polynomial import Polynomial

from .errors import ParameterError


def smoothstep_polynomial(degree: int) -> Polynomial:
    """Hermite smoothstep of odd ``degree`` (3 -> 3t^2 - 2t^3, 5 -> quintic, ...)."""
    if degree < 3 or degree % 2 == 0:
        raise ParameterError(f"smoothstep degree must be odd and >= 3, got {degree}")
    N = (degree - 1) // 2
    coef = np.zeros(degree + 1)
    for k in range(N + 1):
        coef[N + 1 + k] = comb(N + k, k) * comb(2 * N + 1, N - k) * (-1) ** k
    return Polynomial(coef)


class SmoothStep:
    """Plain Hermite smoothstep; C^((degree-1)/2) when glued to constants."""

    def __init__(self, degree: int = 5):
        self.degree = degree
        self._polys = [smoothstep_polynomial(degree)]
        for _ in range(degree + 1):
            self._polys.append(self._polys[-1].deriv())

    @property
    def smoothness(self) -> int:
        return (self.degree - 1) // 2

    @property
    def max_slope(self) -> float:
        return float(self._polys[1](0.5))

    def __call__(self, t, k: int = 0):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        if k > self.degree:
            return np.zeros_like(t)
        return self._polys[k](t)


class SlopeLimitedStep:
    """Step whose slope is a smooth trapezoid.

    The slope rises from 0 to ``1/(1-a)`` on ``[0, a]`` via a smoothstep,
    stays flat, and falls symmetrically on ``[1-a, 1]``.  The maximum slope is
    ``1/(1-a)`` independently of the degree, which keeps ``1 - delta*psi'``
    bounded away from zero for high-order profiles.
    """

    def __init__(self, degree: int = 5, flat_fraction: float = 0.25):
        if not 0 < flat_fraction < 0.5:
            raise ParameterError("flat_fraction must lie in (0, 1/2)")
        self.degree = degree
        self.a = flat_fraction
        self.height = 1.0 / (1.0 - flat_fraction)
        base = smoothstep_polynomial(degree)
        # antiderivative with A(0) = 0; A(1) = 1/2 by symmetry
        self._polys = [base.integ(), base]
        for _ in range(degree + 1):
            self._polys.append(self._polys[-1].deriv())

    @property
    def smoothness(self) -> int:
        return (self.degree - 1) // 2 + 1

    @property
    def max_slope(self) -> float:
        return self.height

    def _left(self, t, k):
        a, h = self.a, self.height
        if k >= len(self._polys):
            return np.zeros_like(t)
        return h * a ** (1 - k) * self._polys[k](t / a)

    def _middle(self, t, k):
        a, h = self.a, self.height
        if k == 0:
            return h * (a / 2 + (t - a))
        if k == 1:
            return np.full_like(t, h)
        return np.zeros_like(t)

    def __call__(self, t, k: int = 0):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        a = self.a
        out = np.empty_like(t)
        left = t <= a
        right = t >= 1 - a
        mid = ~(left | right)
        out[left] = self._left(t[left], k)
        out[mid] = self._middle(t[mid], k)
        mirrored = self._left(1 - t[right], k)
        if k == 0:
            out[right] = 1 - mirrored
        else:
            out[right] = (-1) ** (k + 1) * mirrored
        return out


def make_step(kind: str, degree: int):
    if kind == "smoothstep":
        return SmoothStep(degree)
    if kind == "slope_limited":
        return SlopeLimitedStep(degree)
    raise ParameterError(f"unknown step kind {kind!r}")
