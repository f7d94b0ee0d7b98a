"""Interval exchange transformations (with flips) on the circle R/Z."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import Discontinuity, ParameterError
from .segment_map import (
    ENDPOINT_TOL,
    Affine,
    Branch,
    ReturnMap,
    Segment,
)

GOLDEN = (math.sqrt(5) - 1) / 2


def _circle_dist(x: float, y: float) -> float:
    d = abs(x - y) % 1.0
    return min(d, 1.0 - d)


@dataclass(frozen=True)
class Iet:
    """Intervals ``I_1..I_m`` of the given lengths, laid out left to right on
    ``[0, 1)``; interval ``i`` is moved to slot ``permutation[i]`` (1-based) of
    the image and reversed when ``flips[i]`` is set.
    """

    lengths: tuple
    permutation: tuple
    flips: tuple = None

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.lengths)
        perm = tuple(int(p) for p in self.permutation)
        flips = tuple(bool(f) for f in (self.flips or [False] * len(lengths)))
        m = len(lengths)
        if m == 0 or len(perm) != m or len(flips) != m:
            raise ParameterError("lengths, permutation and flips must have equal nonzero size")
        if any(not (v > 0) for v in lengths):
            raise ParameterError("interval lengths must be positive")
        if abs(sum(lengths) - 1.0) > 1e-12:
            raise ParameterError(f"lengths must sum to 1, got {sum(lengths)!r}")
        if sorted(perm) != list(range(1, m + 1)):
            raise ParameterError(f"permutation must be a bijection on 1..{m}, got {perm}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "permutation", perm)
        object.__setattr__(self, "flips", flips)
        lefts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        by_slot = sorted(range(m), key=lambda i: perm[i])
        image_lefts = np.empty(m)
        acc = 0.0
        for i in by_slot:
            image_lefts[i] = acc
            acc += lengths[i]
        object.__setattr__(self, "_lefts", lefts)
        object.__setattr__(self, "_image_lefts", image_lefts)

    @property
    def m(self) -> int:
        return len(self.lengths)

    @property
    def segment(self) -> Segment:
        return Segment(0.0, 1.0, 0.0)

    @property
    def breakpoints(self) -> list[float]:
        """Left endpoints of the exchanged intervals, starting with 0."""
        return [float(v) for v in self._lefts]

    @property
    def endpoints(self) -> list[float]:
        """Interior breakpoints, where E is undefined."""
        return self.breakpoints[1:]

    def _index(self, x: float) -> int:
        return int(np.searchsorted(self._lefts, x, side="right") - 1)

    def _apply(self, x: float) -> float:
        """Right-continuous evaluation, defined at breakpoints too."""
        x = x - math.floor(x)
        i = self._index(x)
        u = x - self._lefts[i]
        if self.flips[i]:
            y = self._image_lefts[i] + self.lengths[i] - u
        else:
            y = self._image_lefts[i] + u
        return y - math.floor(y)

    def _check(self, x: float) -> float:
        x = x - math.floor(x)
        for b in self.endpoints:
            if abs(x - b) <= ENDPOINT_TOL:
                raise Discontinuity(x, b)
        return x

    def eval(self, x: float) -> float:
        return self._apply(self._check(x))

    def deriv(self, x: float) -> float:
        x = self._check(x)
        return -1.0 if self.flips[self._index(x)] else 1.0

    def branch_index_array(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        xs = xs - np.floor(xs)
        idx = np.searchsorted(self._lefts, xs, side="right") - 1
        inner = np.asarray(self.endpoints)
        if inner.size:
            near = np.min(np.abs(xs[..., None] - inner), axis=-1) <= ENDPOINT_TOL
            idx = np.where(near | np.isnan(xs), -1, idx)
        return idx

    def eval_array(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        red = xs - np.floor(xs)
        idx = self.branch_index_array(xs)
        safe = np.where(idx >= 0, idx, 0)
        u = red - self._lefts[safe]
        lens = np.asarray(self.lengths)[safe]
        fl = np.asarray(self.flips)[safe]
        y = self._image_lefts[safe] + np.where(fl, lens - u, u)
        y = y - np.floor(y)
        return np.where(idx >= 0, y, np.nan)

    def deriv_array(self, xs) -> np.ndarray:
        idx = self.branch_index_array(xs)
        safe = np.where(idx >= 0, idx, 0)
        d = np.where(np.asarray(self.flips)[safe], -1.0, 1.0)
        return np.where(idx >= 0, d, np.nan)

    def preimage(self, a: float, b: float) -> list[tuple[float, float]]:
        """Intervals of [0, 1) mapped into (a, b) for 0 <= a < b <= 1."""
        out = []
        for i in range(self.m):
            il = self._image_lefts[i]
            ir = il + self.lengths[i]
            lo, hi = max(a, il), min(b, ir)
            if lo < hi:
                if self.flips[i]:
                    pl = self._lefts[i] + (ir - hi)
                    pr = self._lefts[i] + (ir - lo)
                else:
                    pl = self._lefts[i] + (lo - il)
                    pr = self._lefts[i] + (hi - il)
                out.append((float(pl), float(pr)))
        return out

    def abs_deriv_sup(self) -> float:
        return 1.0


def rotation(alpha: float) -> Iet:
    """Rotation x -> x + alpha mod 1 as a two-interval exchange."""
    alpha = alpha % 1.0
    if alpha == 0:
        return Iet((1.0,), (1,), (False,))
    return Iet((1.0 - alpha, alpha), (2, 1), (False, False))


def iet_eval(E: Iet, x: float) -> float:
    return E.eval(x)


def iet_orbit(E: Iet, x: float, n: int) -> list[float]:
    """Forward orbit of length n+1, truncated after the first breakpoint hit."""
    if n < 0:
        raise ParameterError("n must be >= 0")
    orbit = [x - math.floor(x)]
    for _ in range(n):
        try:
            orbit.append(E.eval(orbit[-1]))
        except Discontinuity:
            break
    return orbit


@dataclass(frozen=True)
class KeaneReport:
    minimal_so_far: bool
    depth: int
    connection: tuple | None = None  # (source breakpoint, step, target)

    def __str__(self):
        if self.minimal_so_far:
            return f"minimal-so-far (depth {self.depth})"
        s, k, t = self.connection
        return f"connection found: E^{k}({s:.12g}) = {t:.12g}"


def keane_check(E: Iet, depth: int) -> KeaneReport:
    """Scan breakpoint orbits for connections up to ``depth`` steps.

    A connection is an orbit of a breakpoint (0 included) landing on an
    interior breakpoint, or returning to its own start.
    """
    if depth < 1:
        raise ParameterError("depth must be >= 1")
    targets = E.endpoints
    for s in E.breakpoints:
        y = s
        for k in range(1, depth + 1):
            y = E._apply(y)
            for t in targets:
                if _circle_dist(y, t) <= ENDPOINT_TOL:
                    return KeaneReport(False, depth, (s, k, t))
            if _circle_dist(y, s) <= ENDPOINT_TOL:
                return KeaneReport(False, depth, (s, k, s))
    return KeaneReport(True, depth)


def as_return_map(E: Iet, cut: float = 0.0) -> ReturnMap:
    """Unroll E to the segment [cut, cut + 1] with slope +-1 affine branches."""
    if not 0 <= cut < 1:
        raise ParameterError("cut must lie in [0, 1)")

    def lift(x):
        return cut + ((x - cut) % 1.0)

    points = {cut, cut + 1.0}
    for b in E.breakpoints:
        points.add(lift(b))
    for i in range(E.m):
        il = E._image_lefts[i]
        u = (cut - il) % 1.0
        if 0 < u < E.lengths[i]:
            pre = E._lefts[i] + (E.lengths[i] - u if E.flips[i] else u)
            points.add(lift(pre))
    pts = sorted(points)
    branches = []
    for u, v in zip(pts, pts[1:]):
        if v - u <= ENDPOINT_TOL:
            continue
        mid = 0.5 * (u + v)
        slope = -1.0 if E.flips[E._index(mid % 1.0)] else 1.0
        offset = lift(E._apply(mid % 1.0)) - slope * mid
        f = Affine(slope, offset)
        if branches and branches[-1].map == f:
            branches[-1] = Branch((branches[-1].domain[0], v), f)
        else:
            branches.append(Branch((u, v), f))
    return ReturnMap(Segment(cut, cut + 1.0, cut), branches)
