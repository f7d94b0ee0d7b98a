"""Piecewise-smooth return maps on a transversal segment.

A :class:`ReturnMap` is a finite list of strictly monotone C^1 branches on
pairwise disjoint open subintervals of a :class:`Segment`.  Points outside the
union of branch domains either sit on a branch endpoint (the orbit runs into
a saddle) or in a gap.

Branch maps are built from two primitives with exact derivatives:

* :class:`Affine` -- ``x -> slope * x + offset``
* :class:`Power` -- ``x -> value + scale * sign(x - center) * |x - center|**exponent``

and :class:`Composite`, the composition of a sequence of primitives.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    CertificateFailure,
    DomainExhausted,
    LeftDomain,
    OrbitStop,
    OutOfSegment,
    ParameterError,
    SaddleHit,
)

ENDPOINT_TOL = 1e-12
N_MAX = 64
DEFAULT_GRID = 4097


@dataclass(frozen=True)
class Segment:
    lo: float
    hi: float
    marked_point: float = 0.0

    def __post_init__(self):
        vals = (self.lo, self.hi, self.marked_point)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError(f"segment fields must be finite: {vals}")
        if not self.lo < self.hi:
            raise ParameterError(f"segment needs lo < hi, got [{self.lo}, {self.hi}]")
        if not self.lo <= self.marked_point <= self.hi:
            raise ParameterError(
                f"marked point {self.marked_point} outside [{self.lo}, {self.hi}]"
            )

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def c(self) -> float:
        """Distance from the marked point to the nearer end of the segment."""
        return min(self.marked_point - self.lo, self.hi - self.marked_point)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Affine:
    slope: float
    offset: float = 0.0

    def __post_init__(self):
        if self.slope == 0 or not math.isfinite(self.slope):
            raise ParameterError(f"affine branches need a finite nonzero slope, got {self.slope}")

    def __call__(self, x):
        return self.slope * x + self.offset

    def deriv(self, x):
        return self.slope * np.ones_like(x) if isinstance(x, np.ndarray) else self.slope

    def inverse(self, y):
        return (y - self.offset) / self.slope

    def abs_deriv_sup(self, a: float, b: float) -> float:
        return abs(self.slope)

    @property
    def increasing(self) -> bool:
        return self.slope > 0


@dataclass(frozen=True)
class Power:
    value: float
    scale: float
    center: float
    exponent: float = 2.0

    def __post_init__(self):
        if self.exponent < 1:
            raise ParameterError("power branches need exponent >= 1")
        if self.scale == 0:
            raise ParameterError("power branches need nonzero scale")

    def __call__(self, x):
        u = x - self.center
        return self.value + self.scale * np.sign(u) * np.abs(u) ** self.exponent

    def deriv(self, x):
        u = np.abs(x - self.center)
        return self.scale * self.exponent * u ** (self.exponent - 1)

    def inverse(self, y):
        v = (y - self.value) / self.scale
        return self.center + np.sign(v) * np.abs(v) ** (1.0 / self.exponent)

    def abs_deriv_sup(self, a: float, b: float) -> float:
        far = max(abs(a - self.center), abs(b - self.center))
        return abs(self.scale) * self.exponent * far ** (self.exponent - 1)

    @property
    def increasing(self) -> bool:
        return self.scale > 0


@dataclass(frozen=True)
class Composite:
    """``pieces[-1] o ... o pieces[0]``."""

    pieces: tuple

    def __call__(self, x):
        for p in self.pieces:
            x = p(x)
        return x

    def deriv(self, x):
        d = 1.0
        for p in self.pieces:
            d = d * p.deriv(x)
            x = p(x)
        return d

    def inverse(self, y):
        for p in reversed(self.pieces):
            y = p.inverse(y)
        return y

    def abs_deriv_sup(self, a: float, b: float) -> float:
        bound = 1.0
        for p in self.pieces:
            bound *= p.abs_deriv_sup(a, b)
            a, b = sorted((float(p(a)), float(p(b))))
        return bound

    @property
    def increasing(self) -> bool:
        return sum(not p.increasing for p in self.pieces) % 2 == 0


def compose(maps: Sequence) -> Affine | Power | Composite:
    """Compose maps applied left to right, folding adjacent affine pieces."""
    flat = []
    for m in maps:
        flat.extend(m.pieces if isinstance(m, Composite) else [m])
    folded = []
    for m in flat:
        if folded and isinstance(m, Affine) and isinstance(folded[-1], Affine):
            prev = folded.pop()
            m = Affine(m.slope * prev.slope, m.slope * prev.offset + m.offset)
        folded.append(m)
    if len(folded) == 1:
        return folded[0]
    return Composite(tuple(folded))


def image_interval(f, a: float, b: float) -> tuple[float, float]:
    fa, fb = float(f(a)), float(f(b))
    return (fa, fb) if fa <= fb else (fb, fa)


# ---------------------------------------------------------------------------
# branches and maps


@dataclass(frozen=True)
class Branch:
    domain: tuple[float, float]
    map: Affine | Power | Composite

    def __post_init__(self):
        l, r = self.domain
        if not l < r:
            raise ParameterError(f"branch domain must satisfy l < r, got {self.domain}")

    @property
    def orientation(self) -> int:
        return 1 if self.map.increasing else -1

    @property
    def image(self) -> tuple[float, float]:
        return image_interval(self.map, *self.domain)

    def lateral_abs_deriv(self) -> tuple[float, float]:
        l, r = self.domain
        return abs(float(self.map.deriv(l))), abs(float(self.map.deriv(r)))


class ReturnMap:
    """Forward return map of a segment to itself, defined on finitely many open intervals."""

    def __init__(self, segment: Segment, branches: Sequence[Branch]):
        self.segment = segment
        self.branches = tuple(sorted(branches, key=lambda b: b.domain[0]))
        if not self.branches:
            raise ParameterError("a return map needs at least one branch")
        lo, hi = segment.lo, segment.hi
        for prev, nxt in zip(self.branches, self.branches[1:]):
            if nxt.domain[0] < prev.domain[1]:
                raise ParameterError(f"overlapping branch domains {prev.domain} {nxt.domain}")
        for b in self.branches:
            l, r = b.domain
            if l < lo or r > hi:
                raise ParameterError(f"branch domain {b.domain} not inside [{lo}, {hi}]")
            il, ir = b.image
            tol = ENDPOINT_TOL * max(1.0, abs(lo), abs(hi))
            if il < lo - tol or ir > hi + tol:
                raise ParameterError(
                    f"branch on {b.domain} has image ({il:.6g}, {ir:.6g}) outside the segment"
                )
            # strict monotonicity is guaranteed by the primitives; check C^1 finiteness
            dl, dr = b.lateral_abs_deriv()
            if not (math.isfinite(dl) and math.isfinite(dr)):
                raise ParameterError(f"unbounded derivative on branch {b.domain}")
        self._lefts = [b.domain[0] for b in self.branches]
        self._rights = [b.domain[1] for b in self.branches]
        self._interior_endpoints = sorted(
            {e for b in self.branches for e in b.domain if lo < e < hi}
        )

    def __repr__(self):
        return f"ReturnMap({self.segment!r}, {len(self.branches)} branches)"

    @property
    def endpoints(self) -> list[float]:
        """Branch-domain endpoints interior to the segment (saddle points)."""
        return list(self._interior_endpoints)

    @property
    def gaps(self) -> list[tuple[float, float]]:
        out = []
        prev = self.segment.lo
        for b in self.branches:
            if b.domain[0] > prev:
                out.append((prev, b.domain[0]))
            prev = b.domain[1]
        if prev < self.segment.hi:
            out.append((prev, self.segment.hi))
        return out

    def locate(self, x: float) -> int:
        """Index of the branch whose domain contains ``x``; raises OrbitStop otherwise."""
        if not (self.segment.lo <= x <= self.segment.hi):
            raise OutOfSegment(f"x={x!r} outside [{self.segment.lo}, {self.segment.hi}]")
        for e in self._near_endpoints(x):
            if abs(x - e) <= ENDPOINT_TOL:
                if self.segment.lo < e < self.segment.hi:
                    raise SaddleHit(x, e)
                raise LeftDomain(x)
        i = bisect.bisect_right(self._lefts, x) - 1
        if i >= 0 and x < self._rights[i]:
            return i
        raise LeftDomain(x)

    def _near_endpoints(self, x):
        i = bisect.bisect_left(self._lefts, x)
        for j in (i - 1, i):
            if 0 <= j < len(self.branches):
                yield from self.branches[j].domain

    def eval(self, x: float) -> float:
        return float(self.branches[self.locate(x)].map(x))

    def deriv(self, x: float) -> float:
        return float(self.branches[self.locate(x)].map.deriv(x))

    def branch_index_array(self, xs: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`locate`; -1 marks points where the map is undefined."""
        xs = np.asarray(xs, dtype=float)
        lefts = np.asarray(self._lefts)
        rights = np.asarray(self._rights)
        idx = np.searchsorted(lefts, xs, side="right") - 1
        ok = (idx >= 0) & ~np.isnan(xs)
        safe = np.where(ok, idx, 0)
        ok &= xs < rights[safe]
        ok &= xs - lefts[safe] > ENDPOINT_TOL
        ok &= rights[safe] - xs > ENDPOINT_TOL
        return np.where(ok, idx, -1)

    def eval_array(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        idx = self.branch_index_array(xs)
        out = np.full(xs.shape, np.nan)
        for i, b in enumerate(self.branches):
            m = idx == i
            if m.any():
                out[m] = b.map(xs[m])
        return out

    def deriv_array(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        idx = self.branch_index_array(xs)
        out = np.full(xs.shape, np.nan)
        for i, b in enumerate(self.branches):
            m = idx == i
            if m.any():
                out[m] = b.map.deriv(xs[m])
        return out

    def preimage(self, a: float, b: float) -> list[tuple[float, float]]:
        """Intervals whose image under the map lies in ``(a, b)``, branch by branch."""
        out = []
        for br in self.branches:
            il, ir = br.image
            lo, hi = max(a, il), min(b, ir)
            if lo < hi:
                out.append(image_interval(br.map.inverse, lo, hi))
        return out

    def abs_deriv_sup(self) -> float:
        return max(b.map.abs_deriv_sup(*b.domain) for b in self.branches)


# ---------------------------------------------------------------------------
# orbits


@dataclass(frozen=True)
class StopReason:
    kind: str  # "completed" | "saddle_hit" | "left_domain"
    step: int
    point: float | None = None

    @property
    def completed(self) -> bool:
        return self.kind == "completed"


def map_eval(P, x: float) -> float:
    """Evaluate P at x, raising SaddleHit / LeftDomain / OutOfSegment."""
    return P.eval(x)


def map_deriv(P, x: float) -> float:
    return P.deriv(x)


def iterate(P, x: float, n: int) -> tuple[list[float], StopReason]:
    """Forward orbit ``[x, P(x), ..., P^n(x)]``, truncated where P is undefined.

    ``P`` may be anything with an ``eval`` method raising :class:`OrbitStop`
    (return maps, interval exchanges, perturbed maps).
    """
    if n < 0:
        raise ParameterError("n must be >= 0")
    orbit = [float(x)]
    if not P.segment.contains(x):
        raise OutOfSegment(f"x={x!r} outside [{P.segment.lo}, {P.segment.hi}]")
    for k in range(n):
        try:
            orbit.append(P.eval(orbit[-1]))
        except SaddleHit as e:
            return orbit, StopReason("saddle_hit", k, e.point)
        except OrbitStop as e:
            return orbit, StopReason("left_domain", k, e.point)
    return orbit, StopReason("completed", n)


# ---------------------------------------------------------------------------
# cylinders: intervals of dom(P^n)


@dataclass(frozen=True)
class Cylinder:
    """Open interval of dom(P^n) on which the itinerary is constant."""

    left: float
    right: float
    itinerary: tuple

    @property
    def depth(self) -> int:
        return len(self.itinerary)


def _cylinder_map(P: ReturnMap, itinerary) -> Affine | Power | Composite:
    return compose([P.branches[i].map for i in itinerary])


def _refine(P: ReturnMap, cyl: Cylinder, max_len: float = 0.0) -> list[Cylinder]:
    f = _cylinder_map(P, cyl.itinerary)
    a, b = image_interval(f, cyl.left, cyl.right)
    out = []
    for j, br in enumerate(P.branches):
        lo, hi = max(a, br.domain[0]), min(b, br.domain[1])
        if lo < hi:
            pl, pr = image_interval(f.inverse, lo, hi)
            pl, pr = max(pl, cyl.left), min(pr, cyl.right)
            if pl < pr:
                out.append(Cylinder(pl, pr, cyl.itinerary + (j,)))
    out.sort(key=lambda c: c.left)
    return out


def cylinders(P: ReturnMap, n: int, max_count: int = 200_000) -> list[Cylinder]:
    """Cylinders of depth n: the open intervals making up dom(P^n)."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    for depth, cyls in enumerate(iter_cylinders(P, max_count), start=1):
        if depth == n:
            return cyls
    raise AssertionError("unreachable")


def iter_cylinders(P: ReturnMap, max_count: int = 200_000) -> Iterator[list[Cylinder]]:
    cyls = [Cylinder(*b.domain, (i,)) for i, b in enumerate(P.branches)]
    while True:
        yield cyls
        nxt = []
        for c in cyls:
            nxt.extend(_refine(P, c))
        if len(nxt) > max_count:
            raise ParameterError(f"more than {max_count} cylinders; lower the depth")
        cyls = nxt


def domain_depth(P: ReturnMap, n: int) -> list[tuple[float, float]]:
    """Open intervals of dom(P^n) minus the backward orbit of the segment boundary."""
    return [(c.left, c.right) for c in cylinders(P, n)]


def _cylinder_deriv_bound(P: ReturnMap, cyl: Cylinder) -> float:
    a, b = cyl.left, cyl.right
    bound = 1.0
    for i in cyl.itinerary:
        m = P.branches[i].map
        bound *= m.abs_deriv_sup(a, b)
        a, b = image_interval(m, a, b)
    return bound


def orbit_derivative_array(P, xs: np.ndarray, n: int) -> np.ndarray:
    """DP^n at each x by the chain rule; NaN where P^n is undefined."""
    xs = np.asarray(xs, dtype=float)
    d = np.ones_like(xs)
    cur = xs.copy()
    for _ in range(n):
        d = d * P.deriv_array(cur)
        cur = P.eval_array(cur)
    return np.where(np.isnan(cur), np.nan, d)


def chain_rule_check(P: ReturnMap, n: int, samples: int = 1000, seed: int = 0, h: float = 1e-8) -> float:
    """Max |chain-rule DP^n - central difference| over random points of dom(P^n).

    Points are drawn uniformly (seeded) from cylinders, at least 2h inside
    them; draws whose stencil orbit comes within the endpoint tolerance of a
    boundary are redrawn.
    """
    rng = np.random.default_rng(seed)
    cyls = [c for c in cylinders(P, n) if c.right - c.left > 8 * h]
    if not cyls:
        raise DomainExhausted("dom(P^n) has no interval wide enough to sample")
    widths = np.array([c.right - c.left - 4 * h for c in cyls])
    lefts = np.array([c.left + 2 * h for c in cyls])

    def Pn(z):
        for _ in range(n):
            z = P.eval_array(z)
        return z

    worst, done = 0.0, 0
    for _ in range(20):
        m = samples - done
        pick = rng.choice(len(cyls), size=2 * m, p=widths / widths.sum())
        xs = lefts[pick] + rng.random(2 * m) * widths[pick]
        chain = orbit_derivative_array(P, xs, n)
        fd = (Pn(xs + h) - Pn(xs - h)) / (2 * h)
        ok = np.isfinite(chain) & np.isfinite(fd)
        err = np.abs(chain - fd)[ok][:m]
        if err.size:
            worst = max(worst, float(err.max()))
        done += err.size
        if done >= samples:
            return worst
    raise DomainExhausted(f"only {done} of {samples} samples stay clear of the boundary")


def _sup_bounds(P: ReturnMap, cyls: list[Cylinder], grid: int) -> tuple[float, float]:
    if not cyls:
        raise DomainExhausted("dom(P^n) is empty")
    upper = max(_cylinder_deriv_bound(P, c) for c in cyls)
    n = cyls[0].depth
    xs = np.linspace(P.segment.lo, P.segment.hi, grid)
    d = np.abs(orbit_derivative_array(P, xs, n))
    witness = float(np.nanmax(d)) if np.isfinite(d).any() else 0.0
    return max(upper, witness), witness


def sup_abs_deriv(P: ReturnMap, n: int, grid: int = DEFAULT_GRID) -> float:
    """Upper estimate of sup |DP^n| over dom(P^n).

    Each cylinder contributes the product over its itinerary of the exact
    sup of |DP| on the successive image intervals (|DP| is monotone away from
    power-branch centres).  A chain-rule grid scan is folded in as a witness.
    """
    return _sup_bounds(P, cylinders(P, n), grid)[0]


@dataclass(frozen=True)
class ContractionCertificate:
    """P^n is an infinitesimal kappa_target-contraction with |DP^n| <= kappa."""

    n: int
    kappa: float
    sup_witness: float
    grid_resolution: float
    kappa_target: float = field(default=1.0)

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError("certificate needs n >= 1")
        if not 0 < self.kappa < 1:
            raise ParameterError(f"certificate kappa must lie in (0,1), got {self.kappa}")
        if self.sup_witness > self.kappa:
            raise ParameterError("grid witness exceeds certified bound")


def contraction_certificate(
    P: ReturnMap, kappa_target: float, n_max: int = N_MAX, grid: int = DEFAULT_GRID
) -> ContractionCertificate:
    """Smallest n <= n_max with sup |DP^n| < kappa_target."""
    if not 0 < kappa_target < 1:
        raise ParameterError("kappa_target must lie in (0, 1)")
    best = (math.inf, 0)
    for n, cyls in enumerate(iter_cylinders(P), start=1):
        upper, witness = _sup_bounds(P, cyls, grid)
        if upper < best[0]:
            best = (upper, n)
        if upper < kappa_target:
            return ContractionCertificate(
                n=n,
                kappa=max(upper, np.finfo(float).tiny),
                sup_witness=witness,
                grid_resolution=P.segment.length / (grid - 1),
                kappa_target=kappa_target,
            )
        if n >= n_max:
            break
    raise CertificateFailure(best[0], best[1], kappa_target)


def contraction_depth(L: float, n: int, kappa: float, K: float) -> int:
    """Smallest d >= 1 with max(1, L^(n-1)) * kappa^d < K."""
    if not 0 < K < 1:
        raise ParameterError("K must lie in (0, 1)")
    if not 0 < kappa < 1:
        raise ParameterError("kappa must lie in (0, 1)")
    L0 = max(1.0, L ** (n - 1))
    d = 1
    while L0 * kappa**d >= K:
        d += 1
    return d


def propagate_contraction(
    P: ReturnMap, cert: ContractionCertificate, L: float, K: float
) -> tuple[int, int]:
    """(d, d*n): first-return maps with return time > d*n are K-contractions."""
    sup1 = P.abs_deriv_sup()
    if L < sup1 * (1 - 1e-12):
        raise ParameterError(f"L={L} is below sup|DP|={sup1}")
    d = contraction_depth(L, cert.n, cert.kappa, K)
    return d, d * cert.n


# ---------------------------------------------------------------------------
# induced maps


@dataclass
class InducedMap:
    map: ReturnMap | None
    return_times: list[int]
    excluded: list[tuple[float, float]]

    @property
    def empty(self) -> bool:
        return self.map is None


def induced_first_return(P: ReturnMap, sub: Segment, depth: int) -> InducedMap:
    """First-return map of P to ``sub``, searching return times up to ``depth``.

    Pieces of ``sub`` that fall into a gap, or do not come back within
    ``depth`` steps, are listed in ``excluded``.
    """
    seg = P.segment
    if sub.lo < seg.lo or sub.hi > seg.hi:
        raise ParameterError("sub-segment must lie inside the segment")
    live = []
    excluded = []
    for i, b in enumerate(P.branches):
        lo, hi = max(b.domain[0], sub.lo), min(b.domain[1], sub.hi)
        if lo < hi:
            live.append(Cylinder(lo, hi, (i,)))
    # parts of sub not in dom(P)
    covered = sorted((c.left, c.right) for c in live)
    excluded.extend(_complement(covered, sub.lo, sub.hi))

    induced: list[Branch] = []
    times: list[int] = []
    for k in range(1, depth + 1):
        nxt = []
        for cyl in live:
            f = _cylinder_map(P, cyl.itinerary)
            a, b = image_interval(f, cyl.left, cyl.right)
            pieces = []
            cuts = sorted({a, b, *(e for e in (sub.lo, sub.hi) if a < e < b)})
            for u, v in zip(cuts, cuts[1:]):
                pl, pr = image_interval(f.inverse, u, v)
                pl, pr = max(pl, cyl.left), min(pr, cyl.right)
                if pl >= pr:
                    continue
                if sub.lo <= u and v <= sub.hi:
                    induced.append(Branch((pl, pr), f))
                    times.append(k)
                else:
                    pieces.append(Cylinder(pl, pr, cyl.itinerary))
            for piece in pieces:
                refined = _refine(P, piece)
                nxt.extend(refined)
                excluded.extend(
                    _complement([(c.left, c.right) for c in refined], piece.left, piece.right)
                )
        live = nxt
        if not live:
            break
    excluded.extend((c.left, c.right) for c in live)
    excluded = _merge(excluded)
    if not induced:
        return InducedMap(None, [], excluded)
    order = np.argsort([b.domain[0] for b in induced])
    marked = min(max(seg.marked_point, sub.lo), sub.hi)
    rm = ReturnMap(Segment(sub.lo, sub.hi, marked), [induced[i] for i in order])
    return InducedMap(rm, [times[i] for i in order], excluded)


def _complement(intervals, lo, hi):
    out = []
    prev = lo
    for l, r in sorted(intervals):
        if l > prev:
            out.append((prev, l))
        prev = max(prev, r)
    if prev < hi:
        out.append((prev, hi))
    return out


def _merge(intervals):
    out = []
    for l, r in sorted(intervals):
        if r - l <= 0:
            continue
        if out and l <= out[-1][1] + ENDPOINT_TOL:
            out[-1] = (out[-1][0], max(out[-1][1], r))
        else:
            out.append((l, r))
    return out


# ---------------------------------------------------------------------------
# transformations


def reflect(P: ReturnMap) -> ReturnMap:
    """Conjugate P by the reflection x -> 2m - x about the marked point."""
    m = P.segment.marked_point
    R = Affine(-1.0, 2 * m)
    seg = Segment(2 * m - P.segment.hi, 2 * m - P.segment.lo, m)
    branches = [
        Branch(image_interval(R, *b.domain), compose([R, b.map, R])) for b in P.branches
    ]
    return ReturnMap(seg, branches)
