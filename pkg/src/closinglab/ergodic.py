"""Transverse measures, Birkhoff averages and Lyapunov exponents.

The operations accept any map object exposing ``segment``, ``eval``,
``deriv``, ``eval_array``, ``deriv_array``, ``preimage`` and ``endpoints``;
both :class:`~closinglab.segment_map.ReturnMap` and
:class:`~closinglab.iet.Iet` qualify.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import MajorantFailure, ParameterError
from .segment_map import Affine, ContractionCertificate, ReturnMap, Segment, iterate

DEFAULT_BINS = 256
LOG_FLOOR = -1e3  # per-piece average of log|DP| below this counts as -inf
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


# ---------------------------------------------------------------------------
# measures


@dataclass
class BinnedMeasure:
    """Probability measure given by masses on a uniform partition, uniform inside bins."""

    segment: Segment
    masses: np.ndarray

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        if np.any(self.masses < 0):
            raise ParameterError("bin masses must be nonnegative")
        total = self.masses.sum()
        if abs(total - 1.0) > 1e-12:
            raise ParameterError(f"bin masses must sum to 1, got {total!r}")

    @property
    def bins(self) -> int:
        return len(self.masses)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.segment.lo, self.segment.hi, self.bins + 1)

    def _cdf(self, x: float) -> float:
        lo, hi = self.segment.lo, self.segment.hi
        t = (min(max(x, lo), hi) - lo) / (hi - lo) * self.bins
        i = min(int(t), self.bins - 1)
        return float(self.masses[:i].sum() + (t - i) * self.masses[i])

    def mass(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        return max(self._cdf(b) - self._cdf(a), 0.0)

    def integrate(self, f: Callable) -> float:
        e = self.edges
        total = 0.0
        for i in np.nonzero(self.masses)[0]:
            total += self.masses[i] * _gl_average(f, e[i], e[i + 1])
        return total


@dataclass
class EmpiricalMeasure(BinnedMeasure):
    """(1/n) sum of Dirac masses along an orbit, with exact interval masses.

    ``masses`` is the histogram on ``bins`` uniform bins; interval masses are
    computed from the stored atoms, so telescoping identities hold exactly.
    """

    atoms: np.ndarray = field(default_factory=lambda: np.empty(0))
    start: float = 0.0
    requested: int = 0
    truncated: bool = False

    def __post_init__(self):
        super().__post_init__()
        self.atoms = np.sort(np.asarray(self.atoms, dtype=float))

    @property
    def n(self) -> int:
        return len(self.atoms)

    def mass(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        i = np.searchsorted(self.atoms, a, side="left")
        j = np.searchsorted(self.atoms, b, side="left")
        return (j - i) / self.n

    def integrate(self, f: Callable) -> float:
        return math.fsum(np.asarray(f(self.atoms), dtype=float)) / self.n

    def table(self) -> list[tuple[float, float]]:
        """(bin lower edge, mass) rows."""
        return list(zip(self.edges[:-1].tolist(), self.masses.tolist()))


def lebesgue_measure(segment: Segment, bins: int = DEFAULT_BINS) -> BinnedMeasure:
    return BinnedMeasure(segment, np.full(bins, 1.0 / bins))


def _gl_average(f: Callable, a: float, b: float) -> float:
    xs = 0.5 * (a + b) + 0.5 * (b - a) * _GL_X
    return float(np.dot(_GL_W, f(xs)) / 2.0)


def empirical_measure(P, x: float, n: int, bins: int = DEFAULT_BINS) -> EmpiricalMeasure:
    """Orbit measure (1/n) sum_{k<n} delta_{P^k x}, over the realized orbit if it stops early."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    if bins < 1:
        raise ParameterError("bins must be >= 1")
    orbit, stop = iterate(P, x, n - 1)
    atoms = np.asarray(orbit)
    seg = P.segment
    counts, _ = np.histogram(atoms, bins=bins, range=(seg.lo, seg.hi))
    masses = counts / len(atoms)
    return EmpiricalMeasure(
        seg,
        masses,
        atoms=atoms,
        start=float(x),
        requested=n,
        truncated=not stop.completed,
    )


def invariance_defect(P, mu: BinnedMeasure, intervals: Sequence[tuple[float, float]]) -> float:
    """max_J |mu(J) - mu(P^{-1} J)|, with P^{-1} J assembled branch by branch."""
    worst = 0.0
    for a, b in intervals:
        if a < P.segment.lo or b > P.segment.hi or not a < b:
            raise ParameterError(f"interval ({a}, {b}) is not inside the segment")
        worst = max(worst, abs(mu.mass(a, b) - preimage_mass(P, mu, a, b)))
    return worst


def preimage_mass(P, mu: BinnedMeasure, a: float, b: float) -> float:
    """mu(P^{-1}[a, b)).

    For an orbit measure this counts atoms whose image lands in [a, b), which
    keeps the half-open convention through orientation-reversing branches.
    """
    if isinstance(mu, EmpiricalMeasure):
        with np.errstate(invalid="ignore"):
            img = P.eval_array(mu.atoms)
            return float(np.count_nonzero((img >= a) & (img < b))) / mu.n
    return sum(mu.mass(l, r) for l, r in P.preimage(a, b))


def dyadic_intervals(segment: Segment, min_width: float) -> list[tuple[float, float]]:
    """All dyadic subintervals of the segment whose width is at least ``min_width``."""
    out = []
    k = 0
    while segment.length / 2**k >= min_width:
        w = segment.length / 2**k
        out.extend((segment.lo + i * w, segment.lo + (i + 1) * w) for i in range(2**k))
        k += 1
    return out


# ---------------------------------------------------------------------------
# averages along orbits


@dataclass(frozen=True)
class OrbitAverage:
    value: float
    realized: int
    requested: int

    @property
    def truncated(self) -> bool:
        return self.realized < self.requested


def _apply(phi: Callable, xs: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(phi(xs), dtype=float)
        if vals.shape == xs.shape:
            return vals
    except (TypeError, ValueError):
        pass
    return np.array([float(phi(float(x))) for x in xs])


def birkhoff_average(P, phi: Callable, x: float, n: int) -> OrbitAverage:
    if n < 1:
        raise ParameterError("n must be >= 1")
    orbit, _ = iterate(P, x, n - 1)
    vals = _apply(phi, np.asarray(orbit))
    return OrbitAverage(math.fsum(vals) / len(vals), len(vals), n)


@dataclass(frozen=True)
class LyapunovEstimate:
    value: float
    tail_min: float
    n: int
    truncated: bool = False


def lyapunov_estimate(P, x: float, n: int) -> LyapunovEstimate:
    """(1/n) log|DP^n(x)| as a sum of log|DP| along the orbit.

    ``tail_min`` is the smallest running average over the last quarter of the
    orbit and stands in for the liminf.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    orbit, stop = iterate(P, x, n)
    pts = np.asarray(orbit[:-1]) if len(orbit) > 1 else np.empty(0)
    m = len(pts)
    if m == 0:
        return LyapunovEstimate(math.nan, math.nan, 0, True)
    d = np.abs(P.deriv_array(pts))
    if np.any(d == 0):
        return LyapunovEstimate(-math.inf, -math.inf, m, not stop.completed)
    logs = np.log(d)
    value = math.fsum(logs) / m
    running = np.cumsum(logs) / np.arange(1, m + 1)
    tail = running[max(0, (3 * m) // 4 - 1):]
    return LyapunovEstimate(value, float(tail.min()), m, not stop.completed)


# ---------------------------------------------------------------------------
# log-integrability


def _pieces(P) -> list[tuple[float, float, object]]:
    """Domain intervals with their (primitive) branch maps."""
    if isinstance(P, ReturnMap):
        return [(b.domain[0], b.domain[1], b.map) for b in P.branches]
    # interval exchange: slope +-1 on each exchanged interval
    out = []
    pts = P.breakpoints + [1.0]
    for i in range(len(pts) - 1):
        out.append((pts[i], pts[i + 1], Affine(-1.0 if P.flips[i] else 1.0, 0.0)))
    return out


def _log_parts_average(f, a: float, b: float) -> tuple[float, float]:
    """Averages of log+|Df| and log-|Df| over (a, b)."""
    if isinstance(f, Affine):
        v = math.log(abs(f.slope))
        return max(v, 0.0), max(-v, 0.0)

    def lg(x):
        with np.errstate(divide="ignore"):
            return np.log(np.abs(f.deriv(x)))

    def plus(x):
        return max(float(lg(x)), 0.0)

    def minus(x):
        return max(-float(lg(x)), 0.0)

    w = b - a
    ip, _ = integrate.quad(plus, a, b, limit=200)
    im, _ = integrate.quad(minus, a, b, limit=200)
    return ip / w, im / w


@dataclass(frozen=True)
class LogIntegrability:
    plus_integral: float
    minus_integral: float
    unsupported_mass: float = 0.0

    @property
    def value(self) -> float:
        if math.isinf(self.minus_integral):
            return -math.inf
        return self.plus_integral - self.minus_integral

    @property
    def classification(self) -> str:
        # log+ is bounded by (P1), so min(plus, minus) < inf always holds
        return "minus-infinite" if math.isinf(self.minus_integral) else "integrable"

    @property
    def resolved(self) -> bool:
        return self.unsupported_mass == 0.0


def log_integral(P, mu: BinnedMeasure) -> LogIntegrability:
    """Integral of log|DP| against mu, split into its log+ and log- parts.

    Each bin is cut at branch endpoints; every piece receives its exact mass
    under mu and the average of log|DP| over the piece.  Pieces whose
    log-average falls below the floor count as -inf.
    """
    edges = mu.edges
    pieces = _pieces(P)
    ws, ps, ms = [], [], []
    for i in range(mu.bins):
        if mu.masses[i] == 0:
            continue
        a, b = edges[i], edges[i + 1]
        for l, r, f in pieces:
            u, v = max(a, l), min(b, r)
            if u >= v:
                continue
            w = mu.mass(u, v)
            if w == 0:
                continue
            p, m = _log_parts_average(f, u, v)
            ws.append(w)
            ps.append(p)
            ms.append(math.inf if -m < LOG_FLOOR else m)
    covered = math.fsum(ws)
    # atoms exactly on the right end of the segment are not in any [u, v)
    unsupported = max(0.0, 1.0 - covered)
    if unsupported < 1e-12:
        unsupported = 0.0
    if not ws:
        return LogIntegrability(0.0, 0.0, unsupported)
    if unsupported == 0.0 and len(set(ps)) == 1 and len(set(ms)) == 1:
        # constant integrand (affine slopes of one modulus): exact value
        return LogIntegrability(ps[0], ms[0], 0.0)
    plus = math.fsum(w * p for w, p in zip(ws, ps))
    minus = math.inf if math.inf in ms else math.fsum(w * m for w, m in zip(ws, ms))
    return LogIntegrability(plus, minus, unsupported)


# ---------------------------------------------------------------------------
# continuous majorant


def _log_deriv_sup(pieces, a: float, b: float) -> float:
    best = -math.inf
    for l, r, f in pieces:
        u, v = max(a, l), min(b, r)
        if u < v:
            s = f.abs_deriv_sup(u, v)
            best = max(best, math.log(s) if s > 0 else -math.inf)
    return best


@dataclass
class Majorant:
    """Continuous piecewise-linear function on the segment."""

    nodes: np.ndarray
    values: np.ndarray
    margin: float
    floor: float
    integrals: list = field(default_factory=list)

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values)


def continuous_majorant(
    P,
    K: float,
    measures: Sequence[BinnedMeasure] = (),
    margin: float = 0.01,
    floor: float = -50.0,
    cells: int = 512,
) -> Majorant:
    """Piecewise-linear phi with phi >= log|DP| + margin on dom(P).

    Node values are the larger of the two adjacent cell sups of log|DP|, plus
    the margin and floored at ``floor``; linear interpolation then dominates
    log|DP| + margin on every cell.  The cell grid is refined by the branch
    endpoints.  Each given measure must satisfy integral(phi) < K.
    """
    seg = P.segment
    pieces = _pieces(P)
    pts = set(np.linspace(seg.lo, seg.hi, cells + 1).tolist())
    for l, r, _ in pieces:
        pts.update((l, r))
    nodes = np.array(sorted(pts))
    sups = np.array([_log_deriv_sup(pieces, a, b) for a, b in zip(nodes, nodes[1:])])
    left = np.concatenate([[-math.inf], sups])
    right = np.concatenate([sups, [-math.inf]])
    values = np.maximum(np.maximum(left, right) + margin, floor)
    phi = Majorant(nodes, values, margin, floor)
    for idx, mu in enumerate(measures):
        val = mu.integrate(phi)
        phi.integrals.append(val)
        if not val < K:
            raise MajorantFailure(
                f"integral of the majorant against measure {idx} is {val:.6g} >= K={K}",
                measure_index=idx,
                integral=val,
            )
    return phi


# ---------------------------------------------------------------------------
# uniform Birkhoff bound


@dataclass
class BirkhoffCheck:
    passed: bool
    N: int | None
    c: float
    max_average: dict  # n -> max over grid of the average
    first_violation: tuple | None  # (n, x, average)


def uniform_birkhoff_check(
    P, phi: Callable, c: float, n_range: Sequence[int], grid: int = 2001
) -> BirkhoffCheck:
    """Check (1/n) sum_{k<n} phi(P^k x) < -c for grid x in dom(P^{n-1}).

    N is the smallest n in ``n_range`` from which on every tested n passes.
    """
    if not c > 0:
        raise ParameterError("c must be positive")
    ns = sorted(set(int(n) for n in n_range))
    if not ns or ns[0] < 1:
        raise ParameterError("n_range must contain integers >= 1")
    seg = P.segment
    xs = np.linspace(seg.lo, seg.hi, grid)
    cur = xs.copy()
    csum = np.zeros_like(xs)
    max_avg = {}
    results = {}
    first_violation = None
    for k in range(ns[-1]):
        alive = ~np.isnan(cur)
        csum = csum + np.where(alive, _apply(phi, np.where(alive, cur, seg.lo)), np.nan)
        n = k + 1
        if n in ns:
            avg = csum / n
            ok = ~np.isnan(avg)
            if ok.any():
                j = int(np.nanargmax(avg))
                max_avg[n] = float(avg[j])
                results[n] = max_avg[n] < -c
                if not results[n] and first_violation is None:
                    first_violation = (n, float(xs[j]), float(avg[j]))
            else:
                max_avg[n] = math.nan
                results[n] = True  # vacuous: dom(P^{n-1}) has no grid points
        if n < ns[-1]:
            cur = P.eval_array(cur)
    N = None
    for n in reversed(ns):
        if not results[n]:
            break
        N = n
    return BirkhoffCheck(N is not None, N, c, max_avg, first_violation)


# ---------------------------------------------------------------------------
# Lemma-style cross-check of the three exponent conditions


@dataclass
class ExponentRow:
    start: float
    lyapunov: float
    tail_min: float
    integral: float

    @property
    def gap(self) -> float:
        return abs(self.integral - self.tail_min)


@dataclass
class ExponentReport:
    rows: list
    tol: float
    certificate_rate: float | None = None

    @property
    def a_holds(self) -> bool:
        """Every sampled orbit has a negative liminf proxy."""
        return all(r.tail_min < 0 for r in self.rows)

    @property
    def c_from_integrals(self) -> float | None:
        worst = max(r.integral for r in self.rows)
        return -worst if worst < 0 else None

    @property
    def c_from_orbits(self) -> float | None:
        worst = max(r.tail_min for r in self.rows)
        return -worst if worst < 0 else None

    @property
    def max_gap(self) -> float:
        return max(r.gap for r in self.rows)

    @property
    def consistent(self) -> bool:
        signs = {self.a_holds, self.c_from_integrals is not None, self.c_from_orbits is not None}
        if len(signs) != 1:
            return False
        finite = [r.gap for r in self.rows if math.isfinite(r.integral)]
        if finite and max(finite) > self.tol:
            return False
        if self.certificate_rate is not None:
            return all(r.tail_min <= self.certificate_rate + self.tol for r in self.rows)
        return True

    def lines(self) -> list[str]:
        out = []
        for r in self.rows:
            out.append(
                f"x={r.start:.12g} chi={r.lyapunov:.12g} liminf_proxy={r.tail_min:.12g} "
                f"integral={r.integral:.12g} gap={r.gap:.3g}"
            )
        out.append(f"(a) negative exponents: {self.a_holds}")
        out.append(f"(b) c from integrals: {self.c_from_integrals}")
        out.append(f"(c) c from orbits: {self.c_from_orbits}")
        if self.certificate_rate is not None:
            out.append(f"certificate rate log(kappa)/n: {self.certificate_rate:.12g}")
        out.append(f"consistent within {self.tol:g}: {self.consistent}")
        return out


def exponent_equivalence_report(
    P,
    starts: Sequence[float],
    n: int,
    bins: int = DEFAULT_BINS,
    cert: ContractionCertificate | None = None,
    tol: float = 1e-2,
) -> ExponentReport:
    """Compare orbit exponents with log|DP| integrals of the orbit measures."""
    rows = []
    for x in starts:
        est = lyapunov_estimate(P, x, n)
        mu = empirical_measure(P, x, n, bins)
        li = log_integral(P, mu)
        rows.append(ExponentRow(float(x), est.value, est.tail_min, li.value))
    rate = math.log(cert.kappa) / cert.n if cert is not None else None
    return ExponentReport(rows, tol, rate)
