"""Twist perturbations E_lambda of a return map and the closing search.

``E_lambda(x) = x + lambda * delta * psi(x - m)`` with ``m`` the marked point,
``psi = 1`` on ``[-4 delta, 4 delta]`` and ``psi = 0`` outside
``[-7 delta, 7 delta]``.  The perturbed return map is ``P_lambda = E_lambda o P``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    HypothesisViolation,
    ParameterError,
    SearchFailure,
)
from .profiles import SlopeLimitedStep
from .segment_map import (
    ContractionCertificate,
    ReturnMap,
    Segment,
    StopReason,
    iterate,
    reflect,
)

PLATEAU = 4.0
SUPPORT = 7.0
DEFAULT_ORDER = 5
DEFAULT_TOL = 1e-10
MAX_BISECT = 200


@dataclass(frozen=True)
class TwistFamily:
    segment: Segment
    delta: float
    order: int = DEFAULT_ORDER

    def __post_init__(self):
        d = self.delta
        if not (math.isfinite(d) and d > 0):
            raise ParameterError(f"delta must be positive, got {d}")
        c = self.segment.c
        if not d < c / 8:
            raise ParameterError(f"delta < c/8 violated: delta={d}, c={c}, c/8={c / 8}")
        step = SlopeLimitedStep(self.order)
        object.__setattr__(self, "_step", step)
        lip = self.lipschitz
        if not lip < 1:
            raise ParameterError(f"E_lambda is not a diffeomorphism: delta*sup|psi'| = {lip}")

    @property
    def plateau(self) -> tuple[float, float]:
        m = self.segment.marked_point
        return m - PLATEAU * self.delta, m + PLATEAU * self.delta

    @property
    def support(self) -> tuple[float, float]:
        m = self.segment.marked_point
        return m - SUPPORT * self.delta, m + SUPPORT * self.delta

    @property
    def smoothness(self) -> int:
        return self._step.smoothness

    @property
    def lipschitz(self) -> float:
        """delta * sup|psi'|; E_lambda has derivative >= 1 - lipschitz."""
        return self._step.max_slope / (SUPPORT - PLATEAU)

    def psi(self, x, k: int = 0):
        """k-th derivative of the bump psi at x."""
        d = self.delta
        u = np.asarray(x, dtype=float) - self.segment.marked_point
        t = (np.abs(u) - PLATEAU * d) / ((SUPPORT - PLATEAU) * d)
        if k == 0:
            out = 1.0 - self._step(t)
        else:
            scale = ((SUPPORT - PLATEAU) * d) ** (-k)
            out = -self._step(t, k) * scale * np.sign(u) ** k
            out = np.where((t <= 0) | (t >= 1), 0.0, out)
        return out if out.ndim else float(out)

    def eval(self, lam: float, x):
        return x + lam * self.delta * self.psi(x)

    def deriv(self, lam: float, x):
        return 1.0 + lam * self.delta * self.psi(x, 1)

    def axiom_report(self, grid: int = 10_000, lambdas: Sequence[float] = (0.0, 0.25, 0.5, 1.0)) -> dict:
        """Measured deviations from the family axioms on a uniform grid."""
        seg = self.segment
        xs = np.linspace(seg.lo, seg.hi, grid)
        pl = np.linspace(*self.plateau, grid)
        lo_s, hi_s = self.support
        outside = xs[(xs <= lo_s) | (xs >= hi_s)]
        rep = {"plateau_error": 0.0, "excess_over_shift": -math.inf, "min_displacement": math.inf,
               "outside_support_error": 0.0, "min_derivative": math.inf, "range_violation": 0.0,
               "lambda_monotone": True}
        prev = None
        for lam in sorted(lambdas):
            shift = lam * self.delta
            rep["plateau_error"] = max(rep["plateau_error"], float(np.max(np.abs(self.eval(lam, pl) - pl - shift))))
            disp = self.eval(lam, xs) - xs
            rep["excess_over_shift"] = max(rep["excess_over_shift"], float(np.max(disp - shift)))
            rep["min_displacement"] = min(rep["min_displacement"], float(np.min(disp)))
            if outside.size:
                rep["outside_support_error"] = max(
                    rep["outside_support_error"], float(np.max(np.abs(self.eval(lam, outside) - outside)))
                )
            rep["min_derivative"] = min(rep["min_derivative"], float(np.min(self.deriv(lam, xs))))
            ys = self.eval(lam, xs)
            rep["range_violation"] = max(
                rep["range_violation"], float(max(seg.lo - ys.min(), ys.max() - seg.hi, 0.0))
            )
            if prev is not None and np.any(ys < prev):
                rep["lambda_monotone"] = False
            prev = ys
        return rep


def make_twist(segment: Segment, delta: float, order: int = DEFAULT_ORDER, r: int | None = None) -> TwistFamily:
    """Build E_lambda; ``r`` (optional) is the required C^r regularity."""
    T = TwistFamily(segment, float(delta), int(order))
    if r is not None and T.smoothness < r:
        raise ParameterError(f"profile order {order} gives C^{T.smoothness}, below the requested C^{r}")
    return T


def twist_eval(T: TwistFamily, lam: float, x: float) -> float:
    return float(T.eval(lam, x))


def twist_deriv(T: TwistFamily, lam: float, x: float) -> float:
    return float(T.deriv(lam, x))


# ---------------------------------------------------------------------------
# perturbed return map


class PerturbedMap:
    """P_lambda = E_lambda o P; same domain and endpoints as P."""

    def __init__(self, P, T: TwistFamily, lam: float):
        if not 0 <= lam <= 1:
            raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
        self.base = P
        self.twist = T
        self.lam = float(lam)
        self.segment = P.segment
        self.endpoints = P.endpoints

    def eval(self, x: float) -> float:
        y = self.base.eval(x)
        return y if self.lam == 0 else float(self.twist.eval(self.lam, y))

    def deriv(self, x: float) -> float:
        y = self.base.eval(x)
        return float(self.twist.deriv(self.lam, y)) * self.base.deriv(x)

    def branch_index_array(self, xs):
        return self.base.branch_index_array(xs)

    def eval_array(self, xs):
        y = self.base.eval_array(xs)
        return y if self.lam == 0 else self.twist.eval(self.lam, y)

    def deriv_array(self, xs):
        y = self.base.eval_array(xs)
        return self.twist.deriv(self.lam, y) * self.base.deriv_array(xs)


def perturbed_iterate(P, T: TwistFamily, lam: float, q: float, n: int) -> tuple[list[float], StopReason]:
    return iterate(PerturbedMap(P, T, lam), q, n)


# ---------------------------------------------------------------------------
# drift bound


@dataclass(frozen=True)
class DriftCheck:
    max_deviation: float
    bound: float
    argmax: tuple  # (n, lambda)
    truncated: bool

    @property
    def ok(self) -> bool:
        return self.max_deviation <= self.bound * (1 + 1e-12) + 1e-15


def drift_bound_check(
    P, T: TwistFamily, cert: ContractionCertificate, q: float, N: int, lambdas: Sequence[float]
) -> DriftCheck:
    """max over n <= N, lambda of |P o (E_lambda o P)^(n-1)(q) - P^n(q)| against kappa*delta/(1-kappa)."""
    if cert.n != 1:
        raise HypothesisViolation(f"drift bound needs an n = 1 certificate, got n = {cert.n}")
    if N < 1:
        raise ParameterError("N must be >= 1")
    kappa = cert.kappa
    bound = kappa * T.delta / (1 - kappa)
    base, stop0 = iterate(P, q, N)
    truncated = not stop0.completed
    worst, arg = 0.0, (1, 0.0)
    for lam in lambdas:
        pert, stop = perturbed_iterate(P, T, lam, q, N - 1)
        if not stop.completed:
            truncated = True
        for n in range(1, N + 1):
            if n > len(base) - 1 or n - 1 > len(pert) - 1:
                break
            try:
                y = P.eval(pert[n - 1])
            except Exception:
                truncated = True
                break
            dev = abs(y - base[n])
            if dev > worst:
                worst, arg = dev, (n, float(lam))
    return DriftCheck(worst, bound, arg, truncated)


# ---------------------------------------------------------------------------
# boundary events


@dataclass(frozen=True)
class BoundaryEvent:
    lam: float
    step: int
    point: float

    def __str__(self):
        return f"lambda={self.lam:.12g} step={self.step} boundary={self.point:.12g}"


def _itineraries(P, T: TwistFamily, lams: np.ndarray, q: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Branch indices of x_0..x_{N-1} and positions x_0..x_N for each lambda (-1 / NaN once undefined)."""
    lams = np.asarray(lams, dtype=float)
    itin = np.full((lams.size, N), -1, dtype=int)
    pos = np.full((lams.size, N + 1), np.nan)
    x = np.full(lams.size, float(q))
    pos[:, 0] = x
    alive = np.ones(lams.size, dtype=bool)
    for k in range(N):
        idx = P.branch_index_array(x)
        alive &= idx >= 0
        itin[:, k] = np.where(alive, idx, -1)
        y = P.eval_array(np.where(alive, x, np.nan))
        x = y + lams * T.delta * np.nan_to_num(np.asarray(T.psi(np.nan_to_num(y)), dtype=float))
        x = np.where(alive, x, np.nan)
        pos[:, k + 1] = x
    return itin, pos


def _boundaries(P) -> np.ndarray:
    pts = {P.segment.lo, P.segment.hi, *P.endpoints}
    if hasattr(P, "branches"):
        for b in P.branches:
            pts.update(b.domain)
    return np.array(sorted(pts))


def boundary_event_scan(
    P, T: TwistFamily, q: float, N: int, lambda_grid: int | Sequence[float] = 101, lam_tol: float = 1e-13
) -> list[BoundaryEvent]:
    """lambda values in [0, 1] where a perturbed iterate of q crosses a branch-domain boundary."""
    if isinstance(lambda_grid, (int, np.integer)):
        lams = np.linspace(0.0, 1.0, int(lambda_grid)) if lambda_grid > 1 else np.array([0.0])
    else:
        lams = np.asarray(sorted(lambda_grid), dtype=float)
    if lams.size < 2 or N < 1:
        return []
    # branch labels of x_0 .. x_N, so a crossing by the last iterate counts too
    itin, _ = _itineraries(P, T, lams, q, N + 1)
    bounds = _boundaries(P)
    events = []
    for i in range(lams.size - 1):
        diff = np.nonzero(itin[i] != itin[i + 1])[0]
        if diff.size == 0:
            continue
        k = int(diff[0])
        lo, hi = lams[i], lams[i + 1]
        ref = itin[i, : k + 1]
        for _ in range(MAX_BISECT):
            if hi - lo <= lam_tol:
                break
            mid = 0.5 * (lo + hi)
            row, _ = _itineraries(P, T, np.array([mid]), q, k + 1)
            if np.array_equal(row[0], ref):
                lo = mid
            else:
                hi = mid
        lam_e = 0.5 * (lo + hi)
        _, pos = _itineraries(P, T, np.array([lo, hi]), q, k)
        xk = pos[:, k]
        xk = xk[~np.isnan(xk)]
        x_e = float(xk.mean()) if xk.size else math.nan
        point = float(bounds[np.argmin(np.abs(bounds - x_e))]) if xk.size else math.nan
        prev = events[-1] if events else None
        if prev and prev.step == k and prev.point == point and lam_e - prev.lam < 1e-8:
            continue  # a grid node sitting on the crossing splits it in two
        events.append(BoundaryEvent(float(lam_e), k, point))
    return events


# ---------------------------------------------------------------------------
# closing search


@dataclass
class ClosingResult:
    outcome: str  # "closed" | "saddle_connection"
    N: int
    lambda_star: float
    residual: float
    perturbed_orbit: list
    events: list = field(default_factory=list)
    direction: str = "below"
    kappa: float = math.nan
    delta: float = math.nan
    tol: float = DEFAULT_TOL
    unperturbed_value: float = math.nan  # P^N(q) - m
    value_at_one: float = math.nan  # P_1^N(q) - m
    sign_bound: float = math.nan  # delta - 3 kappa delta
    iterations: int = 0

    @property
    def success(self) -> bool:
        if self.outcome == "saddle_connection":
            return True
        return self.residual <= self.tol


def check_closing_hypotheses(P, cert: ContractionCertificate | None):
    if cert is None:
        raise HypothesisViolation("no contraction certificate")
    if cert.n != 1:
        raise HypothesisViolation(
            f"closing needs P itself to be a contraction (certificate n = {cert.n})"
        )
    if not cert.kappa < 1 / 3:
        raise HypothesisViolation(f"kappa < 1/3 violated: kappa = {cert.kappa}")


def _first_window(P, q: float, m: float, width: float, depth: int) -> tuple[int, float]:
    orbit, stop = iterate(P, q, depth)
    for n in range(1, len(orbit)):
        if m - width <= orbit[n] <= m:
            return n, orbit[n]
    if not stop.completed:
        raise SearchFailure(f"unperturbed orbit stopped ({stop.kind}) at step {stop.step} before the window")
    raise SearchFailure(f"no N <= {depth} with P^N(q) in [m - kappa*delta, m]")


def _search_below(P, T: TwistFamily, q: float, cert, tol: float, depth: int, lambda_grid: int) -> ClosingResult:
    m = P.segment.marked_point
    kappa, delta = cert.kappa, T.delta
    N, pN = _first_window(P, q, m, kappa * delta, depth)

    def F(lam):
        orbit, stop = perturbed_iterate(P, T, lam, q, N)
        if not stop.completed:
            return math.nan, orbit
        return orbit[-1] - m, orbit

    f0, _ = F(0.0)
    f1, _ = F(1.0)
    sign_bound = delta - 3 * kappa * delta
    base = dict(N=N, direction="below", kappa=kappa, delta=delta, tol=tol,
                unperturbed_value=pN - m, value_at_one=f1, sign_bound=sign_bound)
    if math.isnan(f1) or not f1 > 0:
        raise HypothesisViolation(f"P_1^N(q) - m = {f1} is not positive; the sign bracket fails")

    events = boundary_event_scan(P, T, q, N, lambda_grid)
    lams = np.linspace(0.0, 1.0, max(lambda_grid, 2))
    # first sign change scanning from lambda = 0
    vals = [F(l)[0] for l in lams]
    a = b = None
    for i in range(len(lams) - 1):
        fa, fb = vals[i], vals[i + 1]
        if not math.isnan(fa) and fa <= 0 and not math.isnan(fb) and fb > 0:
            a, b = lams[i], lams[i + 1]
            break
        if fa == 0:
            a = b = lams[i]
            break
    first_event = events[0] if events else None
    if a is None or (first_event is not None and first_event.lam <= b):
        if first_event is None:
            raise SearchFailure("no sign change of P_lambda^N(q) - m on the lambda grid")
        orbit, _ = perturbed_iterate(P, T, first_event.lam, q, N)
        k = first_event.step
        gap = abs(orbit[k] - first_event.point) if len(orbit) > k else 0.0
        return ClosingResult("saddle_connection", lambda_star=first_event.lam, residual=gap,
                             perturbed_orbit=orbit, events=events, **base)
    fa = F(a)[0]
    it = 0
    while it < MAX_BISECT and b - a > 0:
        mid = 0.5 * (a + b)
        if mid in (a, b):
            break
        fm = F(mid)[0]
        it += 1
        if math.isnan(fm):
            break
        if fm <= 0:
            a, fa = mid, fm
        else:
            b = mid
        if fm == 0:
            break
    fb = F(b)[0]
    lam_star = a if abs(fa) <= abs(fb) else b
    res, orbit = F(lam_star)
    return ClosingResult("closed", lambda_star=float(lam_star), residual=abs(res),
                         perturbed_orbit=orbit, events=events, iterations=it, **base)


def closing_search(
    P,
    T: TwistFamily,
    q: float,
    cert: ContractionCertificate | None,
    tol: float = DEFAULT_TOL,
    depth: int = 1000,
    direction: str = "below",
    lambda_grid: int = 101,
) -> ClosingResult:
    """Find N and lambda* with P_lambda*^N(q) = marked point.

    ``direction`` is where q's orbit approaches the marked point from:
    "below", "above" (handled by reflecting about the marked point) or "auto".
    """
    check_closing_hypotheses(P, cert)
    if T.segment != P.segment:
        raise ParameterError("twist family and return map live on different segments")
    if direction == "below":
        return _search_below(P, T, q, cert, tol, depth, lambda_grid)
    if direction == "above":
        m = P.segment.marked_point
        R = reflect(P)
        TR = TwistFamily(R.segment, T.delta, T.order)
        res = _search_below(R, TR, 2 * m - q, cert, tol, depth, lambda_grid)
        res.direction = "above"
        res.perturbed_orbit = [2 * m - x for x in res.perturbed_orbit]
        res.events = [BoundaryEvent(e.lam, e.step, 2 * m - e.point) for e in res.events]
        res.unperturbed_value = -res.unperturbed_value
        res.value_at_one = -res.value_at_one
        return res
    if direction == "auto":
        found = []
        errors = []
        for d in ("below", "above"):
            try:
                found.append(closing_search(P, T, q, cert, tol, depth, d, lambda_grid))
            except SearchFailure as e:
                errors.append(str(e))
        if not found:
            raise SearchFailure("; ".join(errors))
        return min(found, key=lambda r: r.N)
    raise ParameterError(f"unknown direction {direction!r}")
