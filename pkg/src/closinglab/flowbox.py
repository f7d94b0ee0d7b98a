"""Flow-box realization of the twist: a vertical bump drift in rectified coordinates.

On the rectangle ``[-eps, 0] x [a, b]`` the field is

    Y_lambda(x, y) = (1, lambda * eta * phi1(x) * phi2(y) * delta)

Since the first component is 1, ``x`` serves as time and the transit map from
``{-eps} x [a, b]`` to ``{0} x [a, b]`` solves ``dy/dx = lambda*eta*delta*phi1(x)*phi2(y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import GeometryError, ParameterError, ShootingError
from .profiles import SmoothStep
from .twist import TwistFamily

DEFAULT_BUMP_ORDER = 2  # C^2, quintic ramps


@dataclass(frozen=True)
class BumpFunction:
    """C^order bump: 0 outside ``support``, 1 on ``plateau``, smoothstep ramps between."""

    support: tuple[float, float]
    plateau: tuple[float, float]
    order: int = DEFAULT_BUMP_ORDER

    def __post_init__(self):
        s0, s1 = self.support
        p0, p1 = self.plateau
        if not (s0 < p0 <= p1 < s1):
            raise ParameterError(f"plateau {self.plateau} must lie strictly inside support {self.support}")
        if self.order < 1:
            raise ParameterError("bump order must be >= 1")
        object.__setattr__(self, "_step", SmoothStep(2 * self.order + 1))

    @property
    def integral(self) -> float:
        """Exact integral; symmetric ramps contribute half their widths."""
        (s0, s1), (p0, p1) = self.support, self.plateau
        return (p1 - p0) + 0.5 * (p0 - s0) + 0.5 * (s1 - p1)

    def max_abs_deriv(self, k: int) -> float:
        """sup |phi^(k)| from the closed form (dense sampling of the step polynomial)."""
        if k == 0:
            return 1.0
        (s0, s1), (p0, p1) = self.support, self.plateau
        t = np.linspace(0.0, 1.0, 20001)
        m = float(np.max(np.abs(self._step(t, k))))
        return max(m / (p0 - s0) ** k, m / (s1 - p1) ** k)

    def fast(self, x: np.ndarray) -> np.ndarray:
        """Value on an array via clipped ramp coordinates and Horner's rule."""
        (s0, s1), (p0, p1) = self.support, self.plateau
        coef = self._step._polys[0].coef[::-1]
        wl, wr = p0 - s0, s1 - p1
        if wl == wr and s0 + s1 == p0 + p1:
            mid = 0.5 * (s0 + s1)
            t = np.clip((s1 - mid - np.abs(x - mid)) * (1.0 / wr), 0.0, 1.0)
            v = np.full_like(t, coef[0])
            for c in coef[1:]:
                v *= t
                v += c
            return v
        tl = np.clip((x - s0) / wl, 0.0, 1.0)
        tr = np.clip((s1 - x) / wr, 0.0, 1.0)
        vl = np.zeros_like(tl)
        vr = np.zeros_like(tr)
        for c in coef:
            vl = vl * tl + c
            vr = vr * tr + c
        return vl * vr

    def scalar(self, x: float) -> float:
        (s0, s1), (p0, p1) = self.support, self.plateau
        if x <= s0 or x >= s1:
            return 0.0
        if p0 <= x <= p1:
            return 1.0
        t = (x - s0) / (p0 - s0) if x < p0 else (s1 - x) / (s1 - p1)
        v = 0.0
        for c in self._step._polys[0].coef[::-1]:
            v = v * t + c
        return v

    def __call__(self, x, k: int = 0):
        x = np.asarray(x, dtype=float)
        (s0, s1), (p0, p1) = self.support, self.plateau
        wl, wr = p0 - s0, s1 - p1
        left = (x > s0) & (x < p0)
        right = (x > p1) & (x < s1)
        if k == 0:
            out = np.where((x >= p0) & (x <= p1), 1.0, 0.0)
        else:
            out = np.zeros_like(x)
        out = np.where(left, self._step((x - s0) / wl, k) / wl**k, out)
        out = np.where(right, (-1) ** k * self._step((s1 - x) / wr, k) / wr**k, out)
        return out if out.ndim else float(out)


def make_bump(support, plateau, order: int = DEFAULT_BUMP_ORDER) -> BumpFunction:
    return BumpFunction(tuple(map(float, support)), tuple(map(float, plateau)), int(order))


@dataclass(frozen=True)
class OdeOptions:
    method: str = "rk4"  # "rk4" (fixed step) or "adaptive"
    step_fraction: float = 1e-4  # RK4 step as a fraction of eps
    rtol: float = 1e-12
    atol: float = 1e-14

    def __post_init__(self):
        if self.method not in ("rk4", "adaptive"):
            raise ParameterError(f"unknown ODE method {self.method!r}")
        if not 0 < self.step_fraction <= 1:
            raise ParameterError("step_fraction must lie in (0, 1]")

    @property
    def steps(self) -> int:
        return max(1, int(round(1.0 / self.step_fraction)))

    def halved(self) -> "OdeOptions":
        return OdeOptions(self.method, self.step_fraction / 2, self.rtol, self.atol)


@dataclass(frozen=True)
class FlowBoxField:
    epsilon: float
    delta: float
    eta: float
    phi1: BumpFunction
    phi2: BumpFunction
    rectangle: tuple[float, float]  # vertical extent [a, b]

    def __post_init__(self):
        a, b = self.rectangle
        d = self.delta
        if not (self.epsilon > 0 and d > 0):
            raise ParameterError("epsilon and delta must be positive")
        if not (a <= -9 * d and b >= 9 * d):
            raise GeometryError(
                f"rectangle [{a}, {b}] must contain [-9 delta, 9 delta] = [{-9 * d}, {9 * d}]"
            )

    def drift(self, lam: float, x, y):
        """Vertical component of Y_lambda."""
        return lam * self.eta * self.delta * self.phi1(x) * self.phi2(y)

    def __call__(self, lam: float, x, y):
        return np.ones_like(np.asarray(y, dtype=float)), self.drift(lam, x, y)

    def with_eta(self, eta: float) -> "FlowBoxField":
        return FlowBoxField(self.epsilon, self.delta, float(eta), self.phi1, self.phi2, self.rectangle)


def _bumps(epsilon: float, delta: float, order: int) -> tuple[BumpFunction, BumpFunction]:
    e, d = epsilon, delta
    phi1 = make_bump((-0.9 * e, -0.1 * e), (-0.8 * e, -0.2 * e), order)
    phi2 = make_bump((-7 * d, 7 * d), (-6 * d, 6 * d), order)
    return phi1, phi2


def make_flowbox(
    epsilon: float,
    delta: float,
    order: int = DEFAULT_BUMP_ORDER,
    eta: float | None = None,
    rectangle: tuple[float, float] | None = None,
    ode: OdeOptions | None = None,
) -> FlowBoxField:
    """Flow box with the bump geometry above; eta is calibrated by shooting when not given."""
    phi1, phi2 = _bumps(epsilon, delta, order)
    rect = rectangle if rectangle is not None else (-10 * delta, 10 * delta)
    F = FlowBoxField(float(epsilon), float(delta), 1.0, phi1, phi2, tuple(map(float, rect)))
    if eta is None:
        eta = calibrate_eta(epsilon, delta, ode, order=order, rectangle=rect).eta
    return F.with_eta(eta)


# ---------------------------------------------------------------------------
# transit


def _rk4(F: FlowBoxField, lam, y: np.ndarray, steps: int) -> np.ndarray:
    """Classical RK4 in x; phi1 is tabulated at the nodes and half nodes.

    ``lam`` is a scalar or an array matching ``y`` (one lambda per trajectory).
    """
    h = F.epsilon / steps
    nodes = -F.epsilon + h * np.arange(steps + 1)
    p_node = (F.eta * F.delta * F.phi1(nodes)).tolist()
    p_half = (F.eta * F.delta * F.phi1(nodes[:-1] + h / 2)).tolist()
    active = [i for i in range(steps) if p_node[i] or p_half[i] or p_node[i + 1]]
    if y.size == 1 and np.ndim(lam) == 0:
        phi2 = F.phi2.scalar
        v, lam = float(y[0]), float(lam)
        for i in active:
            a, m, b = lam * p_node[i], lam * p_half[i], lam * p_node[i + 1]
            k1 = a * phi2(v)
            k2 = m * phi2(v + h / 2 * k1)
            k3 = m * phi2(v + h / 2 * k2)
            k4 = b * phi2(v + h * k3)
            v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return np.array([v])
    phi2 = F.phi2.fast
    lam = np.broadcast_to(np.asarray(lam, dtype=float), y.shape)
    for i in active:
        a, m, b = p_node[i], p_half[i], p_node[i + 1]
        k1 = a * lam * phi2(y)
        k2 = m * lam * phi2(y + h / 2 * k1)
        k3 = m * lam * phi2(y + h / 2 * k2)
        k4 = b * lam * phi2(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _adaptive(F: FlowBoxField, lam: float, y: np.ndarray, opts: OdeOptions) -> np.ndarray:
    sol = integrate.solve_ivp(
        lambda x, v: F.drift(lam, x, v),
        (-F.epsilon, 0.0),
        y,
        method="RK45",
        rtol=opts.rtol,
        atol=opts.atol,
        max_step=F.epsilon / 50,
    )
    if not sol.success:
        raise ShootingError(f"adaptive integration failed: {sol.message}")
    return sol.y[:, -1]


def _check_entry(F: FlowBoxField, lam, ys: np.ndarray):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(lam > 1):
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
    a, b = F.rectangle
    if np.any(ys < a) or np.any(ys > b):
        raise GeometryError(f"entry ordinates must lie in [{a}, {b}]")
    # the drift is nonnegative and integrates to at most lambda*eta*delta*int(phi1)
    rise = lam * F.eta * F.delta * F.phi1.integral
    if np.any(ys + rise > b):
        raise GeometryError(f"trajectory may leave the rectangle through y = b = {b}")


def transit_map(F: FlowBoxField, lam: float, y, ode: OdeOptions | None = None):
    """Exit ordinate at x = 0 of the integral curve through (-eps, y)."""
    ode = ode or OdeOptions()
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    _check_entry(F, lam, ys)
    out = _rk4(F, lam, ys, ode.steps) if ode.method == "rk4" else _adaptive(F, lam, ys, ode)
    return out if np.ndim(y) else float(out[0])


def transit_grid(F: FlowBoxField, lambdas: Sequence[float], ys, ode: OdeOptions | None = None) -> np.ndarray:
    """Transit for every (lambda, y) pair in one integration; shape (len(lambdas), len(ys))."""
    ode = ode or OdeOptions()
    lams = np.asarray(lambdas, dtype=float)
    ys = np.asarray(ys, dtype=float)
    L, Y = np.meshgrid(lams, ys, indexing="ij")
    _check_entry(F, L, Y)
    if ode.method == "rk4":
        out = _rk4(F, L.ravel(), Y.ravel(), ode.steps)
    else:
        out = np.concatenate([_adaptive(F, lam, ys, ode) for lam in lams])
    return out.reshape(L.shape)


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class Calibration:
    eta: float
    eta_closed_form: float
    residual: float  # |transit(1, -4 delta) - (-3 delta)|
    evaluations: int

    @property
    def discrepancy(self) -> float:
        return abs(self.eta - self.eta_closed_form)


def calibrate_eta(
    epsilon: float,
    delta: float,
    ode: OdeOptions | None = None,
    order: int = DEFAULT_BUMP_ORDER,
    rectangle: tuple[float, float] | None = None,
    lam: float = 1.0,
    xtol: float = 1e-14,
) -> Calibration:
    """Shoot for eta so the lambda-trajectory from (-eps, -4 delta) exits at (0, -3 delta)."""
    ode = ode or OdeOptions()
    phi1, phi2 = _bumps(epsilon, delta, order)
    rect = rectangle if rectangle is not None else (-10 * delta, 10 * delta)
    F0 = FlowBoxField(float(epsilon), float(delta), 1.0, phi1, phi2, tuple(map(float, rect)))
    y0, target = -4 * delta, -3 * delta
    count = [0]

    def g(eta):
        count[0] += 1
        return transit_map(F0.with_eta(eta), lam, y0, ode) - target

    lo, hi = 0.0, 1.0
    glo = g(lo)
    ghi = g(hi)
    for _ in range(60):
        if ghi > 0:
            break
        lo, glo = hi, ghi
        hi *= 2
        try:
            ghi = g(hi)
        except GeometryError as e:
            raise ShootingError(f"could not bracket eta: {e}") from e
    if not (glo < 0 < ghi):
        raise ShootingError(f"could not bracket eta (lambda={lam}): g stays at {ghi:.3g}")
    eta = optimize.brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return Calibration(eta, 1.0 / phi1.integral, abs(g(eta)), count[0])


# ---------------------------------------------------------------------------
# verification


@dataclass
class TransitReport:
    rows: list  # (y_in, lambda, y_out, discrepancy vs E_lambda)
    plateau_max_discrepancy: float
    excess_over_shift: float  # max of transit - y - lambda*delta
    shift_spread: float  # max - min of transit - y over plateau points, per lambda
    monotone: bool
    tolerance: float

    @property
    def ok(self) -> bool:
        return (
            self.plateau_max_discrepancy <= self.tolerance
            and self.excess_over_shift <= self.tolerance
            and self.shift_spread <= 2 * self.tolerance
            and self.monotone
        )


def verify_transit_vs_twist(
    F: FlowBoxField,
    T: TwistFamily,
    lambdas: Sequence[float],
    ys: Sequence[float],
    ode: OdeOptions | None = None,
    tolerance: float = 1e-6,
) -> TransitReport:
    if abs(T.delta - F.delta) > 1e-15 * F.delta:
        raise ParameterError("twist and flow box use different delta")
    ys = np.asarray(sorted(ys), dtype=float)
    lo, hi = T.plateau
    on_plateau = (ys >= lo) & (ys <= hi)
    rows = []
    plateau_err = 0.0
    excess = -math.inf
    spread = 0.0
    monotone = True
    grid = transit_grid(F, lambdas, ys, ode)
    for lam, out in zip(lambdas, grid):
        e = T.eval(lam, ys)
        disc = out - e
        rows.extend(zip(ys.tolist(), [float(lam)] * ys.size, out.tolist(), disc.tolist()))
        if on_plateau.any():
            plateau_err = max(plateau_err, float(np.max(np.abs(disc[on_plateau]))))
            sh = (out - ys)[on_plateau]
            spread = max(spread, float(sh.max() - sh.min()))
        excess = max(excess, float(np.max(out - ys - lam * F.delta)))
        if np.any(np.diff(out) <= 0):
            monotone = False
    return TransitReport(rows, plateau_err, excess, spread, monotone, tolerance)


def plateau_error(F: FlowBoxField, lambdas: Sequence[float], ys: Sequence[float], ode: OdeOptions | None = None) -> float:
    """max |transit(lambda, y) - (y + lambda*delta)| over the given grid."""
    ys = np.asarray(ys, dtype=float)
    lams = np.asarray(lambdas, dtype=float)
    out = transit_grid(F, lams, ys, ode)
    return float(np.max(np.abs(out - ys[None, :] - lams[:, None] * F.delta)))


@dataclass(frozen=True)
class CrNorm:
    value: float
    closed_form: float
    by_index: dict = field(default_factory=dict)  # (i, j) -> (finite difference, closed form)

    @property
    def relative_gap(self) -> float:
        if self.closed_form == 0:
            return abs(self.value)
        return abs(self.value - self.closed_form) / self.closed_form


def _central_difference(f, xs: np.ndarray, k: int, h: float) -> np.ndarray:
    """k-th central difference quotient (second-order accurate)."""
    if k == 0:
        return f(xs)
    acc = np.zeros_like(xs)
    for j in range(k + 1):
        acc += (-1) ** j * math.comb(k, j) * f(xs + (k / 2 - j) * h)
    return acc / h**k


def cr_norm_estimate(F: FlowBoxField, lam: float, r: int, grid: tuple[int, int] = (201, 201)) -> CrNorm:
    """max over |alpha| <= r of sup |d^alpha| of the drift lambda*eta*delta*phi1(x)*phi2(y).

    Partials are central finite differences at spacing 1e-3*eps in x and
    1e-3*delta in y; the closed-form ramp derivatives give the cross-check.
    """
    if r < 0:
        raise ParameterError("r must be >= 0")
    a, b = F.rectangle
    xs = np.linspace(-F.epsilon, 0.0, grid[0])
    ys = np.linspace(a, b, grid[1])
    hx, hy = 1e-3 * F.epsilon, 1e-3 * F.delta
    amp = abs(lam) * F.eta * F.delta
    best = exact_best = 0.0
    by_index = {}
    for i in range(r + 1):
        dx = np.max(np.abs(_central_difference(F.phi1, xs, i, hx)))
        ex = np.max(np.abs(F.phi1(xs, i)))
        for j in range(r + 1 - i):
            dy = np.max(np.abs(_central_difference(F.phi2, ys, j, hy)))
            ey = np.max(np.abs(F.phi2(ys, j)))
            fd, cf = amp * dx * dy, amp * ex * ey
            by_index[(i, j)] = (float(fd), float(cf))
            best, exact_best = max(best, fd), max(exact_best, cf)
    return CrNorm(float(best), float(exact_best), by_index)
