import numpy as np
import pytest
from scipy import integrate

from closinglab.errors import GeometryError, ParameterError, ShootingError
from closinglab.flowbox import (
    OdeOptions,
    calibrate_eta,
    cr_norm_estimate,
    make_bump,
    make_flowbox,
    plateau_error,
    transit_grid,
    transit_map,
    verify_transit_vs_twist,
)
from closinglab.segment_map import Segment
from closinglab.twist import TwistFamily

EPS, DELTA = 0.1, 0.01


@pytest.fixture(scope="module")
def cal():
    return calibrate_eta(EPS, DELTA)


@pytest.fixture(scope="module")
def F(cal):
    return make_flowbox(EPS, DELTA, eta=cal.eta)


@pytest.fixture(scope="module")
def T():
    return TwistFamily(Segment(-10 * DELTA, 10 * DELTA, 0.0), DELTA, 5)


def test_bump_examples():
    phi1 = make_bump((-0.09, -0.01), (-0.08, -0.02))
    assert phi1(-0.05) == 1.0
    assert phi1(-0.095) == 0.0 and phi1(-0.005) == 0.0
    phi2 = make_bump((-0.07, 0.07), (-0.06, 0.06))
    assert phi2(0.0) == 1.0 and phi2(0.07) == 0.0 and phi2(-0.07) == 0.0
    assert phi2(0.065) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ParameterError):
        make_bump((-0.05, 0.05), (-0.06, 0.06))


def test_bump_range_and_derivatives():
    b = make_bump((-1.0, 1.0), (-0.5, 0.5), order=3)
    xs = np.linspace(-1.2, 1.2, 2001)
    v = b(xs)
    assert v.min() >= 0 and v.max() <= 1
    h = 1e-6
    for k in (1, 2):
        fd = (b(xs + h, k - 1) - b(xs - h, k - 1)) / (2 * h)
        assert np.max(np.abs(fd - b(xs, k))) <= 1e-4 * max(1.0, b.max_abs_deriv(k))


def test_bump_integral_matches_quadrature():
    b = make_bump((-0.09, -0.01), (-0.08, -0.02))
    q, _ = integrate.quad(lambda x: float(b(x)), -0.1, 0.0, points=[-0.09, -0.08, -0.02, -0.01])
    assert b.integral == pytest.approx(q, rel=1e-12)
    assert b.integral == pytest.approx(0.07, rel=1e-14)


def test_calibration(cal):
    # symmetric ramps: integral of phi1 is 0.06 + 2 * 0.01/2 = 0.07
    assert cal.eta_closed_form == pytest.approx(1 / 0.07, rel=1e-14)
    assert abs(cal.eta - 1 / 0.07) <= 1e-8
    assert cal.eta == pytest.approx(14.2857, abs=1e-4)


def test_calibration_scales_with_epsilon(cal):
    doubled = calibrate_eta(2 * EPS, DELTA)
    assert doubled.eta == pytest.approx(cal.eta / 2, rel=1e-9)


def test_calibration_lambda_zero_fails():
    with pytest.raises(ShootingError):
        calibrate_eta(EPS, DELTA, lam=0.0)


def test_calibration_adaptive():
    c = calibrate_eta(EPS, DELTA, OdeOptions("adaptive"))
    assert abs(c.eta - 1 / 0.07) <= 1e-6


def test_transit_examples(F):
    assert transit_map(F, 1.0, -4 * DELTA) == pytest.approx(-3 * DELTA, abs=1e-6)
    assert transit_map(F, 0.5, 0.0) == pytest.approx(0.005, abs=1e-6)
    a = F.rectangle[0]
    assert transit_map(F, 1.0, a) == a
    assert transit_map(F, 0.0, 0.0123) == 0.0123


def test_transit_leaving_rectangle(F):
    with pytest.raises(GeometryError):
        transit_map(F, 1.0, F.rectangle[1] - 0.1 * DELTA)


def test_verify_transit_vs_twist(F, T):
    ys = np.linspace(-4 * DELTA, 4 * DELTA, 41)
    rep = verify_transit_vs_twist(F, T, [0.0, 0.25, 0.5, 1.0], ys, tolerance=1e-6)
    assert rep.plateau_max_discrepancy <= 1e-6
    assert rep.shift_spread <= 2e-6
    assert rep.monotone and rep.ok
    lam0 = [r for r in rep.rows if r[1] == 0.0]
    assert all(r[3] == 0.0 for r in lam0)


def test_ramp_shift_bounded(F):
    # y = 5 delta: the whole trajectory stays inside phi2's plateau [-6d, 6d],
    # so the rise is the full delta; the one-sided bound holds with equality
    assert transit_map(F, 1.0, 0.05) - 0.05 <= DELTA + 1e-12
    # y = 6.5 delta sits on phi2's ramp: the rise is strictly smaller
    assert transit_map(F, 1.0, 0.065) - 0.065 < DELTA - 1e-4


def test_transit_monotone_and_one_sided(F):
    ys = np.linspace(-8 * DELTA, 8 * DELTA, 161)
    out = transit_grid(F, [0.3, 1.0], ys)
    for lam, row in zip([0.3, 1.0], out):
        assert np.all(np.diff(row) > 0)
        assert np.all(row - ys <= lam * DELTA + 1e-12)
        assert np.all(row >= ys)


def test_plateau_error_small(F):
    ys = np.linspace(-4 * DELTA, 4 * DELTA, 9)
    assert plateau_error(F, [0.25, 1.0], ys) <= 1e-6


def test_cr_norm_examples(F):
    c0 = cr_norm_estimate(F, 1.0, 0)
    assert c0.value == pytest.approx(F.eta * DELTA, rel=1e-12)
    assert c0.value == pytest.approx(0.142857, abs=1e-6)
    for r in (0, 1, 2):
        assert cr_norm_estimate(F, 0.0, r).value == 0.0
    c1 = cr_norm_estimate(F, 1.0, 1)
    assert c1.relative_gap <= 1e-3
    # dominated by eta*delta*sup|phi2'| = eta*delta*O(1/delta)
    assert c1.value == pytest.approx(F.eta * DELTA * F.phi2.max_abs_deriv(1), rel=1e-3)


def test_rectangle_must_contain_support():
    with pytest.raises(GeometryError):
        make_flowbox(EPS, DELTA, eta=1.0, rectangle=(-8 * DELTA, 8 * DELTA))
