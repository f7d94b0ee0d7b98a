"""Acceptance suite: one group of tests per criterion, summarized at the end of the run."""

import math
import time

import numpy as np
import pytest

from closinglab import models
from closinglab.cli import main
from closinglab.ergodic import (
    dyadic_intervals,
    empirical_measure,
    exponent_equivalence_report,
    invariance_defect,
    lyapunov_estimate,
)
from closinglab.errors import CertificateFailure, HypothesisViolation, SearchFailure
from closinglab.flowbox import (
    OdeOptions,
    calibrate_eta,
    make_flowbox,
    plateau_error,
    transit_map,
)
from closinglab.iet import GOLDEN, Iet, as_return_map, rotation
from closinglab.scenario import bundled_names, load_scenario
from closinglab.segment_map import (
    Affine,
    Branch,
    ReturnMap,
    Segment,
    chain_rule_check,
    contraction_certificate,
    contraction_depth,
    cylinders,
    domain_depth,
    induced_first_return,
    propagate_contraction,
)
from closinglab.twist import (
    check_closing_hypotheses,
    closing_search,
    drift_bound_check,
    make_twist,
    perturbed_iterate,
)

c1, c2, c3, c4, c5, c6, c7, c8, c9 = (pytest.mark.criterion(n) for n in range(1, 10))

RNG_SEED = 20240611
SEG = Segment(-1.0, 0.9, 0.0)


def _return_map(S):
    return as_return_map(S.map, S.map.segment.marked_point) if isinstance(S.map, Iet) else S.map


def _random_affine(rng):
    """Single full affine branch with |slope| <= 0.3 and a small offset."""
    s = rng.uniform(0.01, 0.3) * rng.choice([-1.0, 1.0])
    b = rng.uniform(-0.005, 0.005)
    q = rng.uniform(-0.95, 0.85)
    delta = rng.uniform(0.005, 0.999 * SEG.c / 8)
    P = ReturnMap(SEG, [Branch((SEG.lo, SEG.hi), Affine(s, b))])
    return P, q, delta


def _random_scenarios(count=200):
    rng = np.random.default_rng(RNG_SEED)
    return [_random_affine(rng) for _ in range(count)]


# ---------------------------------------------------------------------------
# 1


@c1
def test_closing_reproduction_toy():
    S = load_scenario("toy_contraction")
    assert (S.twist.delta, S.experiment.q) == (0.1, 0.5)
    t0 = time.perf_counter()
    cert = contraction_certificate(S.map, S.experiment.kappa_target)
    res = closing_search(S.map, S.twist, S.experiment.q, cert, tol=1e-10)
    elapsed = time.perf_counter() - t0
    # oracle: x -> 0.05 x - 0.001 + lam*0.1 on the plateau, three times from 0.5
    s, b, d = 0.05, -0.001, 0.1
    base = s**3 * 0.5 + b * (1 + s + s**2)
    lam_oracle = -base / (d * (1 + s + s**2))
    assert res.N == 3
    assert abs(res.lambda_star - 0.009406) <= 1e-6
    assert abs(res.lambda_star - lam_oracle) <= 1e-10
    assert res.residual <= 1e-10
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 2


@c2
def test_drift_bound_toy():
    P = models.toy_contraction()
    T = make_twist(P.segment, 0.1)
    cert = contraction_certificate(P, 0.1)
    chk = drift_bound_check(P, T, cert, 0.5, 3, [0.0, 0.25, 0.5, 1.0])
    assert chk.max_deviation == pytest.approx(0.00525, abs=1e-12)
    assert chk.bound == pytest.approx(0.05 * 0.1 / 0.95, rel=1e-14)
    assert chk.max_deviation <= chk.bound <= 0.0052632


@c2
def test_drift_bound_randomized():
    violations = []
    for P, q, delta in _random_scenarios():
        T = make_twist(P.segment, delta)
        cert = contraction_certificate(P, 0.31)
        assert cert.kappa <= 0.3
        chk = drift_bound_check(P, T, cert, q, 8, [0.0, 0.25, 0.5, 0.75, 1.0])
        if not chk.ok:
            violations.append((q, delta, chk.max_deviation, chk.bound))
    assert violations == []


# ---------------------------------------------------------------------------
# 3


def _gate_passing_bundled():
    out = []
    for name in bundled_names():
        S = load_scenario(name)
        if S.twist is None or S.experiment.q is None:
            continue
        R = _return_map(S)
        try:
            cert = contraction_certificate(R, S.experiment.kappa_target, S.experiment.n_max)
            check_closing_hypotheses(R, cert)
        except (CertificateFailure, HypothesisViolation):
            continue
        out.append((name, R, S.twist, S.experiment, cert))
    return out


@c3
def test_sign_bracket_toy():
    P = models.toy_contraction()
    T = make_twist(P.segment, 0.1)
    orbit, stop = perturbed_iterate(P, T, 1.0, 0.5, 3)
    assert stop.completed
    assert orbit[-1] == pytest.approx(0.10426, abs=1e-12)
    assert orbit[-1] >= -3 * 0.05 * 0.1 + 0.1 == pytest.approx(0.085)


@c3
def test_sign_bracket_bundled():
    cases = _gate_passing_bundled()
    # two_branch has kappa = 0.5 >= 1/3 and must be gated out
    names = {c[0] for c in cases}
    assert "toy_contraction" in names and "two_branch" not in names
    for name, R, T, e, cert in cases:
        res = closing_search(R, T, e.q, cert, e.tol, e.depth, e.direction, e.lambda_grid)
        assert res.value_at_one >= res.sign_bound, name


@c3
def test_sign_bracket_randomized():
    checked = 0
    for P, q, delta in _random_scenarios():
        T = make_twist(P.segment, delta)
        cert = contraction_certificate(P, 0.31)
        try:
            res = closing_search(P, T, q, cert, direction="auto")
        except SearchFailure:
            continue
        m = P.segment.marked_point
        # recompute P_1^N(q) - m independently of the search
        if res.direction == "below":
            orbit, _ = perturbed_iterate(P, T, 1.0, q, res.N)
            v = orbit[-1] - m
        else:
            v = res.value_at_one
        assert v == pytest.approx(res.value_at_one, abs=1e-15)
        s = -1.0 if res.direction == "above" else 1.0
        assert s * v >= delta - 3 * cert.kappa * delta
        checked += 1
    assert checked >= 100


# ---------------------------------------------------------------------------
# 4


@c4
@pytest.mark.parametrize("delta", [0.01, 0.05, 0.1])
@pytest.mark.parametrize("order", [3, 5, 7])
def test_twist_axioms(delta, order):
    P = models.toy_contraction()
    T = make_twist(P.segment, delta, order)
    rep = T.axiom_report(grid=10_000)
    assert rep["plateau_error"] <= 1e-12
    assert rep["excess_over_shift"] <= 1e-12
    assert rep["min_displacement"] >= 0
    assert rep["outside_support_error"] == 0
    assert rep["min_derivative"] >= 0.5
    # independent grid evaluation of both axioms
    xs = np.linspace(SEG.lo, SEG.hi, 10_000)
    lo, hi = T.plateau
    for lam in (0.25, 1.0):
        shift = T.eval(lam, xs) - xs
        on = (xs >= lo) & (xs <= hi)
        assert np.max(np.abs(shift[on] - lam * delta)) <= 1e-12
        assert np.all(shift <= lam * delta + 1e-12) and np.all(shift >= -1e-15)
        assert np.min(T.deriv(lam, xs)) >= 0.5


# ---------------------------------------------------------------------------
# 5


@pytest.fixture(scope="module")
def flowbox_run():
    S = load_scenario("default")
    fb = S.flowbox
    t0 = time.perf_counter()
    cal = calibrate_eta(fb.epsilon, fb.delta, fb.ode, order=fb.order, rectangle=fb.rectangle)
    F = make_flowbox(fb.epsilon, fb.delta, fb.order, eta=cal.eta, rectangle=fb.rectangle)
    d = fb.delta
    ys = np.linspace(-4 * d, 4 * d, 33)
    e1 = plateau_error(F, fb.lambdas, ys, OdeOptions(step_fraction=1e-4))
    e2 = plateau_error(F, fb.lambdas, ys, OdeOptions(step_fraction=5e-5))
    t1 = transit_map(F, 1.0, -4 * d, fb.ode)
    elapsed = time.perf_counter() - t0
    return dict(cal=cal, F=F, d=d, e1=e1, e2=e2, t1=t1, elapsed=elapsed)


@c5
def test_flowbox_eta(flowbox_run):
    cal = flowbox_run["cal"]
    # closed form: phi1 has plateau width 0.6 eps and two symmetric ramps of 0.1 eps
    eps = 0.1
    assert cal.eta_closed_form == pytest.approx(1 / (0.7 * eps), rel=1e-14)
    assert abs(cal.eta - cal.eta_closed_form) <= 1e-8


@c5
def test_flowbox_transit(flowbox_run):
    d = flowbox_run["d"]
    assert abs(flowbox_run["t1"] - (-3 * d)) <= 1e-6


@c5
def test_flowbox_plateau_discrepancy(flowbox_run):
    assert flowbox_run["e1"] <= 1e-6


@c5
def test_flowbox_step_halving_ratio(flowbox_run):
    e1, e2 = flowbox_run["e1"], flowbox_run["e2"]
    ratio = e1 / e2 if e2 > 0 else math.inf
    print(f"plateau error {e1:.3g} at step 1e-4, {e2:.3g} at 5e-5, ratio {ratio:.3g}")
    assert 16 / 2 <= ratio <= 16 * 2


@c5
def test_flowbox_runtime(flowbox_run):
    assert flowbox_run["elapsed"] < 10.0


# ---------------------------------------------------------------------------
# 6


@c6
def test_contraction_depth_example():
    assert contraction_depth(2.0, 3, 0.5, 0.1) == 6
    # L^(n-1) kappa^d = 4 * 0.5^d crosses 0.1 between d = 5 and d = 6
    assert 4 * 0.5**6 < 0.1 <= 4 * 0.5**5


@c6
def test_induced_branches_past_depth_contract():
    S = load_scenario("expanding_golden")
    e = S.experiment
    P = S.map
    cert = contraction_certificate(P, e.kappa_target)
    d, dn = propagate_contraction(P, cert, e.L, e.K)
    assert d * cert.n == dn
    lo, hi = e.sub_segment
    I = induced_first_return(P, Segment(lo, hi, lo), max(e.depth, 2 * dn))
    past = [(b, t) for b, t in zip(I.map.branches, I.return_times) if t > dn]
    assert past, "no induced branch returns after the propagation depth"
    for b, t in past:
        xs = np.linspace(*b.domain, 1001)[1:-1]
        assert np.max(np.abs(b.map.deriv(xs))) < e.K
        # oracle: brute-force orbit and derivative product on the same grid
        for x in xs[::100]:
            y, D = x, 1.0
            for _ in range(t):
                D *= P.deriv(y)
                y = P.eval(y)
            assert abs(D) < e.K
            assert y == pytest.approx(b.map(x), abs=1e-10)


@c6
def test_long_iterates_contract_on_cylinders():
    S = load_scenario("expanding_golden")
    P = S.map
    cert = contraction_certificate(P, S.experiment.kappa_target)
    _, dn = propagate_contraction(P, cert, S.experiment.L, S.experiment.K)
    for t in range(dn + 1, dn + 4):
        cyls = cylinders(P, t)
        worst = 0.0
        for c in cyls:
            xs = np.linspace(c.left, c.right, 33)[1:-1]
            D = np.ones_like(xs)
            cur = xs.copy()
            for _ in range(t):
                D *= P.deriv_array(cur)
                cur = P.eval_array(cur)
            worst = max(worst, float(np.nanmax(np.abs(D))))
        assert worst < S.experiment.K


# ---------------------------------------------------------------------------
# 7


@c7
def test_golden_measure_defect_and_bins():
    E = rotation(GOLDEN)
    n = 10_000
    mu = empirical_measure(E, 0.0, n, bins=10)
    defect = invariance_defect(E, mu, dyadic_intervals(E.segment, 1 / 64))
    assert defect <= 2e-4
    assert np.all(np.abs(mu.masses - 0.1) <= 1e-3)
    counts, _ = np.histogram((np.arange(n) * GOLDEN) % 1.0, bins=10, range=(0, 1))
    assert np.allclose(mu.masses, counts / n, atol=1e-12)


@c7
def test_iet_lyapunov_is_exactly_zero():
    rng = np.random.default_rng(RNG_SEED)
    maps = [rotation(GOLDEN), Iet([0.5, 0.5], [2, 1], [True, False])]
    for _ in range(10):
        m = int(rng.integers(2, 6))
        raw = rng.uniform(0.05, 1.0, m)
        lengths = list(raw / raw.sum())
        lengths[-1] = 1.0 - sum(lengths[:-1])
        maps.append(Iet(lengths, list(rng.permutation(m) + 1), list(rng.random(m) < 0.5)))
    for E in maps:
        assert lyapunov_estimate(E, 0.1234, 1000).value == 0.0


@c7
def test_toy_lyapunov():
    P = models.toy_contraction()
    for x in (-0.7, 0.0, 0.5):
        assert abs(lyapunov_estimate(P, x, 1000).value - math.log(0.05)) <= 1e-12


@c7
def test_mixed_exponent_cross_check():
    S = load_scenario("mixed_slope")
    rep = exponent_equivalence_report(S.map, [0.3], 100_000)
    assert rep.max_gap <= 1e-2
    # the orbit follows the golden itinerary, so chi is the golden mix of the two slopes
    golden_mix = GOLDEN * math.log(0.8) + (1 - GOLDEN) * math.log(0.5)
    assert lyapunov_estimate(S.map, 0.3, 100_000).value == pytest.approx(golden_mix, abs=1e-2)


# ---------------------------------------------------------------------------
# 8


@c8
@pytest.mark.parametrize("name", bundled_names())
def test_chain_rule_all_bundled(name):
    R = _return_map(load_scenario(name))
    for n in (1, 2, 3):
        assert chain_rule_check(R, n, samples=1000, seed=n) <= 1e-6


@c8
@pytest.mark.parametrize("name", bundled_names())
def test_domain_nesting_all_bundled(name):
    R = _return_map(load_scenario(name))
    prev = domain_depth(R, 1)
    for n in range(2, 11):
        cur = domain_depth(R, n)
        for a, b in cur:
            assert any(pa - 1e-12 <= a and b <= pb + 1e-12 for pa, pb in prev), (n, a, b)
        prev = cur


# ---------------------------------------------------------------------------
# 9


@c9
@pytest.mark.parametrize("name", ["golden_iet", "flip_iet"])
def test_iet_closing_is_refused(tmp_path, name):
    assert main(["close", name, "--out", str(tmp_path), "--quiet"]) == 2
    out = tmp_path / name
    text = (out / "close_report.txt").read_text()
    assert "hypothesis violation" in text
    assert "lambda*" not in text
    assert not (out / "close_orbit.csv").exists()
    S = load_scenario(name)
    R = _return_map(S)
    with pytest.raises((HypothesisViolation, CertificateFailure)):
        cert = contraction_certificate(R, S.experiment.kappa_target, S.experiment.n_max)
        closing_search(R, make_twist(R.segment, 0.01), S.experiment.q, cert)
