import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from closinglab import models
from closinglab.errors import (
    CertificateFailure,
    DomainExhausted,
    LeftDomain,
    OutOfSegment,
    ParameterError,
    SaddleHit,
)
from closinglab.iet import GOLDEN, as_return_map, rotation
from closinglab.segment_map import (
    Affine,
    Branch,
    Composite,
    Power,
    ReturnMap,
    Segment,
    chain_rule_check,
    contraction_certificate,
    contraction_depth,
    cylinders,
    domain_depth,
    induced_first_return,
    iterate,
    map_deriv,
    map_eval,
    propagate_contraction,
    reflect,
    sup_abs_deriv,
)


@pytest.fixture
def toy():
    return models.toy_contraction()


@pytest.fixture
def two():
    return models.two_branch()


def test_segment_c_and_validation():
    assert Segment(-1.0, 0.9).c == pytest.approx(0.9)
    with pytest.raises(ParameterError):
        Segment(1.0, 0.0)


def test_map_eval_examples(toy, two):
    assert map_eval(toy, 0.5) == pytest.approx(0.05 * 0.5 - 0.001, abs=1e-15)
    with pytest.raises(SaddleHit):
        map_eval(two, 0.1)
    with pytest.raises(OutOfSegment):
        map_eval(toy, toy.segment.hi + 0.1)


def test_gap_is_left_domain(two):
    with pytest.raises(LeftDomain):
        map_eval(two, 0.7)


def test_map_deriv_examples(toy):
    assert map_deriv(toy, 0.5) == 0.05
    flip = ReturnMap(Segment(0.0, 1.0, 0.5), [Branch((0.0, 1.0), Affine(-1.0, 1.0))])
    assert map_deriv(flip, 0.25) == -1.0
    sq = models.power_branch()
    assert map_deriv(sq, 0.3) == pytest.approx(0.6, abs=1e-15)


def test_iterate_toy_orbit(toy):
    orbit, stop = iterate(toy, 0.5, 3)
    # direct arithmetic: x -> 0.05 x - 0.001
    expected = [0.5]
    for _ in range(3):
        expected.append(0.05 * expected[-1] - 0.001)
    assert np.allclose(orbit, expected, atol=1e-16)
    assert np.allclose(orbit, [0.5, 0.024, 0.0002, -0.00099], atol=1e-15)
    assert stop.completed


def test_iterate_two_branch_stop(two):
    orbit, stop = iterate(two, 0.2, 5)
    # 0.2 -> 0.5*0.2 - 0.3 = -0.2 -> -0.101 -> -0.0515 -> ...  never lands on 0.1
    x, expected = 0.2, [0.2]
    for _ in range(5):
        x = 0.5 * x - 0.3 if 0.1 < x < 0.6 else 0.5 * x - 0.001
        expected.append(x)
    assert stop.completed
    assert np.allclose(orbit, expected, atol=1e-15)


def test_iterate_stops_on_saddle(two):
    # 0.1 has no preimage (0.202 and 0.8 lie outside the branch domains),
    # so the only orbit reaching it starts there
    orbit, stop = iterate(two, 0.1, 5)
    assert orbit == [0.1]
    assert stop.kind == "saddle_hit" and stop.step == 0 and stop.point == 0.1


def test_iterate_zero_steps(toy):
    orbit, stop = iterate(toy, 0.3, 0)
    assert orbit == [0.3] and stop.completed


def test_domain_depth_examples(toy, two):
    assert domain_depth(toy, 1) == [(-1.0, 0.9)]
    assert domain_depth(two, 1) == [(-1.0, 0.1), (0.1, 0.6)]


def _grid_classes(P, n, xs):
    """Brute force: label each grid point by its itinerary, None if P^n undefined."""
    labels = []
    for x in xs:
        it = []
        try:
            for _ in range(n):
                it.append(P.locate(x))
                x = P.eval(x)
        except Exception:
            labels.append(None)
            continue
        labels.append(tuple(it))
    return labels


@pytest.mark.parametrize("n", [2, 3, 4])
def test_domain_depth_matches_grid_classification(two, n):
    xs = np.linspace(-1, 0.9, 20001)[1:-1]
    labels = _grid_classes(two, n, xs)
    runs = 0
    prev = None
    for lab in labels:
        if lab is not None and lab != prev:
            runs += 1
        prev = lab
    assert len(domain_depth(two, n)) == runs


def test_sup_abs_deriv_examples(toy, two):
    assert sup_abs_deriv(toy, 2) == pytest.approx(0.0025, rel=1e-14)
    assert sup_abs_deriv(two, 1) == 0.5
    R = as_return_map(rotation(GOLDEN), 0.0)
    for n in (1, 3, 7):
        assert sup_abs_deriv(R, n) == 1.0


def test_sup_abs_deriv_empty_domain():
    # image of the only branch misses the domain entirely
    P = ReturnMap(Segment(0.0, 1.0, 0.5), [Branch((0.0, 0.4), Affine(0.5, 0.6))])
    with pytest.raises(DomainExhausted):
        sup_abs_deriv(P, 2)


def test_certificate_examples(toy):
    c = contraction_certificate(toy, 0.1)
    assert (c.n, c.kappa) == (1, 0.05)
    c = contraction_certificate(models.folded_slopes(), 0.5)
    assert c.n == 4 and c.kappa == pytest.approx(0.8**4, rel=1e-12)
    with pytest.raises(CertificateFailure):
        contraction_certificate(as_return_map(rotation(GOLDEN)), 0.9, n_max=8)


def test_certificate_sound_on_finer_grid():
    P = models.contracted_rotation(slope_stay=0.3, slope_wrap=1.25)
    c = contraction_certificate(P, 0.5)
    xs = np.linspace(0, 1, 10 * 4097)
    d = np.ones_like(xs)
    cur = xs.copy()
    for _ in range(c.n):
        d *= P.deriv_array(cur)
        cur = P.eval_array(cur)
    assert np.nanmax(np.abs(d)) <= c.kappa < 0.5


def test_contraction_depth_examples():
    assert contraction_depth(2.0, 3, 0.5, 0.1) == 6
    assert 4 * 0.5**6 < 0.1 <= 4 * 0.5**5
    assert contraction_depth(1.0, 1, 0.05, 0.1) == 1
    assert contraction_depth(1.0, 2, 0.05, 0.5) == 1


def test_propagate_contraction_rejects_small_L(toy):
    c = contraction_certificate(toy, 0.1)
    with pytest.raises(ParameterError):
        propagate_contraction(toy, c, 0.01, 0.1)


def test_induced_golden_rotation_is_three_interval_exchange():
    R = as_return_map(rotation(GOLDEN), 0.0)
    sub = Segment(0.0, 0.2, 0.0)
    I = induced_first_return(R, sub, 50)
    assert len(I.map.branches) == 3
    # brute-force first returns on a grid: time is locally constant and matches
    for b, t in zip(I.map.branches, I.return_times):
        for x in np.linspace(*b.domain, 7)[1:-1]:
            y, k = x, 0
            while True:
                y = (y + GOLDEN) % 1.0
                k += 1
                if 0.0 <= y < 0.2:
                    break
            assert k == t
            assert b.map(x) == pytest.approx(y, abs=1e-12)
            assert abs(b.map.deriv(x)) == 1.0


def test_induced_toy_near_fixed_point(toy):
    fp = -0.001 / 0.95
    I = induced_first_return(toy, Segment(fp - 5e-4, fp + 5e-4, fp), 10)
    assert I.return_times == [1]
    assert I.map.branches[0].map(fp) == pytest.approx(fp, abs=1e-15)


def test_induced_empty(toy):
    I = induced_first_return(toy, Segment(0.5, 0.6, 0.5), 10)
    assert I.empty


def test_reflect_is_conjugacy(two):
    R = reflect(two)
    m = two.segment.marked_point
    for x in (-0.5, 0.3, 0.55):
        assert R.eval(2 * m - x) == pytest.approx(2 * m - two.eval(x), abs=1e-15)


def test_composite_chain_rule():
    f = Composite((Affine(2.0, 0.1), Power(0.0, 1.0, 0.0, 3.0)))
    x = 0.2
    assert f(x) == pytest.approx((2 * x + 0.1) ** 3)
    assert f.deriv(x) == pytest.approx(2 * 3 * (2 * x + 0.1) ** 2)


BUNDLED = [
    models.toy_contraction(),
    models.two_branch(),
    models.folded_slopes(),
    models.power_branch(),
    models.contracted_rotation(),
    models.contracted_rotation(slope_stay=0.3, slope_wrap=1.25),
    as_return_map(rotation(GOLDEN), 0.0),
]


@pytest.mark.parametrize("P", BUNDLED, ids=lambda P: repr(P)[:40])
def test_chain_rule_against_finite_difference(P):
    for n in (1, 2, 3):
        assert chain_rule_check(P, n, samples=1000, seed=n) <= 1e-6


@pytest.mark.parametrize("P", BUNDLED, ids=lambda P: repr(P)[:40])
def test_domain_monotone(P):
    prev = cylinders(P, 1)
    for n in range(2, 11):
        cur = cylinders(P, n)
        for c in cur:
            assert any(p.left - 1e-12 <= c.left and c.right <= p.right + 1e-12 for p in prev)
        prev = cur


@settings(max_examples=60, deadline=None)
@given(
    slope=st.floats(-0.85, 0.85).filter(lambda s: abs(s) > 1e-3),
    offset=st.floats(-0.05, 0.05),
    x=st.floats(-0.99, 0.89),
    n=st.integers(1, 6),
)
def test_affine_iterate_matches_closed_form(slope, offset, x, n):
    P = ReturnMap(Segment(-1.0, 0.9, 0.0), [Branch((-1.0, 0.9), Affine(slope, offset))])
    # image of (-1, 0.9) stays inside the segment for |slope| <= 0.85 and |offset| <= 0.05
    orbit, stop = iterate(P, x, n)
    if not stop.completed:
        return
    # closed form s^n x + b (s^n - 1)/(s - 1)
    expect = slope**n * x + offset * (slope**n - 1) / (slope - 1)
    assert orbit[-1] == pytest.approx(expect, abs=1e-13)
    assert sup_abs_deriv(P, n, grid=257) == pytest.approx(abs(slope) ** n, rel=1e-12)
