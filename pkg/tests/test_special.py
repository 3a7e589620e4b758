import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bingham_closure.special import (
    ASYMPTOTIC_SWITCH,
    bessel_ratio,
    bessel_ratio_asymptotic,
    gauss_polar_rule,
    trapezoid_rule,
)


def bessel_series(n, x, terms=60):
    """I_n(x) = sum_k (x/2)^(2k+n) / (k! (k+n)!), summed directly."""
    return math.fsum((x / 2) ** (2 * k + n) / (math.factorial(k) * math.factorial(k + n)) for k in range(terms))


def test_ratio_at_zero():
    assert bessel_ratio(1, 0.0) == 0.0
    assert bessel_ratio(2, 0.0) == 0.0


def test_ratio_large_argument_limit():
    r = bessel_ratio(1, 1e6)
    assert 1 - 1e-5 <= r < 1.0


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("x", [1.0, 0.3, 5.0, 20.0])
def test_ratio_matches_power_series(n, x):
    assert bessel_ratio(n, x) == pytest.approx(bessel_series(n, x) / bessel_series(0, x), abs=1e-14)


@pytest.mark.parametrize("n", [1, 2])
def test_branch_continuity_at_switch(n):
    x = ASYMPTOTIC_SWITCH
    direct = bessel_ratio(n, x)
    asym = float(bessel_ratio_asymptotic(n, x))
    assert abs(direct - asym) <= 1e-13
    assert abs(bessel_ratio(n, np.nextafter(x, np.inf)) - direct) <= 1e-13


def test_ratio_strictly_increasing():
    x = np.linspace(0.0, 1e4, 1000)
    r = bessel_ratio(1, x)
    assert np.all(np.diff(r) > 0)


def test_ratio_rejects_bad_input():
    with pytest.raises(ValueError):
        bessel_ratio(3, 1.0)
    with pytest.raises(ValueError):
        bessel_ratio(1, -1.0)
    with pytest.raises(ValueError):
        bessel_ratio(1, np.nan)


def test_ratio_array_and_scalar_forms():
    x = np.array([0.0, 1.0, 800.0])
    out = bessel_ratio(1, x)
    assert out.shape == (3,)
    assert isinstance(bessel_ratio(1, 1.0), float)
    assert out[1] == bessel_ratio(1, 1.0)


def test_gauss_low_order_exact():
    rule = gauss_polar_rule(2)
    assert rule.integrate(np.ones(2)) == pytest.approx(2.0, abs=1e-15)


def test_gauss_second_moment():
    rule = gauss_polar_rule(16)
    assert rule.integrate(np.cos(rule.nodes) ** 2) == pytest.approx(2.0 / 3.0, abs=1e-15)


def test_gauss_matches_adaptive_quadrature():
    rule = gauss_polar_rule(64)
    oracle, _ = integrate.quad(lambda t: np.exp(np.cos(t)) * np.sin(t), 0.0, np.pi, epsabs=1e-14, epsrel=1e-14)
    assert oracle == pytest.approx(2 * math.sinh(1.0), abs=1e-14)
    assert rule.integrate(np.exp(np.cos(rule.nodes))) == pytest.approx(oracle, abs=1e-14)


def test_gauss_large_rule_symmetric_and_exact():
    rule = gauss_polar_rule(4096)
    assert np.all(np.diff(rule.nodes) > 0)
    np.testing.assert_array_equal(rule.nodes + rule.nodes[::-1], np.full(4096, np.pi))
    assert rule.integrate(np.cos(rule.nodes) ** 40) == pytest.approx(2.0 / 41.0, rel=1e-13)


def test_trapezoid_cases():
    assert trapezoid_rule(8).integrate(np.cos(trapezoid_rule(8).nodes) ** 2) == pytest.approx(np.pi, abs=1e-15)
    assert trapezoid_rule(4).integrate(np.ones(4)) == pytest.approx(2 * np.pi, abs=1e-15)
    oracle = 2 * np.pi * bessel_series(0, 1.0)
    rule = trapezoid_rule(32)
    assert rule.integrate(np.exp(np.cos(2 * rule.nodes))) == pytest.approx(oracle, abs=1e-14)


def test_trapezoid_aliasing_is_exact():
    # exp(cos 2 phi) = I0 + 2 sum_k I_k cos(2 k phi); 16 nodes integrate the
    # harmonics k = 8, 16, ... as constants, so the rule returns
    # 2 pi (I0 + 2 I8 + 2 I16 + ...) rather than 2 pi I0.
    rule = trapezoid_rule(16)
    aliased = 2 * np.pi * (bessel_series(0, 1.0) + 2 * bessel_series(8, 1.0) + 2 * bessel_series(16, 1.0))
    assert rule.integrate(np.exp(np.cos(2 * rule.nodes))) == pytest.approx(aliased, abs=1e-14)


def test_rules_reject_bad_sizes():
    with pytest.raises(ValueError):
        gauss_polar_rule(1)
    with pytest.raises(ValueError):
        trapezoid_rule(7)


def test_rules_immutable():
    rule = gauss_polar_rule(8)
    with pytest.raises(ValueError):
        rule.nodes[0] = 0.0


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 300), const=st.floats(-1e3, 1e3))
def test_constant_integrates_to_measure(n, const):
    for rule in (gauss_polar_rule(n), trapezoid_rule(2 * n)):
        got = rule.integrate(np.full(rule.nodes.shape, const))
        assert got == pytest.approx(rule.measure * const, abs=1e-14 * max(1.0, abs(const)))


@pytest.mark.parametrize("n", [142, 143, 511, 1000])
def test_gauss_orders_that_once_stalled(n):
    # a too-tight Newton stopping test used to stall on rounding noise at N = 142
    rule = gauss_polar_rule(n)
    x = np.cos(rule.nodes)
    assert rule.integrate(np.ones(n)) == pytest.approx(2.0, abs=1e-14)
    assert rule.integrate(x**6) == pytest.approx(2 / 7, abs=1e-14)
