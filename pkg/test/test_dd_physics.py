import math

import numpy as np
import pytest

from app.dd_physics import (
    auger_rate,
    bernoulli,
    bernoulli_derivative,
    chynoweth_alpha,
    highfield_mobility,
    highfield_mobility_derivative,
    srh_rate,
)

N_I = 1.9e-10


def test_srh_vanishes_in_equilibrium():
    """Test that np = n_i^2 gives no net recombination."""
    assert srh_rate(1e17, N_I**2 / 1e17, N_I, 1e-9, 1e-9) == pytest.approx(0.0, abs=1e-30)


def test_srh_symmetric_injection():
    """Test R = n_i / (2 tau) at n = p = 2 n_i."""
    n_i, tau = 1e10, 1e-9
    assert srh_rate(2 * n_i, 2 * n_i, n_i, tau, tau) == pytest.approx(n_i / (2 * tau), rel=1e-12)


def test_srh_high_injection_value():
    """Test a strongly n-type point against a scalar evaluation."""
    n, p, tau = 1e18, 1e10, 1e-9
    expected = (n * p - N_I**2) / (tau * (n + N_I) + tau * (p + N_I))
    assert srh_rate(n, p, N_I, tau, tau) == pytest.approx(expected, rel=1e-12)
    assert srh_rate(n, p, N_I, tau, tau) == pytest.approx(1e19, rel=1e-6)


def test_srh_floors_the_denominator():
    """Test that a zero denominator does not divide by zero."""
    rate = srh_rate(0.0, 0.0, 0.0, 1e-9, 1e-9)
    assert rate == 0.0


TEST_CASES = [
    ((1e17, N_I**2 / 1e17, N_I, 1e-30, 1e-30), 0.0, "Equilibrium"),
    ((1e17, 1e17, N_I, 0.0, 0.0), 0.0, "Zero coefficients"),
    ((1e19, 1e19, N_I, 1e-30, 1e-30), 2e27, "High injection"),
]


@pytest.mark.parametrize(
    "args,expected,description",
    TEST_CASES,
    ids=[case[2] for case in TEST_CASES],
)
def test_auger_rate(args, expected, description):
    """Test the Auger rate against hand evaluation."""
    assert auger_rate(*args) == pytest.approx(expected, rel=1e-9, abs=1e-20)


def test_mobility_at_zero_field():
    assert highfield_mobility(1500.0, 0.0, 2e7, 2.0) == 1500.0


def test_mobility_halves_at_saturation_field_for_beta_one():
    """Test mu = mu0 / 2 when mu0 E = v_sat and beta = 1."""
    mu0, v_sat = 1500.0, 2e7
    assert highfield_mobility(mu0, v_sat / mu0, v_sat, 1.0) == pytest.approx(mu0 / 2)


def test_drift_velocity_saturates():
    """Test that mu E approaches v_sat far above the critical field."""
    mu0, v_sat = 1500.0, 2e7
    field = 100 * v_sat / mu0
    velocity = highfield_mobility(mu0, field, v_sat, 2.0) * field
    assert velocity == pytest.approx(v_sat, rel=5e-5)


@pytest.mark.parametrize("beta", [1.0, 1.5, 2.0])
def test_mobility_derivative_matches_finite_difference(beta):
    """Test the analytic field derivative of the mobility."""
    mu0, v_sat, field, h = 1500.0, 2e7, 2e4, 1.0
    numeric = (
        highfield_mobility(mu0, field + h, v_sat, beta)
        - highfield_mobility(mu0, field - h, v_sat, beta)
    ) / (2 * h)
    analytic = highfield_mobility_derivative(mu0, field, v_sat, beta)
    assert analytic == pytest.approx(numeric, rel=1e-5)


def test_chynoweth_alpha():
    """Test alpha(b) = a / e and no ionization at zero field."""
    a, b = 2.52e8, 3.41e7
    alpha, d_alpha = chynoweth_alpha(np.array([0.0, b, -b]), a, b)

    assert alpha[0] == 0.0 and d_alpha[0] == 0.0
    assert alpha[1] == pytest.approx(a / math.e)
    assert alpha[2] == pytest.approx(a / math.e)
    assert d_alpha[1] == pytest.approx(a / math.e / b)


def test_bernoulli_known_values():
    """Test B(0) = 1 and B(x) - B(-x) = -x."""
    x = np.array([0.0, 0.5, 2.0, 30.0])
    assert bernoulli(0.0) == 1.0
    np.testing.assert_allclose(bernoulli(x) - bernoulli(-x), -x, rtol=1e-12, atol=1e-15)


def test_bernoulli_is_continuous_across_series_switch():
    """Test that the series and closed form agree at the switch point."""
    inside = bernoulli(np.array([0.999e-3, -0.999e-3]))
    outside = bernoulli(np.array([1.001e-3, -1.001e-3]))
    np.testing.assert_allclose(inside, outside, rtol=1e-5)


def test_bernoulli_extreme_arguments():
    """Test that large arguments neither overflow nor produce NaN."""
    values = bernoulli(np.array([800.0, -800.0]))
    assert values[0] == 0.0
    assert values[1] == pytest.approx(800.0)


@pytest.mark.parametrize("x", [-5.0, -0.3, 1e-4, 0.2, 4.0])
def test_bernoulli_derivative_matches_finite_difference(x):
    h = 1e-6
    numeric = (bernoulli(x + h) - bernoulli(x - h)) / (2 * h)
    assert bernoulli_derivative(x) == pytest.approx(numeric, rel=1e-5, abs=1e-8)
