import math

import numpy as np
import pytest

from rlab.data import MeasureSpec
from rlab.isoperimetry import (
    clipped_linear,
    concentration_test,
    constant_function,
    distance_to_point,
    estimate_c,
    network_score,
    regime_classifier,
)
from rlab.nn import init_network

SIGMA = 1 / 28
TOY = MeasureSpec("gaussian_isotropic", 784, SIGMA**2)


def _unit(rng, d):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def test_constant_function_never_violates():
    rep = concentration_test(TOY, constant_function(), c=1.0, n_samples=10_000)
    assert rep.violations == []
    assert rep.empirical_tail[0] == 1.0
    assert np.all(rep.empirical_tail[1:] == 0.0)


def test_clipped_linear_functions_respect_nominal_bound():
    rng = np.random.default_rng(0)
    c = TOY.nominal_c
    for k in range(20):
        f = clipped_linear(_unit(rng, 784), sigma=SIGMA)
        rep = concentration_test(TOY, f, c=c, n_samples=100_000, seed=k)
        assert rep.violations == [], f"function {k}"


def test_underestimated_c_is_detected():
    rng = np.random.default_rng(1)
    f = clipped_linear(_unit(rng, 784), sigma=SIGMA)
    t = np.linspace(SIGMA, 3 * SIGMA, 11)
    rep = concentration_test(TOY, f, c=TOY.nominal_c / 100, n_samples=100_000, t_grid=t)
    assert len(rep.violations) >= 1
    assert all(SIGMA <= v["t"] <= 3 * SIGMA for v in rep.violations)


def test_distance_function_is_accepted():
    rep = concentration_test(TOY, distance_to_point(np.zeros(784), bound=10.0), c=TOY.nominal_c,
                             n_samples=20_000)
    assert rep.violations == []
    assert rep.function["lipschitz"] == 1.0


def test_estimated_c_close_to_nominal():
    m = MeasureSpec("gaussian_isotropic", 64, 0.25)
    f = clipped_linear(_unit(np.random.default_rng(2), 64), sigma=m.sigma)
    c_hat = estimate_c(m, f, n_samples=100_000, seed=3)
    assert 0.5 <= c_hat / m.nominal_c <= 1.5


def test_doubling_sigma_quadruples_c_hat():
    rng = np.random.default_rng(4)
    u = _unit(rng, 64)
    small = MeasureSpec("gaussian_isotropic", 64, 0.25)
    big = MeasureSpec("gaussian_isotropic", 64, 1.0)
    a = estimate_c(small, clipped_linear(u, sigma=small.sigma), seed=5)
    b = estimate_c(big, clipped_linear(u, sigma=big.sigma), seed=5)
    assert 3.0 <= b / a <= 5.0


def test_estimate_c_needs_fluctuation():
    with pytest.raises(ValueError, match="cannot estimate"):
        estimate_c(TOY, constant_function(), n_samples=10_000)


def test_regime_examples():
    assert regime_classifier(TOY) == {"c_nominal": pytest.approx(1.0), "regime": "concentrated"}
    diffuse = regime_classifier(MeasureSpec("gaussian_isotropic", 784, 1.0))
    assert diffuse["regime"] == "diffuse" and diffuse["c_nominal"] == 784.0
    half = regime_classifier(MeasureSpec("gaussian_isotropic", 784, (1 / 56) ** 2))
    assert half["regime"] == "concentrated"
    assert half["c_nominal"] == pytest.approx(0.25)
    assert regime_classifier(MeasureSpec("sphere_uniform", 100))["regime"] == "concentrated"


def test_tail_is_nonincreasing_from_one():
    f = clipped_linear(_unit(np.random.default_rng(6), 784), sigma=SIGMA)
    rep = concentration_test(TOY, f, c=1.0, n_samples=20_000)
    assert rep.empirical_tail[0] == 1.0
    assert np.all(np.diff(rep.empirical_tail) <= 0)
    assert np.all(rep.theoretical_tail <= 2.0)


def test_seeded_runs_reproduce():
    f = clipped_linear(_unit(np.random.default_rng(7), 784), sigma=SIGMA)
    a = concentration_test(TOY, f, c=1.0, n_samples=10_000, seed=9).to_dict()
    b = concentration_test(TOY, f, c=1.0, n_samples=10_000, seed=9).to_dict()
    assert a == b


def test_argument_validation():
    f = constant_function()
    with pytest.raises(ValueError, match="10\\^4"):
        concentration_test(TOY, f, c=1.0, n_samples=5000)
    with pytest.raises(ValueError):
        concentration_test(TOY, f, c=0.0, n_samples=10_000)
    for grid in ([], [0.2, 0.1], [-0.1, 0.1]):
        with pytest.raises(ValueError, match="t_grid"):
            concentration_test(TOY, f, c=1.0, n_samples=10_000, t_grid=grid)


def test_network_score_function():
    net = init_network([784, 8, 1], "tanh", 0)
    f = network_score(net)
    rep = concentration_test(TOY, f, c=TOY.nominal_c, n_samples=10_000)
    assert rep.violations == []
    with pytest.raises(ValueError):
        network_score(init_network([784, 8, 1], "heaviside", 0))


def test_gaussian_tail_matches_closed_form():
    rng = np.random.default_rng(8)
    f = clipped_linear(_unit(rng, 784), sigma=SIGMA)
    t = np.array([SIGMA, 2 * SIGMA])
    rep = concentration_test(TOY, f, c=1.0, n_samples=200_000, t_grid=t, seed=1)
    exact = [math.erfc(1 / math.sqrt(2)), math.erfc(2 / math.sqrt(2))]
    assert rep.empirical_tail == pytest.approx(exact, abs=5e-3)
