import numpy as np
import pytest

from multistroke.diffusion import linear_beta_schedule
from multistroke.oracles import (DiscreteToyDistribution, GaussianToyData, _fit_ms, check_mix_inverse,
                                 check_population_minimizer, check_target_decomposition,
                                 discrete_minimizer_check, gaussian_eps_posterior_mean, posterior_coefficient,
                                 regression_slope)
from multistroke.stroke import detail_project, mix, multires_complexity

SCHED = linear_beta_schedule(500)


def toy(seed=0, var=None):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=(1, 2, 2))
    var0 = rng.uniform(0.2, 1.5, size=(1, 2, 2)) if var is None else var
    return GaussianToyData(mu, var0, SCHED)


def test_posterior_limits():
    t = 200
    ab = SCHED.alpha_bars[t]
    tiny = toy(var=1e-14)
    x = np.random.default_rng(1).standard_normal((1, 2, 2))
    expected = (x - np.sqrt(ab) * tiny.mu0) / np.sqrt(1 - ab)
    np.testing.assert_allclose(gaussian_eps_posterior_mean(x, t, tiny), expected, rtol=1e-10)
    g = toy()
    np.testing.assert_array_equal(gaussian_eps_posterior_mean(np.sqrt(ab) * g.mu0, t, g), np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        posterior_coefficient(0, g)
    with pytest.raises(ValueError):
        GaussianToyData(np.zeros((1, 2, 2)), 0.0, SCHED)


@pytest.mark.parametrize("t", [50, 300])
def test_posterior_coefficient_matches_regression(t):
    g = toy(seed=2)
    x_t, eps = g.sample(t, 1_000_000, np.random.default_rng(3))
    coef = posterior_coefficient(t, g)
    for idx in np.ndindex(g.mu0.shape):
        slope, se = regression_slope(x_t[(slice(None), *idx)], eps[(slice(None), *idx)])
        assert abs(slope - coef[idx]) / coef[idx] < 0.005


def test_minimizers_identical_without_stroke():
    results = check_population_minimizer(toy(seed=4), 300, 0.0, 2, n=50_000, seed=1)
    assert results[0].statistic < 1e-8
    assert all(r.passed for r in results)


def test_minimizers_agree_with_stroke():
    results = {r.name: r for r in check_population_minimizer(toy(seed=5), 300, 0.5, 2, n=200_000, seed=2)}
    assert results["minimizer.ms_vs_ddpm"].passed
    assert results["minimizer.ms_vs_posterior"].passed
    with pytest.raises(ValueError):
        check_population_minimizer(toy(), 300, 1.0, 2, n=10)


def test_singular_normal_equations_raise():
    Z = np.ones((10, 2))
    with pytest.raises(np.linalg.LinAlgError):
        _fit_ms(Z, np.zeros((10, 4)), np.eye(4))


def test_discrete_toy_is_a_distribution():
    d = DiscreteToyDistribution.default(SCHED, 300)
    prob, x0, eps, x_t = d.atoms()
    assert abs(prob.sum() - 1) < 1e-12
    assert len(prob) == 4 * 8**4
    assert x_t.shape == (len(prob), 1, 2, 2)
    with pytest.raises(ValueError):
        DiscreteToyDistribution(d.x0_support, d.x0_probs * 2, d.eps_grid, d.eps_probs, 300, SCHED)


@pytest.mark.parametrize("w", [0.0, 0.5, 0.9])
def test_discrete_minimizer_is_conditional_mean(w):
    results = discrete_minimizer_check(DiscreteToyDistribution.default(SCHED, 300, seed=1), w, 2)
    for r in results:
        assert r.passed, r
    # collisions make the conditional mean non-trivial
    assert "0 colliding" not in results[0].detail


def test_target_decomposition_examples():
    rng = np.random.default_rng(6)
    coarse = np.repeat(np.repeat(rng.standard_normal((1, 2, 2)), 2, 1), 2, 2)
    for w in (0.0, 0.5, 0.9):
        res = check_target_decomposition(coarse, w, 2, 1.0)
        assert all(r.passed for r in res)
        assert res[2].statistic == pytest.approx(0.0, abs=1e-12)
    detail = detail_project(rng.standard_normal((1, 4, 4)), 2)
    res = check_target_decomposition(detail, 0.5, 2, 1.0)
    assert all(r.passed for r in res)
    ratio = multires_complexity(mix(detail, 0.5, 2), 2, 1.0) / multires_complexity(detail, 2, 1.0)
    assert ratio == pytest.approx(0.25, rel=1e-12)


def test_mix_inverse_check():
    x = np.random.default_rng(7).standard_normal((3, 8, 8))
    for w in (0.0, 0.3, 0.95):
        assert check_mix_inverse(x, w, 2).passed


def test_check_result_csv_row():
    r = check_mix_inverse(np.zeros((1, 2, 2)), 0.1, 2)
    assert r.csv_row() == ["mix_inverse.round_trip", 0.0, 1e-12, "pass"]
