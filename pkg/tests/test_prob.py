"""Distribution tags, seeded streams, and exactly-summing weight vectors."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from causalpost import RngHandle
from causalpost.errors import InvalidParameterError
from causalpost.prob import (
    bernoulli,
    beta_dist,
    categorical,
    exact_simplex,
    expit,
    gamma_dist,
    half_cauchy,
    inv_gamma,
    log_density,
    normal,
    point_mass,
    poisson,
    sample_dirichlet,
    sample_scalar,
    std_normal_cdf,
)


def test_rng_handle_streams():
    a = RngHandle(7, 3).generator().random(5)
    b = RngHandle(7, 3).generator().random(5)
    c = RngHandle(7, 4).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_handle_derive_is_keyed():
    base = RngHandle(7, 3)
    a = base.derive(1, 2).generator().random(4)
    b = base.derive(1, 2).generator().random(4)
    c = base.derive(2, 1).generator().random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize(
    "build",
    [
        lambda: normal(0.0, -1.0),
        lambda: normal(0.0, 0.0),
        lambda: gamma_dist(0.0, 1.0),
        lambda: gamma_dist(1.0, 0.0),
        lambda: inv_gamma(0.0, 1.0),
        lambda: bernoulli(1.5),
        lambda: poisson(-1.0),
        lambda: half_cauchy(0.0),
        lambda: beta_dist(0.0, 1.0),
        lambda: categorical([0.5, 0.6]),
        lambda: categorical([-0.1, 1.1]),
    ],
)
def test_constructors_validate(build):
    with pytest.raises(InvalidParameterError):
        build()


@pytest.mark.parametrize(
    "dist, frozen",
    [
        (normal(2.0, 3.0), stats.norm(2.0, 3.0)),
        (gamma_dist(2.0, 3.0), stats.gamma(2.0, scale=1.0 / 3.0)),
        (inv_gamma(3.0, 2.0), stats.invgamma(3.0, scale=2.0)),
        (beta_dist(2.0, 5.0), stats.beta(2.0, 5.0)),
        (half_cauchy(2.0), stats.halfcauchy(scale=2.0)),
    ],
)
def test_continuous_samples_match_scipy(dist, frozen):
    gen = np.random.default_rng(5)
    draws = np.array([sample_scalar(dist, gen) for _ in range(3000)])
    assert stats.kstest(draws, frozen.cdf).pvalue > 1e-3


def test_discrete_samples_match_scipy():
    gen = np.random.default_rng(6)
    m = 20000
    b = np.array([sample_scalar(bernoulli(0.3), gen) for _ in range(m)])
    assert abs(b.mean() - 0.3) <= 4 * np.sqrt(0.3 * 0.7 / m)
    p = np.array([sample_scalar(poisson(4.0), gen) for _ in range(m)])
    assert abs(p.mean() - 4.0) <= 4 * np.sqrt(4.0 / m)
    probs = [0.2, 0.3, 0.5]
    c = np.array([sample_scalar(categorical(probs), gen) for _ in range(m)])
    for k, pk in enumerate(probs):
        assert abs(np.mean(c == k) - pk) <= 4 * np.sqrt(pk * (1 - pk) / m)


def test_point_mass_is_degenerate():
    gen = np.random.default_rng(0)
    assert all(sample_scalar(point_mass(2.5), gen) == 2.5 for _ in range(10))
    assert log_density(point_mass(2.5), 2.5) == 0.0
    assert log_density(point_mass(2.5), 2.4) == -np.inf


@pytest.mark.parametrize(
    "dist, frozen, grid",
    [
        (normal(1.0, 2.0), stats.norm(1.0, 2.0), np.linspace(-6, 8, 25)),
        (gamma_dist(2.5, 1.5), stats.gamma(2.5, scale=1 / 1.5), np.linspace(0.1, 9, 25)),
        (inv_gamma(3.0, 2.0), stats.invgamma(3.0, scale=2.0), np.linspace(0.1, 9, 25)),
        (beta_dist(2.0, 5.0), stats.beta(2.0, 5.0), np.linspace(0.05, 0.95, 19)),
        (half_cauchy(2.0), stats.halfcauchy(scale=2.0), np.linspace(0.0, 9, 25)),
    ],
)
def test_log_density_matches_scipy(dist, frozen, grid):
    got = np.array([log_density(dist, float(x)) for x in grid])
    assert np.allclose(got, frozen.logpdf(grid), atol=1e-12)


def test_log_mass_matches_scipy():
    ks = np.arange(0, 12)
    got = np.array([log_density(poisson(4.0), float(k)) for k in ks])
    assert np.allclose(got, stats.poisson(4.0).logpmf(ks), atol=1e-12)
    assert log_density(bernoulli(0.3), 1.0) == pytest.approx(np.log(0.3))
    assert log_density(bernoulli(0.3), 0.0) == pytest.approx(np.log(0.7))
    assert log_density(categorical([0.2, 0.8]), 1.0) == pytest.approx(np.log(0.8))


def test_log_density_off_support():
    assert log_density(gamma_dist(2.0, 1.0), -1.0) == -np.inf
    assert log_density(beta_dist(2.0, 2.0), 1.5) == -np.inf
    assert log_density(half_cauchy(1.0), -0.1) == -np.inf
    assert log_density(poisson(4.0), 2.5) == -np.inf
    assert log_density(categorical([0.2, 0.8]), 2.0) == -np.inf


def test_dirichlet_moments():
    alpha = np.array([2.0, 3.0, 4.0])
    gen = np.random.default_rng(8)
    m = 20000
    draws = np.stack([sample_dirichlet(alpha, gen) for _ in range(m)])
    want = alpha / alpha.sum()
    se = draws.std(axis=0, ddof=1) / np.sqrt(m)
    assert np.all(np.abs(draws.mean(axis=0) - want) <= 4 * se)


def test_dirichlet_sums_exactly_under_any_order():
    gen = np.random.default_rng(9)
    for _ in range(200):
        w = sample_dirichlet(np.full(20, 0.5), gen)
        order = gen.permutation(20)
        total = 0.0
        for i in order:
            total += w[i]
        assert total == 1.0


def test_dirichlet_validates():
    gen = np.random.default_rng(0)
    with pytest.raises(InvalidParameterError):
        sample_dirichlet(np.array([1.0, -1.0]), gen)
    with pytest.raises(InvalidParameterError):
        sample_dirichlet(np.array([]), gen)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.floats(min_value=1e-8, max_value=1e8, allow_nan=False, allow_infinity=False),
        min_size=1,
        max_size=64,
    )
)
def test_exact_simplex_sums_to_one(ws):
    w = np.array(ws)
    out = exact_simplex(w)
    assert np.all(out >= 0.0)
    assert float(np.sum(out)) == 1.0
    total = 0.0
    for v in reversed(out):
        total += v
    assert total == 1.0
    want = w / w.sum()
    assert np.max(np.abs(out - want)) <= 2 ** -50


def test_exact_simplex_edge_cases():
    assert exact_simplex(np.array([3.0]))[0] == 1.0
    out = exact_simplex(np.zeros(4))
    assert np.array_equal(out, np.full(4, 0.25))
    with pytest.raises(InvalidParameterError):
        exact_simplex(np.array([1.0, -0.5]))
    with pytest.raises(InvalidParameterError):
        exact_simplex(np.array([1.0, np.nan]))
    with pytest.raises(InvalidParameterError):
        exact_simplex(np.array([]))


def test_scalar_special_functions_match_scipy():
    x = np.linspace(-8.0, 8.0, 41)
    got = np.array([std_normal_cdf(v) for v in x])
    assert np.allclose(got, stats.norm.cdf(x), atol=1e-12)
    z = np.linspace(-30.0, 30.0, 61)
    got = np.array([expit(v) for v in z])
    assert np.allclose(got, special.expit(z), atol=1e-12)
