"""Sampler core: targets, chain configs, draws containers, diagnostics."""

import numpy as np
import pytest
from scipy import stats

from causalpost import (
    ChainConfig,
    DrawsMatrix,
    LogPosteriorTarget,
    effective_sample_size,
    run_chains,
    split_rhat,
)
from causalpost.errors import (
    InitializationError,
    InvalidParameterError,
    ShapeError,
)


def _gaussian_target(mean=0.0, sd=1.0):
    return LogPosteriorTarget(
        dim=1,
        names=["x"],
        log_post=lambda v: -0.5 * ((v[0] - mean) / sd) ** 2,
        default_init=np.array([mean]),
    )


def test_target_validates():
    with pytest.raises(ShapeError):
        LogPosteriorTarget(dim=2, names=["a"], log_post=lambda v: 0.0)
    with pytest.raises(InvalidParameterError):
        LogPosteriorTarget(
            dim=1, names=["a"], log_post=lambda v: 0.0, transforms=["sqrt"]
        )
    with pytest.raises(InvalidParameterError):
        LogPosteriorTarget(
            dim=2, names=["a", "b"], log_post=lambda v: 0.0, blocks=[[0]]
        )


def test_chain_config_validates():
    with pytest.raises(InvalidParameterError):
        ChainConfig(n_chains=0)
    with pytest.raises(InvalidParameterError):
        ChainConfig(iterations=0, burnin=0)
    with pytest.raises(InvalidParameterError):
        ChainConfig(iterations=100, burnin=100)
    with pytest.raises(InvalidParameterError):
        ChainConfig(thin=0)
    assert ChainConfig(iterations=4000, burnin=2000).retained_per_chain == 2000
    assert ChainConfig(iterations=4000, burnin=2000, thin=3).retained_per_chain == 667


def test_draws_matrix_validates_and_indexes():
    with pytest.raises(ShapeError):
        DrawsMatrix(names=["a", "b"], values=np.zeros((3, 1)), chain=np.zeros(3), iteration=np.zeros(3))
    dm = DrawsMatrix(
        names=["a", "b"],
        values=np.arange(6.0).reshape(3, 2),
        chain=np.array([0, 0, 1]),
        iteration=np.array([0, 1, 0]),
    )
    assert np.array_equal(dm.column("b"), np.array([1.0, 3.0, 5.0]))
    with pytest.raises(KeyError):
        dm.column("c")
    wider = dm.with_columns(["c"], dm.column("a") * 2)
    assert wider.names == ["a", "b", "c"]
    assert np.array_equal(wider.column("c"), np.array([0.0, 4.0, 8.0]))
    assert dm.n_draws == 3 and dm.n_chains == 2


def test_draws_csv_round_trip(tmp_path):
    gen = np.random.default_rng(3)
    dm = DrawsMatrix(
        names=["a", "b"],
        values=gen.standard_normal((40, 2)) * np.array([1e-7, 1e7]),
        chain=np.repeat([0, 1], 20),
        iteration=np.tile(np.arange(20), 2),
    )
    path = tmp_path / "draws.csv"
    dm.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "chain,iter,a,b"
    back = DrawsMatrix.from_csv(path)
    assert back.names == dm.names
    assert np.array_equal(back.values, dm.values)
    assert np.array_equal(back.chain, dm.chain)
    assert np.array_equal(back.iteration, dm.iteration)


def test_from_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(ShapeError):
        DrawsMatrix.from_csv(path)


def test_run_chains_is_deterministic():
    cfg = ChainConfig(n_chains=2, iterations=400, burnin=200, seed=5)
    a = run_chains(_gaussian_target(), cfg)
    b = run_chains(_gaussian_target(), cfg)
    assert np.array_equal(a.values, b.values)
    c = run_chains(_gaussian_target(), ChainConfig(n_chains=2, iterations=400, burnin=200, seed=6))
    assert not np.array_equal(a.values, c.values)


def test_run_chains_recovers_gaussian_moments():
    cfg = ChainConfig(n_chains=4, iterations=2000, burnin=1000, seed=2)
    draws = run_chains(_gaussian_target(mean=3.0, sd=2.0), cfg)
    ess = effective_sample_size(draws, "x")
    col = draws.column("x")
    assert abs(col.mean() - 3.0) <= 4 * 2.0 / np.sqrt(ess)
    assert abs(col.std(ddof=1) - 2.0) <= 4 * 2.0 * np.sqrt(0.5 / ess)


def test_log_transform_keeps_support():
    # inverse-gamma marginal: positive scale parameter
    target = LogPosteriorTarget(
        dim=1,
        names=["v"],
        log_post=lambda x: -3.0 * np.log(x[0]) - 1.0 / x[0] if x[0] > 0 else -np.inf,
        transforms=["log"],
        default_init=np.array([1.0]),
    )
    draws = run_chains(target, ChainConfig(n_chains=2, iterations=600, burnin=300, seed=1))
    assert np.all(draws.column("v") > 0.0)


def test_logit_transform_keeps_support():
    target = LogPosteriorTarget(
        dim=1,
        names=["p"],
        log_post=lambda x: stats.beta(2.0, 3.0).logpdf(x[0]) if 0 < x[0] < 1 else -np.inf,
        transforms=["logit"],
        default_init=np.array([0.5]),
    )
    draws = run_chains(target, ChainConfig(n_chains=2, iterations=600, burnin=300, seed=1))
    col = draws.column("p")
    assert np.all((col > 0.0) & (col < 1.0))


def test_initialization_failures():
    unstartable = LogPosteriorTarget(dim=1, names=["x"], log_post=lambda v: 0.0)
    with pytest.raises(InitializationError):
        run_chains(unstartable, ChainConfig(n_chains=1, iterations=10, burnin=5))

    out_of_support = LogPosteriorTarget(
        dim=1,
        names=["v"],
        log_post=lambda x: 0.0,
        transforms=["log"],
        default_init=np.array([1.0]),
    )
    with pytest.raises(InitializationError):
        run_chains(
            out_of_support,
            ChainConfig(n_chains=1, iterations=10, burnin=5, init=np.array([-2.0])),
        )

    nowhere_finite = LogPosteriorTarget(
        dim=1, names=["x"], log_post=lambda v: -np.inf, default_init=np.array([0.0])
    )
    with pytest.raises(InitializationError):
        run_chains(nowhere_finite, ChainConfig(n_chains=1, iterations=10, burnin=5))


def test_init_shape_checks():
    target = _gaussian_target()
    with pytest.raises(ShapeError):
        run_chains(target, ChainConfig(n_chains=1, iterations=10, burnin=5, init=np.zeros(3)))
    with pytest.raises(ShapeError):
        run_chains(
            target,
            ChainConfig(n_chains=2, iterations=10, burnin=5, init=np.zeros((3, 1))),
        )


def _two_chain_draws(offset):
    gen = np.random.default_rng(0)
    a = gen.standard_normal(400)
    b = gen.standard_normal(400) + offset
    return DrawsMatrix(
        names=["x"],
        values=np.concatenate([a, b])[:, None],
        chain=np.repeat([0, 1], 400),
        iteration=np.tile(np.arange(400), 2),
    )


def test_split_rhat_separates_chains():
    assert split_rhat(_two_chain_draws(0.0), "x") < 1.05
    assert split_rhat(_two_chain_draws(5.0), "x") > 1.5


def test_split_rhat_needs_two_chains():
    dm = DrawsMatrix(
        names=["x"],
        values=np.zeros((10, 1)),
        chain=np.zeros(10),
        iteration=np.arange(10),
    )
    with pytest.raises(InvalidParameterError):
        split_rhat(dm, "x")


def test_split_rhat_constant_is_nan():
    dm = DrawsMatrix(
        names=["x"],
        values=np.ones((40, 1)),
        chain=np.repeat([0, 1], 20),
        iteration=np.tile(np.arange(20), 2),
    )
    assert np.isnan(split_rhat(dm, "x"))


def test_effective_sample_size_iid_and_bounds():
    gen = np.random.default_rng(4)
    dm = DrawsMatrix(
        names=["x"],
        values=gen.standard_normal(4000)[:, None],
        chain=np.repeat([0, 1], 2000),
        iteration=np.tile(np.arange(2000), 2),
    )
    ess = effective_sample_size(dm, "x")
    assert 2000 <= ess <= 4000

    short = DrawsMatrix(
        names=["x"],
        values=np.arange(50.0)[:, None],
        chain=np.zeros(50),
        iteration=np.arange(50),
    )
    with pytest.raises(InvalidParameterError):
        effective_sample_size(short, "x")


def test_effective_sample_size_penalizes_autocorrelation():
    gen = np.random.default_rng(9)
    steps = gen.standard_normal(2000)
    walk = np.cumsum(steps) * 0.2 + gen.standard_normal(2000)
    dm = DrawsMatrix(
        names=["x"], values=walk[:, None], chain=np.zeros(2000), iteration=np.arange(2000)
    )
    assert effective_sample_size(dm, "x") < 500
