"""Session fixtures: the expensive posterior fits, built once and shared."""

import numpy as np
import pytest

from causalpost import (
    BARTConfig,
    ChainConfig,
    DoseModelSpec,
    DPConfig,
    GPConfig,
    LongitudinalDataset,
    ObservedDataset,
    PartialPoolSpec,
    RngHandle,
    Scenario,
    ShrinkageSpec,
    bart_fit_predict,
    bnp_ate,
    dp_fit,
    dp_predict,
    fit_dose_ar1,
    fit_linear,
    fit_partial_pool,
    fit_sequential,
    generate,
    gp_fit_predict,
    marginal_ate_from_linear,
)


@pytest.fixture(scope="session")
def dose_data():
    return generate(Scenario(id="dose"))


@pytest.fixture(scope="session")
def dose_fit(dose_data):
    spec = DoseModelSpec(n_levels=10, mu1=0.0, tau=(10.0,) + (1.0,) * 9)
    cfg = ChainConfig(n_chains=4, iterations=4000, burnin=2000, seed=0)
    return fit_dose_ar1(dose_data, spec, cfg)


@pytest.fixture(scope="session")
def partialpool_data():
    return generate(Scenario(id="partialpool"))


@pytest.fixture(scope="session")
def partialpool_fit(partialpool_data):
    cfg = ChainConfig(n_chains=4, iterations=4000, burnin=2000, seed=0)
    return fit_partial_pool(partialpool_data, PartialPoolSpec(n_offsets=4, tau=0.5), cfg)


@pytest.fixture(scope="session")
def gcomp_data():
    return generate(Scenario(id="gcomp", seed=2))


@pytest.fixture(scope="session")
def horseshoe_fit(gcomp_data):
    cfg = ChainConfig(n_chains=4, iterations=3000, burnin=1500, seed=0)
    return fit_sequential(gcomp_data, ShrinkageSpec(family="horseshoe"), cfg)


@pytest.fixture(scope="session")
def ridge_prior_fit():
    # two all-zero rows: the data cannot move the coefficients, and the
    # sampler still exposes every column of the sequential layout
    tiny = LongitudinalDataset(
        y=np.zeros(2), treatments=np.zeros((2, 10)), confounders=np.zeros((2, 10))
    )
    cfg = ChainConfig(n_chains=4, iterations=8000, burnin=1000, thin=2, seed=0)
    return fit_sequential(tiny, ShrinkageSpec(family="ridge", lam=2.0), cfg, prior_only=True)


@pytest.fixture(scope="session")
def confounding_data():
    """One recorded covariate plus one withheld from the analysis model."""
    full = generate(Scenario(id="sensitivity"))
    observed = ObservedDataset(
        y=full.y,
        a=full.a,
        confounders=full.confounders[:, [0]],
        confounder_names=[full.confounder_names[0]],
    )
    return full, observed


@pytest.fixture(scope="session")
def confounded_psi(confounding_data):
    _, observed = confounding_data
    fit = fit_linear(observed, cfg=ChainConfig(n_chains=4, iterations=3000, burnin=1500, seed=0))
    return marginal_ate_from_linear(fit)


@pytest.fixture(scope="session")
def bnp_data():
    return generate(Scenario(id="bnp", seed=2))


@pytest.fixture(scope="session")
def bnp_summaries(bnp_data):
    """Interval summaries for three nonparametric fits and a linear baseline."""
    data = bnp_data
    n = data.n
    test = np.vstack(
        [
            np.column_stack([np.ones(n), data.confounders]),
            np.column_stack([np.zeros(n), data.confounders]),
        ]
    )
    rng = RngHandle(23, 0)
    out = {}

    dcfg = DPConfig.from_data(data)
    dfit = dp_fit(data, dcfg, ChainConfig(n_chains=2, iterations=400, burnin=200, seed=1))
    dpred = dp_predict(dfit, dcfg, test, RngHandle(31, 0))
    out["dp"] = bnp_ate(dpred[:, :n], dpred[:, n:], rng.derive(1)).summary()

    gfit = gp_fit_predict(
        data, test, GPConfig(), ChainConfig(n_chains=2, iterations=400, burnin=200, seed=1)
    )
    out["gp"] = bnp_ate(gfit.mu[:, :n], gfit.mu[:, n:], rng.derive(2)).summary()

    bfit = bart_fit_predict(
        data, test, BARTConfig(), ChainConfig(n_chains=2, iterations=300, burnin=150, seed=1)
    )
    out["bart"] = bnp_ate(bfit.mu[:, :n], bfit.mu[:, n:], rng.derive(3)).summary()

    lfit = fit_linear(data, cfg=ChainConfig(n_chains=4, iterations=3000, burnin=1500, seed=1))
    out["linear"] = marginal_ate_from_linear(lfit).summary()
    return out
