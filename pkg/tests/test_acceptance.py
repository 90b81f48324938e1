"""End-to-end acceptance checks, one test and one PASS/FAIL line per check.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the measured
numbers next to each verdict.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import norm

from causalpost import (
    ChainConfig,
    DPConfig,
    GPConfig,
    LogPosteriorTarget,
    ObservedDataset,
    Regime,
    RngHandle,
    Scenario,
    SensitivitySpec,
    bb_weights,
    effective_sample_size,
    fit_linear,
    gcomp_dynamic,
    gcomp_static,
    gp_fit_predict,
    gp_kernel,
    marginal_ate_from_linear,
    oracle_truth,
    run_chains,
    sensitivity_perturb,
)
from causalpost import standardize_stratified_or
from causalpost.bnp import ClusterParams, ColumnModel, DPState, dp_regression
from causalpost.prob import gamma_dist, normal, point_mass


def _verdict(tag: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} [{tag}] {detail}")
    assert ok, f"[{tag}] {detail}"


def test_bootstrap_weight_moments():
    """Resampling weights match the flat-Dirichlet mean and variance."""
    gen = RngHandle(42, 0).generator()
    m = 100_000
    detail = []
    ok = True
    for n in (3, 50):
        draws = np.empty((m, n))
        for r in range(m):
            draws[r] = bb_weights(n, gen)
        mean_err = np.abs(draws.mean(axis=0) - 1.0 / n)
        mean_se = draws.std(axis=0, ddof=1) / np.sqrt(m)
        centered = draws - draws.mean(axis=0)
        m2 = (centered**2).mean(axis=0)
        m4 = (centered**4).mean(axis=0)
        var_err = np.abs(draws.var(axis=0, ddof=1) - (n - 1) / (n**2 * (n + 1)))
        var_se = np.sqrt((m4 - m2**2) / m)
        ok_n = bool(np.all(mean_err <= 3 * mean_se) and np.all(var_err <= 3 * var_se))
        ok = ok and ok_n
        detail.append(
            f"n={n} worst mean z {np.max(mean_err / mean_se):.2f} "
            f"var z {np.max(var_err / var_se):.2f}"
        )
    _verdict("bootstrap moments", ok, "; ".join(detail) + " (all within 3 MCSE)")


def test_linear_effect_identity_and_coverage():
    """Marginalized effect draws are the treatment column; intervals cover."""
    theta_true = 1.5
    hits = 0
    identical = True
    for r in range(20):
        gen = RngHandle(1000 + r, 0).generator()
        n = 150
        lmat = gen.standard_normal((n, 2))
        a = (gen.random(n) < 0.5).astype(float)
        y = theta_true * a + 0.4 * lmat[:, 0] - 0.9 * lmat[:, 1] + gen.standard_normal(n)
        data = ObservedDataset(y=y, a=a, confounders=lmat, confounder_names=["L1", "L2"])
        fit = fit_linear(data, cfg=ChainConfig(n_chains=2, iterations=1200, burnin=600, seed=r))
        est = marginal_ate_from_linear(fit)
        identical = identical and np.array_equal(est.values, fit.column("theta"))
        s = est.summary()
        hits += s["q025"] <= theta_true <= s["q975"]
    ok = identical and hits >= 17
    _verdict(
        "linear effect",
        ok,
        f"draws identical to treatment column: {identical}; coverage {hits}/20 (need >= 17)",
    )


def test_dose_curve_beats_per_level_fit(dose_data, dose_fit):
    """Smoothing the dose curve beats per-level least squares against truth."""
    data, fit = dose_data, dose_fit
    truth = np.array([5 * (norm.cdf(k - 5) - norm.cdf(k - 6)) for k in range(1, 11)])
    post_curve = np.array([fit.column(f"Psi_{k}").mean() for k in range(1, 11)])

    dummies = np.column_stack([(data.a == k).astype(float) for k in range(1, 11)])
    design = np.column_stack([dummies, np.ones(data.n), data.confounders])
    coef, *_ = np.linalg.lstsq(design, data.y, rcond=None)
    mle_curve = np.diff(np.concatenate([[0.0], coef[:10]]))

    rmse_post = float(np.sqrt(np.mean((post_curve - truth) ** 2)))
    rmse_mle = float(np.sqrt(np.mean((mle_curve - truth) ** 2)))
    gap_post = abs(fit.column("Psi_8").mean() - fit.column("Psi_7").mean())
    gap_mle = abs(mle_curve[7] - mle_curve[6])
    ok = rmse_post < rmse_mle and gap_post < gap_mle
    _verdict(
        "dose curve",
        ok,
        f"rmse {rmse_post:.4f} < {rmse_mle:.4f}; sparse-level gap {gap_post:.4f} < {gap_mle:.4f}",
    )


def _logistic_mle(x, y):
    def nll(b):
        z = x @ b
        return float(np.sum(np.logaddexp(0.0, z) - y * z))

    return minimize(nll, np.zeros(x.shape[1]), method="BFGS").x


def test_partial_pooling_between_and_or_coverage(partialpool_data, partialpool_fit):
    """Pooled-prior effects sit between per-stratum and pooled fits; odds
    ratios cover their simulated truths."""
    data, fit = partialpool_data, partialpool_fit
    v = data.strata.astype(int)
    vdum = np.column_stack([(v == s).astype(float) for s in range(2, 6)])
    x_pool = np.column_stack([np.ones(data.n), data.confounders, vdum, data.a])
    pooled = _logistic_mle(x_pool, data.y)[-1]

    between = True
    detail = []
    for s in (4, 5):
        m = v == s
        x_s = np.column_stack([np.ones(m.sum()), data.confounders[m], data.a[m]])
        mle_s = _logistic_mle(x_s, data.y[m])[-1]
        post = fit.column(f"effect_v{s}").mean()
        lo, hi = sorted([mle_s, pooled])
        between = between and lo < post < hi
        detail.append(f"v{s}: {lo:.3f} < {post:.3f} < {hi:.3f}")

    ors = standardize_stratified_or(fit, data, RngHandle(77, 0))
    covered = 0
    for s in range(1, 6):
        o = oracle_truth(Scenario(id="partialpool"), f"or_{s}")
        summ = ors[s].summary()
        covered += summ["q025"] <= o.value <= summ["q975"]
    ok = between and covered == 5
    _verdict(
        "partial pooling", ok, "; ".join(detail) + f"; OR coverage {covered}/5"
    )


def test_shrinkage_prior_decay_and_fit(ridge_prior_fit, gcomp_data, horseshoe_fit):
    """Ridge prior sd halves per extra lag; the fitted late-stage confounder
    model shrinks a null coefficient below least squares and keeps the
    signal coefficient."""
    sds = {nm: ridge_prior_fit.column(nm).std(ddof=1) for nm in ridge_prior_fit.names}
    worst = 0.0
    for s in range(1, 10):
        for fam in ("L", "A"):
            r = sds[f"y_b{fam}{s - 1}"] / sds[f"y_b{fam}{s}"]
            worst = max(worst, abs(r - 0.5))
    ok_prior = worst <= 0.025

    data, fit = gcomp_data, horseshoe_fit
    t_last = data.t_plus_1 - 1
    design = np.column_stack(
        [np.ones(data.n), data.confounders[:, :t_last], data.treatments[:, :t_last]]
    )
    coef, *_ = np.linalg.lstsq(design, data.confounders[:, t_last], rcond=None)
    mle_b0, mle_b1 = coef[1], coef[2]
    b0 = fit.column(f"lt{t_last}_bL0")
    b1 = fit.column(f"lt{t_last}_bL1")
    lo, hi = np.quantile(b1, [0.025, 0.975])
    ok_fit = abs(b0.mean()) < abs(mle_b0) and lo <= mle_b1 <= hi
    _verdict(
        "shrinkage",
        ok_prior and ok_fit,
        f"worst |sd ratio - 0.5| {worst:.4f} (<= 0.025); "
        f"|{b0.mean():+.4f}| < |{mle_b0:+.4f}|; "
        f"({lo:.3f}, {hi:.3f}) covers {mle_b1:.4f}",
    )


def test_regime_contrasts_zero_and_coverage(horseshoe_fit):
    """Identical regimes contrast to exactly zero; static and threshold
    contrasts cover their simulated truths."""
    sc = Scenario(id="gcomp", seed=2)
    rng = RngHandle(17, 0)
    always = Regime(kind="static", vec=(1,) * 10)
    never = Regime(kind="static", vec=(0,) * 10)

    same = gcomp_static(horseshoe_fit, (always, always), 300, rng.derive(3))
    ok_zero = bool(np.all(same.values == 0.0))

    o_static = oracle_truth(sc, "regime_diff:always:never")
    o_dyn = oracle_truth(sc, "regime_diff:kappa=0.0:never")
    est_s = gcomp_static(horseshoe_fit, (always, never), 300, rng.derive(1))
    est_d = gcomp_dynamic(
        horseshoe_fit,
        Regime(kind="dynamic", kappa=0.0),
        Regime(kind="dynamic", kappa=float("inf")),
        300,
        rng.derive(2),
    )
    ss, sd = est_s.summary(), est_d.summary()
    ok_s = ss["q025"] <= o_static.value <= ss["q975"]
    ok_d = sd["q025"] <= o_dyn.value <= sd["q975"]
    _verdict(
        "regime contrasts",
        ok_zero and ok_s and ok_d,
        f"identical regimes exactly zero: {ok_zero}; "
        f"static ({ss['q025']:.3f}, {ss['q975']:.3f}) covers {o_static.value:.3f}; "
        f"threshold ({sd['q025']:.3f}, {sd['q975']:.3f}) covers {o_dyn.value:.3f}",
    )


def test_bias_prior_shift_checks(confounded_psi):
    """Bias-prior perturbation: exact at a point mass, correct mean shift and
    variance inflation, and a truth-centered point mass restores coverage."""
    psi = confounded_psi
    m = psi.n_draws

    pm = sensitivity_perturb(psi, SensitivitySpec(prior=point_mass(0.0)), RngHandle(5, 0))
    ok_pm = np.array_equal(pm.values, psi.values)

    neg = sensitivity_perturb(
        psi, SensitivitySpec(prior=gamma_dist(1.0, 3.0), negated=True), RngHandle(6, 0)
    )
    shift = neg.values.mean() - psi.values.mean()
    ok_shift = abs(shift - 1.0 / 3.0) <= 3 * (1.0 / 3.0) / np.sqrt(m)

    nrm = sensitivity_perturb(
        psi, SensitivitySpec(prior=normal(0.0, 3**-0.5)), RngHandle(7, 0)
    )
    dmean = nrm.values.mean() - psi.values.mean()
    dvar = nrm.values.var(ddof=1) - psi.values.var(ddof=1)
    ok_norm = abs(dmean) <= 3 * (3**-0.5) / np.sqrt(m) and (1 / 3) * 0.95 <= dvar <= (1 / 3) * 1.05

    true_effect = 1.0
    s = psi.summary()
    ok_miss = not (s["q025"] <= true_effect <= s["q975"])
    xi = oracle_truth(Scenario(id="sensitivity"), "bias")
    adj = sensitivity_perturb(psi, SensitivitySpec(prior=point_mass(xi.value)), RngHandle(8, 0))
    sa = adj.summary()
    ok_cover = sa["q025"] <= true_effect <= sa["q975"]

    _verdict(
        "bias priors",
        ok_pm and ok_shift and ok_norm and ok_miss and ok_cover,
        f"point mass exact: {ok_pm}; shift {shift:.4f} ~ 1/3; dvar {dvar:.4f} ~ 1/3; "
        f"({s['q025']:.2f}, {s['q975']:.2f}) misses {true_effect}; "
        f"adjusted ({sa['q025']:.2f}, {sa['q975']:.2f}) covers it",
    )


def test_mixture_regression_kernel_limit():
    """With no base-measure mass and one subject per cluster, the mixture
    regression is exactly a Gaussian-kernel weighted mean."""
    gen = np.random.default_rng(11)
    n = 25
    lvals = gen.uniform(-2.0, 2.0, n)
    yvals = np.sin(lvals) + gen.normal(0.0, 0.3, n)
    h = 0.4

    cfg = DPConfig(
        columns=[ColumnModel("gaussian", (0.0, 10.0, 2.0, 2.0))],
        beta_loc=np.zeros(2),
        beta_cov=np.eye(2) * 100.0,
        var_shape=2.0,
        var_scale=1.0,
        alpha=1.0,
    )
    clusters = [
        ClusterParams(
            beta=np.array([yvals[i], 0.0]), var=1.0, cols=[("gaussian", (lvals[i], h**2))]
        )
        for i in range(n)
    ]
    state = DPState(assignments=np.arange(n), clusters=clusters, alpha=0.0)
    prior_draw = ClusterParams(beta=np.zeros(2), var=1.0, cols=[("gaussian", (0.0, 1.0))])

    grid = np.linspace(-2.5, 2.5, 100)
    worst = 0.0
    for x in grid:
        got = dp_regression(state, prior_draw, cfg, np.array([x]))
        kern = norm.pdf(x, loc=lvals, scale=h)
        want = float(np.sum(yvals * kern) / np.sum(kern))
        worst = max(worst, abs(got - want))
    _verdict("kernel limit", worst < 1e-10, f"max |mixture - kernel mean| {worst:.2e} over 100 points")


def test_gp_kernel_matrix_and_interpolation():
    """Kernel matrices are symmetric with eigenvalues at or above the jitter;
    a near-noiseless fit interpolates the training outcomes."""
    gen = np.random.default_rng(7)
    x = gen.standard_normal((40, 3))
    ok_mat = True
    min_eigs = []
    for eta, rho in ((1.0, 1.0), (3.0, 0.2)):
        kmat = np.array(
            [
                [gp_kernel(x[i], x[j], eta, rho, same_index=(i == j)) for j in range(40)]
                for i in range(40)
            ]
        )
        ok_mat = ok_mat and np.array_equal(kmat, kmat.T)
        min_eigs.append(float(np.linalg.eigvalsh(kmat).min()))
    ok_eig = all(e >= 0.009 for e in min_eigs)

    gen = np.random.default_rng(3)
    n = 20
    lmat = gen.standard_normal((n, 1))
    a = (gen.random(n) < 0.5).astype(float)
    y = np.sin(2 * lmat[:, 0]) + a
    data = ObservedDataset(y=y, a=a, confounders=lmat, confounder_names=["L"])
    test = np.column_stack([a, lmat])
    fit = gp_fit_predict(
        data,
        test,
        GPConfig(eta=1000.0, rho=1.0, noise=1e-6),
        ChainConfig(n_chains=1, iterations=30, burnin=10, seed=0),
    )
    err = float(np.max(np.abs(fit.mean - y[None, :])))
    ok = ok_mat and ok_eig and err < 1e-3
    _verdict(
        "gp kernel",
        ok,
        f"symmetric: {ok_mat}; min eig {min(min_eigs):.4f} >= 0.009; "
        f"interpolation err {err:.2e} < 1e-3",
    )


def test_nonparametric_interval_calibration(bnp_summaries):
    """Flexible-model intervals cover the true effect where a linear model
    cannot, and agree with each other."""
    true_ate = 0.5
    s = bnp_summaries
    cover = {k: s[k]["q025"] <= true_ate <= s[k]["q975"] for k in ("dp", "gp", "bart")}
    miss_lin = not (s["linear"]["q025"] <= true_ate <= s["linear"]["q975"])
    overlap = all(
        max(s[a]["q025"], s[b]["q025"]) <= min(s[a]["q975"], s[b]["q975"])
        for a, b in (("dp", "gp"), ("dp", "bart"), ("gp", "bart"))
    )
    ok = all(cover.values()) and miss_lin and overlap
    _verdict(
        "nonparametric intervals",
        ok,
        f"cover {true_ate}: dp {cover['dp']}, gp {cover['gp']}, bart {cover['bart']}; "
        f"linear ({s['linear']['q025']:.3f}, {s['linear']['q975']:.3f}) misses; "
        f"pairwise overlap: {overlap}",
    )


def test_conjugate_moments_and_replay(tmp_path):
    """Sampled moments match the conjugate closed form, and a manifest replay
    reproduces a fit byte for byte."""
    prior_mean, prior_sd = 1.0, 2.0
    sigma = 1.5
    gen = np.random.default_rng(12)
    obs = gen.normal(3.0, sigma, 12)
    prec = 1 / prior_sd**2 + len(obs) / sigma**2
    post_mean = (prior_mean / prior_sd**2 + obs.sum() / sigma**2) / prec
    post_var = 1 / prec

    target = LogPosteriorTarget(
        dim=1,
        names=["theta"],
        log_post=lambda v: (
            -0.5 * ((v[0] - prior_mean) / prior_sd) ** 2
            - 0.5 * float(np.sum((obs - v[0]) ** 2)) / sigma**2
        ),
        transforms=["identity"],
        default_init=np.array([0.0]),
    )
    draws = run_chains(target, ChainConfig(n_chains=4, iterations=3000, burnin=1500, seed=3))
    ess = effective_sample_size(draws, "theta")
    col = draws.column("theta")
    mean_err = abs(col.mean() - post_mean)
    mean_tol = 4 * np.sqrt(post_var / ess)
    var_err = abs(col.var(ddof=1) - post_var)
    var_tol = 4 * post_var * np.sqrt(2 / ess)
    ok_conj = mean_err <= mean_tol and var_err <= var_tol

    def run(argv):
        return subprocess.run(
            [sys.executable, "-m", "causalpost", *argv],
            cwd=tmp_path,
            capture_output=True,
            text=True,
        )

    r1 = run(["simulate", "--scenario", "bnp", "--n", "120", "--seed", "9", "--out", "d.csv"])
    r2 = run(
        [
            "fit", "--model", "linear", "--data", "d.csv", "--iter", "600",
            "--burnin", "300", "--chains", "2", "--seed", "4", "--out", "draws.csv",
        ]
    )
    before = (tmp_path / "draws.csv").read_bytes()
    r3 = run(["replay", "--manifest", "draws.manifest.json"])
    after = (tmp_path / "draws.csv").read_bytes()
    ok_replay = (
        r1.returncode == 0
        and r2.returncode == 0
        and r3.returncode == 0
        and before == after
    )
    _verdict(
        "conjugate + replay",
        ok_conj and ok_replay,
        f"mean err {mean_err:.4f} <= {mean_tol:.4f}, var err {var_err:.4f} <= {var_tol:.4f}; "
        f"replay exit {r3.returncode}, bytes identical: {before == after}",
    )
