"""Parametric outcome models for one-time-point treatments.

Three builders, all sampled with the shared engine:

- ``fit_linear``: Gaussian outcome, treatment enters additively, so the
  treatment coefficient is itself the marginal difference contrast.
- ``fit_dose_ar1``: dummy-coded ordinal dose with a second-difference
  random-walk prior that shares strength across adjacent dose levels.
- ``fit_partial_pool``: Bernoulli outcome with stratum-specific treatment
  effects partially pooled toward a learned center.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import ObservedDataset
from .engine import ChainConfig, DrawsMatrix, LogPosteriorTarget, run_chains
from .errors import (
    DomainError,
    InvalidParameterError,
    MissingStratumError,
    PositivityWarning,
    SchemaError,
    SingularModelError,
)

__all__ = [
    "LinearModelSpec",
    "DoseModelSpec",
    "PartialPoolSpec",
    "fit_linear",
    "fit_dose_ar1",
    "fit_partial_pool",
    "partial_pool_predictions",
    "dose_curve_names",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _normal_logpdf_sum(x, mean, sd) -> float:
    z = (x - mean) / sd
    return float(-0.5 * np.sum(z * z) - np.sum(np.log(sd)) - 0.5 * _LOG_2PI * np.size(x))


def _inv_gamma_logpdf(x, shape, scale) -> float:
    # unnormalized is enough for sampling, but keep the constant for clarity
    return (
        shape * math.log(scale)
        - math.lgamma(shape)
        - (shape + 1.0) * math.log(x)
        - scale / x
    )


def _check_full_rank(design: np.ndarray, names) -> None:
    if design.shape[0] < design.shape[1]:
        raise SingularModelError(
            f"{design.shape[0]} rows cannot identify {design.shape[1]} coefficients"
        )
    _, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    tol = design.shape[0] * np.finfo(float).eps * max(diag.max(), 1.0)
    bad = [names[j] for j in range(len(names)) if diag[j] <= tol]
    if bad:
        raise SingularModelError(f"design is rank deficient at columns: {', '.join(bad)}")


@dataclass(frozen=True)
class LinearModelSpec:
    """Priors for the additive Gaussian model.

    ``phi`` is the outcome variance with an inverse-gamma prior, making the
    full prior normal-inverse-gamma.
    """

    theta_mean: float = 0.0
    theta_sd: float = 10.0
    beta_mean: float = 0.0
    beta_sd: float = 10.0
    phi_shape: float = 1.0
    phi_scale: float = 1.0

    def __post_init__(self):
        for nm in ("theta_sd", "beta_sd", "phi_shape", "phi_scale"):
            if getattr(self, nm) <= 0:
                raise InvalidParameterError(f"{nm} must be > 0")


def fit_linear(
    data: ObservedDataset,
    spec: LinearModelSpec = LinearModelSpec(),
    cfg: ChainConfig = ChainConfig(),
    prior_only: bool = False,
) -> DrawsMatrix:
    """Sample the posterior of Y = theta*A + L'beta + Normal(0, phi).

    The returned ``theta`` column is the marginal difference contrast itself;
    no standardization step is needed for this model. An intercept is added
    to the confounders internally.
    """
    y, a = data.y, data.a
    n = data.n
    x = np.column_stack([np.ones(n), data.confounders])
    beta_names = ["beta_0"] + [f"beta_{nm}" for nm in data.confounder_names]
    names = ["theta"] + beta_names + ["phi"]
    if not prior_only:
        _check_full_rank(np.column_stack([a, x]), ["A"] + beta_names)

    p1 = x.shape[1]
    beta_mean = np.broadcast_to(np.asarray(spec.beta_mean, dtype=float), (p1,))
    beta_sd = np.broadcast_to(np.asarray(spec.beta_sd, dtype=float), (p1,))

    def log_post(v):
        theta, beta, phi = v[0], v[1 : 1 + p1], v[-1]
        lp = _normal_logpdf_sum(theta, spec.theta_mean, spec.theta_sd)
        lp += _normal_logpdf_sum(beta, beta_mean, beta_sd)
        lp += _inv_gamma_logpdf(phi, spec.phi_shape, spec.phi_scale)
        if not prior_only:
            resid = y - theta * a - x @ beta
            lp += -0.5 * n * (_LOG_2PI + math.log(phi)) - resid @ resid / (2.0 * phi)
        return lp

    if prior_only:
        init = np.concatenate(
            [[spec.theta_mean], beta_mean, [spec.phi_scale / (spec.phi_shape + 1.0)]]
        )
    else:
        coef, *_ = np.linalg.lstsq(np.column_stack([a, x]), y, rcond=None)
        resid = y - np.column_stack([a, x]) @ coef
        init = np.concatenate([coef, [max(float(resid.var()), 1e-8)]])

    target = LogPosteriorTarget(
        dim=p1 + 2,
        names=names,
        log_post=log_post,
        transforms=["identity"] * (p1 + 1) + ["log"],
        default_init=init,
    )
    return run_chains(target, cfg)


@dataclass(frozen=True)
class DoseModelSpec:
    """Priors for the ordinal-dose model with K nonzero levels.

    ``tau`` gives the prior sds (tau_1, ..., tau_K) of the random-walk
    increments: theta_1 ~ N(mu1, tau_1), theta_2 ~ N(2 theta_1, tau_2), and
    theta_k ~ N(2 theta_{k-1} - theta_{k-2}, tau_k) beyond that, so adjacent
    dose effects pool toward a locally linear trend.
    """

    n_levels: int
    mu1: float = 0.0
    tau: tuple = None
    beta_mean: float = 0.0
    beta_sd: float = 10.0
    phi_shape: float = 1.0
    phi_scale: float = 1.0

    def __post_init__(self):
        if self.n_levels < 1:
            raise InvalidParameterError("n_levels must be >= 1")
        tau = self.tau if self.tau is not None else (10.0,) + (1.0,) * (self.n_levels - 1)
        tau = tuple(float(t) for t in np.broadcast_to(np.asarray(tau, float), (self.n_levels,)))
        if any(t <= 0 for t in tau):
            raise InvalidParameterError("all tau entries must be > 0")
        object.__setattr__(self, "tau", tau)
        for nm in ("beta_sd", "phi_shape", "phi_scale"):
            if getattr(self, nm) <= 0:
                raise InvalidParameterError(f"{nm} must be > 0")


def dose_curve_names(k_levels: int):
    return [f"Psi_{k}" for k in range(1, k_levels + 1)]


def fit_dose_ar1(
    data: ObservedDataset,
    spec: DoseModelSpec,
    cfg: ChainConfig = ChainConfig(),
    prior_only: bool = False,
) -> DrawsMatrix:
    """Sample the dummy-coded dose model; dose 0 is the reference level.

    Draw columns include the incremental effect curve: Psi_1 = theta_1 and
    Psi_k = theta_k - theta_{k-1}, computed per draw from the theta columns.
    Unobserved nonzero dose levels produce a positivity warning (estimation
    proceeds, leaning on the smoothing prior).
    """
    k_levels = spec.n_levels
    a = data.a
    rounded = np.round(a)
    if np.any(np.abs(a - rounded) > 1e-9) or rounded.min() < 0 or rounded.max() > k_levels:
        raise DomainError(f"doses must be integers in 0..{k_levels}")
    levels = rounded.astype(int)

    warn_msgs = []
    missing = [k for k in range(1, k_levels + 1) if not np.any(levels == k)]
    if missing:
        msg = f"no observations at dose level(s) {missing}; curve extrapolates there"
        warnings.warn(msg, PositivityWarning)
        warn_msgs.append(msg)

    n = data.n
    dummies = np.zeros((n, k_levels))
    for k in range(1, k_levels + 1):
        dummies[:, k - 1] = levels == k
    x = np.column_stack([np.ones(n), data.confounders])
    beta_names = ["beta_0"] + [f"beta_{nm}" for nm in data.confounder_names]
    theta_names = [f"theta_{k}" for k in range(1, k_levels + 1)]
    names = theta_names + beta_names + ["phi"]
    y = data.y
    p1 = x.shape[1]
    beta_mean = np.broadcast_to(np.asarray(spec.beta_mean, dtype=float), (p1,))
    beta_sd = np.broadcast_to(np.asarray(spec.beta_sd, dtype=float), (p1,))
    tau = np.asarray(spec.tau)

    def log_post(v):
        theta = v[:k_levels]
        beta = v[k_levels : k_levels + p1]
        phi = v[-1]
        lp = _normal_logpdf_sum(theta[0], spec.mu1, tau[0])
        if k_levels >= 2:
            lp += _normal_logpdf_sum(theta[1], 2.0 * theta[0], tau[1])
        if k_levels >= 3:
            lp += _normal_logpdf_sum(
                theta[2:], 2.0 * theta[1:-1] - theta[:-2], tau[2:]
            )
        lp += _normal_logpdf_sum(beta, beta_mean, beta_sd)
        lp += _inv_gamma_logpdf(phi, spec.phi_shape, spec.phi_scale)
        if not prior_only:
            resid = y - dummies @ theta - x @ beta
            lp += -0.5 * n * (_LOG_2PI + math.log(phi)) - resid @ resid / (2.0 * phi)
        return lp

    if prior_only:
        init = np.concatenate(
            [
                np.full(k_levels, spec.mu1),
                beta_mean,
                [spec.phi_scale / (spec.phi_shape + 1.0)],
            ]
        )
    else:
        design = np.column_stack([dummies, x])
        # levels without data leave zero columns; fall back to least-norm fit
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ coef
        init = np.concatenate([coef, [max(float(resid.var()), 1e-8)]])

    target = LogPosteriorTarget(
        dim=k_levels + p1 + 1,
        names=names,
        log_post=log_post,
        transforms=["identity"] * (k_levels + p1) + ["log"],
        default_init=init,
    )
    draws = run_chains(target, cfg)
    draws.warnings.extend(warn_msgs)

    theta = draws.values[:, :k_levels]
    psi = np.empty_like(theta)
    psi[:, 0] = theta[:, 0]
    psi[:, 1:] = theta[:, 1:] - theta[:, :-1]
    return draws.with_columns(dose_curve_names(k_levels), psi)


@dataclass(frozen=True)
class PartialPoolSpec:
    """Priors for stratum-specific treatment effects on a Bernoulli outcome.

    The reference-stratum effect theta_0 gets prior N(mu, tau); every offset
    theta_j gets N(mu - theta_0, tau), so each stratum's total effect
    theta_0 + theta_j is pulled toward the shared center mu with strength
    set by tau. ``n_offsets`` (q) may be None to infer from the data.
    """

    n_offsets: int = None
    tau: float = 0.5
    mu_mean: float = 0.0
    mu_sd: float = 1.0
    beta_w_mean: float = 0.0
    beta_w_sd: float = 1.0
    beta_v_mean: float = 0.0
    beta_v_sd: float = 1.0

    def __post_init__(self):
        for nm in ("tau", "mu_sd", "beta_w_sd", "beta_v_sd"):
            if getattr(self, nm) <= 0:
                raise InvalidParameterError(f"{nm} must be > 0")
        if self.n_offsets is not None and self.n_offsets < 1:
            raise InvalidParameterError("n_offsets must be >= 1 when given")


def _stratum_design(data: ObservedDataset, q: int):
    if data.strata is None:
        raise SchemaError("partial pooling needs a stratum column 'V'")
    v = np.asarray(data.strata, dtype=float)
    rounded = np.round(v)
    if np.any(np.abs(v - rounded) > 1e-9):
        raise DomainError("stratum labels must be integers")
    labels = rounded.astype(int)
    if q is None:
        q = int(labels.max()) - 1
        if q < 1:
            raise DomainError("need at least two strata for partial pooling")
    if labels.min() < 1 or labels.max() > q + 1:
        raise DomainError(f"stratum labels must lie in 1..{q + 1}")
    for s in range(1, q + 2):
        if not np.any(labels == s):
            raise MissingStratumError(f"stratum {s} has no observations")
    n = len(labels)
    vmat = np.zeros((n, q + 1))
    vmat[:, 0] = 1.0
    for j in range(2, q + 2):
        vmat[:, j - 1] = labels == j
    return labels, vmat, q


def fit_partial_pool(
    data: ObservedDataset,
    spec: PartialPoolSpec = PartialPoolSpec(),
    cfg: ChainConfig = ChainConfig(),
    prior_only: bool = False,
) -> DrawsMatrix:
    """Sample the partially pooled logistic model for a binary outcome.

    Linear predictor: W'beta_w + V'beta_v + (theta_0 + theta'V) A, where V is
    reference-coded with the intercept folded into beta_v. Per-stratum effect
    draws are exposed as columns effect_v1 .. effect_v{q+1}.
    """
    y = data.y
    if np.any((y != 0.0) & (y != 1.0)):
        raise DomainError("partial pooling requires a binary outcome in {0, 1}")
    labels, vmat, q = _stratum_design(data, spec.n_offsets)
    a = data.a
    one_armed = [
        s
        for s in range(1, q + 2)
        if np.all(a[labels == s] == 1.0) or np.all(a[labels == s] == 0.0)
    ]
    if one_armed and not prior_only:
        warnings.warn(
            f"stratum/strata {one_armed} observed under a single treatment arm; "
            "stratum effects there rest on the pooling prior",
            PositivityWarning,
        )
    w = data.confounders
    n, n_w = w.shape

    offsets = vmat[:, 1:]  # indicator block for strata 2..q+1
    w_names = [f"beta_w_{nm}" for nm in data.confounder_names]
    v_names = [f"beta_v_{j}" for j in range(1, q + 2)]
    t_names = [f"theta_{j}" for j in range(q + 1)]
    names = w_names + v_names + t_names + ["mu"]
    dim = n_w + (q + 1) + (q + 1) + 1

    if not prior_only:
        _check_full_rank(np.column_stack([w, vmat]), w_names + v_names)

    def log_post(v):
        bw = v[:n_w]
        bv = v[n_w : n_w + q + 1]
        theta = v[n_w + q + 1 : n_w + 2 * (q + 1)]
        mu = v[-1]
        lp = _normal_logpdf_sum(bw, spec.beta_w_mean, spec.beta_w_sd) if n_w else 0.0
        lp += _normal_logpdf_sum(bv, spec.beta_v_mean, spec.beta_v_sd)
        lp += _normal_logpdf_sum(mu, spec.mu_mean, spec.mu_sd)
        lp += _normal_logpdf_sum(theta[0], mu, spec.tau)
        lp += _normal_logpdf_sum(theta[1:], mu - theta[0], spec.tau)
        if not prior_only:
            eff = theta[0] + offsets @ theta[1:]
            lin = (w @ bw if n_w else 0.0) + vmat @ bv + a * eff
            lp += float(np.sum(y * lin - np.logaddexp(0.0, lin)))
        return lp

    init = np.zeros(dim)
    target = LogPosteriorTarget(
        dim=dim, names=names, log_post=log_post, default_init=init
    )
    draws = run_chains(target, cfg)

    theta0 = draws.column("theta_0")
    effects = np.empty((draws.n_draws, q + 1))
    effects[:, 0] = theta0
    for j in range(1, q + 1):
        effects[:, j] = theta0 + draws.column(f"theta_{j}")
    effect_names = [f"effect_v{v}" for v in range(1, q + 2)]
    return draws.with_columns(effect_names, effects)


def partial_pool_predictions(draws: DrawsMatrix, data: ObservedDataset):
    """Per-draw success probabilities under A=1 and A=0 for every subject.

    Returns ``(mu1, mu0)``, each (M, n), for stratified standardization.
    """
    labels, vmat, q = _stratum_design(data, None)
    w = data.confounders
    n_w = w.shape[1]
    bw = np.column_stack([draws.column(nm) for nm in (f"beta_w_{c}" for c in data.confounder_names)]) if n_w else None
    bv = np.column_stack([draws.column(f"beta_v_{j}") for j in range(1, q + 2)])
    theta0 = draws.column("theta_0")
    toff = (
        np.column_stack([draws.column(f"theta_{j}") for j in range(1, q + 1)])
        if q >= 1
        else np.zeros((draws.n_draws, 0))
    )

    base = vmat @ bv.T
    if n_w:
        base = base + w @ bw.T
    eff = theta0[None, :] + vmat[:, 1:] @ toff.T
    from .prob import expit

    mu1 = expit(base + eff).T
    mu0 = expit(base).T
    return mu1, mu0
