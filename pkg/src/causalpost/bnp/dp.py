"""Dirichlet process mixture of Gaussian regressions.

Each mixture component carries a local linear regression of the outcome on
the covariates plus a local model for the covariates themselves (Gaussian,
Bernoulli, or Poisson per column, matching each column's support). States are
sampled by the auxiliary-component Gibbs scheme: when a subject is
reassigned, a handful of fresh components drawn from the base measure stand
in for the infinitely many unoccupied clusters. Prediction at a new covariate
row mixes the per-subject local regression lines with weights proportional
to how well each subject's cluster explains that row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..data import ObservedDataset
from ..engine import ChainConfig
from ..errors import InvalidParameterError, SchemaError
from ..prob import RngHandle, exact_simplex

__all__ = [
    "ColumnModel",
    "DPConfig",
    "ClusterParams",
    "DPState",
    "DPFit",
    "dp_fit",
    "dp_regression",
    "dp_weights",
    "dp_predict",
    "draw_base_params",
]

_LOG_2PI = math.log(2.0 * math.pi)
_COLUMN_KINDS = ("gaussian", "bernoulli", "poisson")


@dataclass(frozen=True)
class ColumnModel:
    """Base-measure parameters for one covariate column.

    gaussian: params = (mean_loc, mean_sd, var_shape, var_scale) — cluster
    mean ~ N(mean_loc, mean_sd^2), cluster variance ~ InvGamma(shape, scale).
    bernoulli: params = (a, b) — success probability ~ Beta(a, b).
    poisson: params = (shape, rate) — rate ~ Gamma(shape, rate).
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in _COLUMN_KINDS:
            raise SchemaError(f"untyped or unknown covariate column kind {self.kind!r}")
        want = {"gaussian": 4, "bernoulli": 2, "poisson": 2}[self.kind]
        if len(self.params) != want:
            raise InvalidParameterError(
                f"{self.kind} column takes {want} base parameters"
            )
        must_be_positive = self.params[1:] if self.kind == "gaussian" else self.params
        if any(p <= 0 for p in must_be_positive):
            raise InvalidParameterError("column base parameters must be positive")


@dataclass(frozen=True)
class DPConfig:
    """Mixture prior: concentration, regression base measure, column bases.

    The regression base is normal-inverse-gamma: variance ~ InvGamma(a, b)
    and coefficients | variance ~ N(beta_loc, variance * beta_cov). ``alpha``
    fixes the concentration; None puts the usual Gamma(1, 1) hyperprior on it
    and samples it by the auxiliary Beta step.
    """

    columns: tuple
    beta_loc: np.ndarray
    beta_cov: np.ndarray
    var_shape: float
    var_scale: float
    alpha: float = None
    aux_m: int = 3
    init_k: int = 10

    def __post_init__(self):
        object.__setattr__(self, "beta_loc", np.asarray(self.beta_loc, dtype=float))
        object.__setattr__(self, "beta_cov", np.asarray(self.beta_cov, dtype=float))
        p1 = self.beta_loc.shape[0]
        if self.beta_cov.shape != (p1, p1):
            raise InvalidParameterError("beta_cov must be square and match beta_loc")
        if self.var_shape <= 0 or self.var_scale <= 0:
            raise InvalidParameterError("variance base parameters must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise InvalidParameterError("fixed alpha must be > 0")
        if self.aux_m < 1:
            raise InvalidParameterError("aux_m must be >= 1")
        if self.init_k < 1:
            raise InvalidParameterError("init_k must be >= 1")
        for col in self.columns:
            if not isinstance(col, ColumnModel):
                raise SchemaError("every covariate column needs a ColumnModel")

    @classmethod
    def from_data(cls, data: ObservedDataset, kinds=None, **kw) -> "DPConfig":
        """Empirical-Bayes base measure from the observed sample.

        The regression design is (1, A, L...): beta_loc is the least-squares
        fit, beta_cov is n (X'X)^-1 so the prior coefficient covariance at
        the residual noise level is n times the sampling covariance, and the
        variance base is InvGamma(2, residual variance) whose mean is that
        residual variance. Column kinds default to bernoulli for {0,1}
        columns and gaussian otherwise; pass ``kinds`` to override (e.g.
        "poisson" for counts).
        """
        xmat = _design(data)
        n, p1 = xmat.shape
        y = data.y
        beta, *_ = np.linalg.lstsq(xmat, y, rcond=None)
        resid_var = max(float(np.var(y - xmat @ beta)), 1e-12)
        beta_cov = n * np.linalg.inv(xmat.T @ xmat)

        cov = xmat[:, 1:]
        if kinds is None:
            kinds = [
                "bernoulli" if np.all((c == 0.0) | (c == 1.0)) else "gaussian"
                for c in cov.T
            ]
        if len(kinds) != cov.shape[1]:
            raise SchemaError(
                f"{len(kinds)} column kinds for {cov.shape[1]} covariate columns"
            )
        cols = []
        for kind, c in zip(kinds, cov.T):
            if kind == "gaussian":
                sd = max(float(c.std()), 1e-6)
                cols.append(
                    ColumnModel("gaussian", (float(c.mean()), sd, 2.0, sd * sd))
                )
            elif kind == "bernoulli":
                cols.append(ColumnModel("bernoulli", (1.0, 1.0)))
            elif kind == "poisson":
                m = max(float(c.mean()), 1e-6)
                cols.append(ColumnModel("poisson", (1.0, 1.0 / m)))
            else:
                raise SchemaError(f"untyped or unknown covariate column kind {kind!r}")
        return cls(
            columns=tuple(cols),
            beta_loc=beta,
            beta_cov=beta_cov,
            var_shape=2.0,
            var_scale=resid_var,
            **kw,
        )


@dataclass
class ClusterParams:
    """One mixture component: local regression plus local covariate models."""

    beta: np.ndarray
    var: float
    cols: list


@dataclass
class DPState:
    """One retained posterior state of the mixture.

    ``assignments`` maps each subject to an index into ``clusters``; every
    listed cluster is non-empty. ``alpha`` is the concentration value at this
    iteration.
    """

    assignments: np.ndarray
    clusters: list
    alpha: float

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


@dataclass
class DPFit:
    """Retained states plus flat per-state diagnostics arrays."""

    states: list
    alpha: np.ndarray
    n_clusters: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]


def _design(data: ObservedDataset) -> np.ndarray:
    return np.column_stack([np.ones(data.n), data.a, data.confounders])


def _col_logpdf(kind, params, x):
    if kind == "gaussian":
        m, v = params
        return -0.5 * ((x - m) ** 2 / v + math.log(v) + _LOG_2PI)
    if kind == "bernoulli":
        p = params
        return math.log(p) if x >= 0.5 else math.log1p(-p)
    lam = params
    return -lam + x * math.log(lam) - math.lgamma(x + 1.0)


def _col_logpdf_vec(kind, params, x):
    x = np.asarray(x, dtype=float)
    if kind == "gaussian":
        m, v = params
        return -0.5 * ((x - m) ** 2 / v + math.log(v) + _LOG_2PI)
    if kind == "bernoulli":
        p = params
        return np.where(x >= 0.5, math.log(p), math.log1p(-p))
    lam = params
    from scipy.special import gammaln

    return -lam + x * math.log(lam) - gammaln(x + 1.0)


def draw_base_params(cfg: DPConfig, gen: np.random.Generator) -> ClusterParams:
    """One fresh component drawn from the base measure."""
    var = cfg.var_scale / gen.standard_gamma(cfg.var_shape)
    chol = np.linalg.cholesky(cfg.beta_cov)
    beta = cfg.beta_loc + math.sqrt(var) * (chol @ gen.standard_normal(len(cfg.beta_loc)))
    cols = []
    for col in cfg.columns:
        if col.kind == "gaussian":
            loc, sd, a, b = col.params
            v = b / gen.standard_gamma(a)
            m = gen.normal(loc, sd)
            cols.append(("gaussian", (m, v)))
        elif col.kind == "bernoulli":
            a, b = col.params
            cols.append(("bernoulli", float(gen.beta(a, b))))
        else:
            a, r = col.params
            cols.append(("poisson", float(gen.standard_gamma(a) / r)))
    return ClusterParams(beta=beta, var=var, cols=cols)


def _joint_loglik(cp: ClusterParams, xrow, covrow, y) -> float:
    mu = float(xrow @ cp.beta)
    lp = -0.5 * ((y - mu) ** 2 / cp.var + math.log(cp.var) + _LOG_2PI)
    for (kind, params), x in zip(cp.cols, covrow):
        lp += _col_logpdf(kind, params, x)
    return lp


def _resample_cluster(cfg, prior_prec, prior_prec_loc, xmat, cov, y, members, gen, old) -> ClusterParams:
    """Conditional draw of one cluster's parameters given its members.

    The regression block is conjugate and drawn jointly. Gaussian covariate
    columns have independent mean and variance priors, so they take one
    alternating scan (mean given the previous variance, then variance given
    the new mean) starting from ``old``, the cluster's current parameters.
    """
    xc = xmat[members]
    yc = y[members]
    nc = len(members)
    prec = prior_prec + xc.T @ xc
    cov_n = np.linalg.inv(prec)
    mean_n = cov_n @ (prior_prec_loc + xc.T @ yc)
    a_n = cfg.var_shape + 0.5 * nc
    b_n = cfg.var_scale + 0.5 * float(
        yc @ yc + cfg.beta_loc @ prior_prec_loc - mean_n @ prec @ mean_n
    )
    var = max(b_n, 1e-300) / gen.standard_gamma(a_n)
    chol = np.linalg.cholesky(0.5 * (cov_n + cov_n.T))
    beta = mean_n + math.sqrt(var) * (chol @ gen.standard_normal(len(mean_n)))

    cols = []
    for j, col in enumerate(cfg.columns):
        xj = cov[members, j]
        if col.kind == "gaussian":
            loc, sd, a, b = col.params
            v_old = old.cols[j][1][1]
            prec_m = 1.0 / (sd * sd) + nc / v_old
            m = gen.normal(
                (loc / (sd * sd) + xj.sum() / v_old) / prec_m, math.sqrt(1.0 / prec_m)
            )
            bn = b + 0.5 * float(np.sum((xj - m) ** 2))
            v = bn / gen.standard_gamma(a + 0.5 * nc)
            cols.append(("gaussian", (float(m), float(v))))
        elif col.kind == "bernoulli":
            a, b = col.params
            k = float(xj.sum())
            cols.append(("bernoulli", float(gen.beta(a + k, b + nc - k))))
        else:
            a, r = col.params
            cols.append(
                ("poisson", float(gen.standard_gamma(a + float(xj.sum())) / (r + nc)))
            )
    return ClusterParams(beta=beta, var=float(var), cols=cols)


def _update_alpha(alpha, k, n, gen) -> float:
    # auxiliary-variable update under the Gamma(1, 1) hyperprior
    a0, b0 = 1.0, 1.0
    eta = gen.beta(alpha + 1.0, n)
    rate = b0 - math.log(eta)
    odds = (a0 + k - 1.0) / (n * rate)
    shape = a0 + k if gen.random() < odds / (1.0 + odds) else a0 + k - 1.0
    return float(gen.standard_gamma(shape) / rate)


def dp_fit(data: ObservedDataset, cfg: DPConfig, chain: ChainConfig) -> DPFit:
    """Gibbs-sample the mixture; returns retained states with alpha draws."""
    xmat = _design(data)
    cov = xmat[:, 1:]
    y = data.y
    n = data.n
    if len(cfg.columns) != cov.shape[1]:
        raise SchemaError(
            f"{len(cfg.columns)} column models for {cov.shape[1]} covariate columns"
        )

    prior_prec = np.linalg.inv(cfg.beta_cov)
    prior_prec_loc = prior_prec @ cfg.beta_loc

    states, alphas, kcounts, chains, iters = [], [], [], [], []
    for c in range(chain.n_chains):
        gen = RngHandle(chain.seed, c).generator()
        assign = np.array([i % cfg.init_k for i in range(n)])
        clusters = []
        for k in range(cfg.init_k):
            members = np.nonzero(assign == k)[0]
            if members.size:
                seed_params = draw_base_params(cfg, gen)
                clusters.append(
                    _resample_cluster(
                        cfg, prior_prec, prior_prec_loc, xmat, cov, y, members, gen, seed_params
                    )
                )
        # re-label in case init_k exceeded n
        assign = np.array([i % len(clusters) for i in range(n)])
        alpha = cfg.alpha if cfg.alpha is not None else 1.0

        for t in range(chain.iterations):
            counts = np.bincount(assign, minlength=len(clusters)).astype(float)
            for i in range(n):
                ci = assign[i]
                counts[ci] -= 1.0
                singleton = counts[ci] == 0.0
                aux = [draw_base_params(cfg, gen) for _ in range(cfg.aux_m)]
                if singleton:
                    aux[0] = clusters[ci]

                logw = np.empty(len(clusters) + cfg.aux_m)
                for c_id, cp in enumerate(clusters):
                    if counts[c_id] == 0.0:
                        logw[c_id] = -np.inf
                    else:
                        logw[c_id] = math.log(counts[c_id]) + _joint_loglik(
                            cp, xmat[i], cov[i], y[i]
                        )
                base = (
                    -np.inf
                    if alpha == 0.0 and not singleton
                    else math.log(max(alpha, 1e-300) / cfg.aux_m)
                )
                for a_id, cp in enumerate(aux):
                    logw[len(clusters) + a_id] = base + _joint_loglik(
                        cp, xmat[i], cov[i], y[i]
                    )
                logw -= logw.max()
                w = np.exp(logw)
                w /= w.sum()
                pick = int(gen.choice(len(w), p=w))

                if pick < len(clusters):
                    assign[i] = pick
                    counts[pick] += 1.0
                else:
                    clusters.append(aux[pick - len(clusters)])
                    counts = np.append(counts, 1.0)
                    assign[i] = len(clusters) - 1

            # drop empty clusters and compact ids
            keep = np.nonzero(counts > 0)[0]
            remap = -np.ones(len(clusters), dtype=int)
            remap[keep] = np.arange(len(keep))
            clusters = [clusters[k] for k in keep]
            assign = remap[assign]

            for c_id in range(len(clusters)):
                members = np.nonzero(assign == c_id)[0]
                clusters[c_id] = _resample_cluster(
                    cfg, prior_prec, prior_prec_loc, xmat, cov, y, members, gen,
                    clusters[c_id],
                )

            if cfg.alpha is None:
                alpha = _update_alpha(alpha, len(clusters), n, gen)

            if t >= chain.burnin and (t - chain.burnin) % chain.thin == 0:
                states.append(
                    DPState(
                        assignments=assign.copy(),
                        clusters=[
                            ClusterParams(cp.beta.copy(), cp.var, list(cp.cols))
                            for cp in clusters
                        ],
                        alpha=float(alpha),
                    )
                )
                alphas.append(float(alpha))
                kcounts.append(len(clusters))
                chains.append(c)
                iters.append(t)

    return DPFit(
        states=states,
        alpha=np.array(alphas),
        n_clusters=np.array(kcounts, dtype=float),
        chain=np.array(chains, dtype=int),
        iteration=np.array(iters, dtype=int),
    )


def _subject_terms(state: DPState, prior_draw: ClusterParams, cfg: DPConfig, x):
    """Per-subject log weights and regression values at one covariate row.

    Entry i < n belongs to subject i's cluster; the last entry is the
    base-measure term weighted by alpha.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (len(cfg.columns),):
        raise SchemaError(
            f"prediction row has {x.shape} covariates, model has {len(cfg.columns)}"
        )
    xrow = np.concatenate([[1.0], x])
    n = state.assignments.shape[0]
    logw = np.empty(n + 1)
    mus = np.empty(n + 1)
    for i in range(n):
        cp = state.clusters[state.assignments[i]]
        lw = 0.0
        for (kind, params), xj in zip(cp.cols, x):
            lw += _col_logpdf(kind, params, xj)
        logw[i] = lw
        mus[i] = float(xrow @ cp.beta)
    if state.alpha == 0.0:
        logw[n] = -np.inf
        mus[n] = 0.0
    else:
        lw = math.log(state.alpha)
        for (kind, params), xj in zip(prior_draw.cols, x):
            lw += _col_logpdf(kind, params, xj)
        logw[n] = lw
        mus[n] = float(xrow @ prior_draw.beta)
    return logw, mus


def dp_weights(state: DPState, prior_draw: ClusterParams, cfg: DPConfig, x) -> np.ndarray:
    """Mixture weights over the n training subjects plus the base measure.

    Entry i < n is proportional to subject i's cluster covariate density at
    ``x``; the last entry is proportional to alpha times the prior draw's
    density. Normalization happens in log space and the result is snapped
    onto the exactly-summing simplex, so the weights sum to exactly one.
    """
    logw, _ = _subject_terms(state, prior_draw, cfg, x)
    n = logw.shape[0] - 1
    top = logw.max()
    if not np.isfinite(top):
        # total underflow: fall back to the prior assignment weights
        w = np.full(n + 1, 1.0)
        w[n] = state.alpha
    else:
        w = np.exp(logw - top)
    return exact_simplex(w)


def dp_regression(state: DPState, prior_draw: ClusterParams, cfg: DPConfig, x) -> float:
    """Posterior-mixture regression value at one covariate row.

    Mixes every training subject's cluster regression line, weighted by that
    cluster's covariate density at ``x``, plus one base-measure term weighted
    by alpha times the prior draw's covariate density. Weights are normalized
    in log space, so extreme underflow degrades gracefully instead of
    producing NaN.
    """
    _, mus = _subject_terms(state, prior_draw, cfg, x)
    w = dp_weights(state, prior_draw, cfg, x)
    return float(w @ mus)


def _state_predictions(state, prior_draw, xnew) -> np.ndarray:
    """Vectorized mixture regression at many covariate rows for one state.

    Groups the per-subject sum by cluster (each cluster contributes its size
    times its covariate density), which equals the per-subject formula.
    """
    xnew = np.atleast_2d(np.asarray(xnew, dtype=float))
    m_rows = xnew.shape[0]
    xd = np.column_stack([np.ones(m_rows), xnew])
    counts = np.bincount(state.assignments, minlength=len(state.clusters)).astype(float)

    terms = list(zip(counts, state.clusters))
    if state.alpha > 0.0:
        terms.append((state.alpha, prior_draw))
    logw = np.empty((len(terms), m_rows))
    mus = np.empty((len(terms), m_rows))
    for t_id, (weight, cp) in enumerate(terms):
        lw = np.full(m_rows, math.log(weight))
        for j, (kind, params) in enumerate(cp.cols):
            lw += _col_logpdf_vec(kind, params, xnew[:, j])
        logw[t_id] = lw
        mus[t_id] = xd @ cp.beta
    top = logw.max(axis=0)
    safe = np.isfinite(top)
    w = np.exp(logw - np.where(safe, top, 0.0))
    if not safe.all():
        # total underflow: fall back to the prior assignment weights
        w0 = np.array([weight for weight, _ in terms])
        w[:, ~safe] = w0[:, None]
    w = _exact_simplex_cols(w)
    return np.einsum("tm,tm->m", w, mus)


def _exact_simplex_cols(w: np.ndarray) -> np.ndarray:
    """Column-wise :func:`~causalpost.prob.exact_simplex` for a (T, m) array.

    Each column must have a positive sum; each output column sums to exactly
    one under any summation order.
    """
    t_terms = w.shape[0]
    w = w / w.sum(axis=0, keepdims=True)
    quantum = 2.0**53
    scaled = w * quantum
    k = np.floor(scaled).astype(np.int64)
    frac = scaled - k
    deficit = np.int64(round(quantum)) - k.sum(axis=0)

    pos = np.clip(deficit, 0, None)
    per, extra = np.divmod(pos, t_terms)
    k += per[None, :]
    order = np.argsort(-frac, axis=0, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(t_terms)[:, None], axis=0)
    k += ranks < extra[None, :]

    # overshoot is at most a few units; take them from the largest entries
    take = np.clip(-deficit, 0, None)
    order = np.argsort(-k, axis=0, kind="stable")
    np.put_along_axis(ranks, order, np.arange(t_terms)[:, None], axis=0)
    k -= ranks < take[None, :]
    return k.astype(float) / quantum


def dp_predict(fit: DPFit, cfg: DPConfig, xnew, rng: RngHandle) -> np.ndarray:
    """Mixture regression values at new covariate rows, one row per state.

    Returns an (n_states, n_rows) matrix. Each state gets one fresh
    base-measure draw for its unoccupied-mass term, drawn from a stream
    derived per state so results are reproducible and independent of the
    number of prediction rows.
    """
    xnew = np.atleast_2d(np.asarray(xnew, dtype=float))
    if xnew.shape[1] != len(cfg.columns):
        raise SchemaError(
            f"{xnew.shape[1]} covariate columns in prediction rows, "
            f"model has {len(cfg.columns)}"
        )
    out = np.empty((len(fit.states), xnew.shape[0]))
    for s_id, state in enumerate(fit.states):
        gen = rng.derive(s_id).generator()
        prior_draw = draw_base_params(cfg, gen)
        out[s_id] = _state_predictions(state, prior_draw, xnew)
    return out
