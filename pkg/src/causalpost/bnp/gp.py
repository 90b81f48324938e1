"""Gaussian-process regression with an exponential-quadratic covariance.

The regression function gets a zero-mean GP prior with covariance
eta * exp(-rho * ||x_i - x_j||^2) plus a fixed 0.01 diagonal, and the outcome
adds independent Gaussian noise. Hyperparameters are either fixed or sampled
by random-walk Metropolis on log scales: amplitude alpha ~ half-N(0, 1) with
eta = alpha^2, length-scale eps ~ InvGamma(5, 5) with rho = 1/(2 eps^2), and
noise sd ~ half-N(0, 1). Conditional on hyperparameters, function draws at
test rows come from the exact Gaussian conditional given the training data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

from ..data import ObservedDataset
from ..engine import ChainConfig, LogPosteriorTarget, run_chains
from ..errors import CholeskyError, InvalidParameterError, ShapeError
from ..prob import RngHandle

__all__ = ["GPConfig", "GPFit", "gp_kernel", "gp_fit_predict"]

_JITTER = 0.01
_MAX_TRAIN = 2000
# stream id for function draws, clear of the chain ids the engine uses
_FUNC_STREAM = 10_007


@dataclass(frozen=True)
class GPConfig:
    """Kernel and noise settings; None means "sample under its prior".

    eta is the kernel scale, rho the decay rate, noise the outcome sd. The
    0.01 diagonal jitter is part of the covariance definition and is not
    tunable.
    """

    eta: float = None
    rho: float = None
    noise: float = None
    jitter: float = _JITTER

    def __post_init__(self):
        for name in ("eta", "rho", "noise"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise InvalidParameterError(f"fixed {name} must be > 0")
        if self.jitter != _JITTER:
            raise InvalidParameterError(f"jitter is fixed at {_JITTER}")


@dataclass
class GPFit:
    """Per-draw function values at the test rows plus hyperparameter draws.

    ``mu`` holds the sampled function values; ``mean`` holds each draw's
    conditional mean at the test rows before the function noise is added,
    which is the right object for checking conditioning behavior such as the
    interpolation limit.
    """

    mu: np.ndarray
    mean: np.ndarray
    eta: np.ndarray
    rho: np.ndarray
    noise: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.mu.shape[0]


def gp_kernel(xi, xj, eta: float, rho: float, same_index: bool = None) -> float:
    """Covariance between the regression values at two covariate rows.

    eta * exp(-rho * ||xi - xj||^2), plus the 0.01 jitter when the rows are
    the same row of one matrix. ``same_index=None`` infers that from exact
    equality of the rows; matrix assembly passes it explicitly so duplicated
    covariate rows at different indices do not pick up the jitter.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    xj = np.atleast_1d(np.asarray(xj, dtype=float))
    if xi.shape != xj.shape:
        raise ShapeError(f"covariate rows differ in length: {xi.shape} vs {xj.shape}")
    if eta <= 0:
        raise InvalidParameterError("eta must be > 0")
    if rho < 0:
        raise InvalidParameterError("rho must be >= 0")
    if same_index is None:
        same_index = bool(np.array_equal(xi, xj))
    d2 = float(np.sum((xi - xj) ** 2))
    return eta * math.exp(-rho * d2) + (_JITTER if same_index else 0.0)


def _sqdist(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    n1 = np.sum(x1 * x1, axis=1)
    n2 = np.sum(x2 * x2, axis=1)
    d2 = n1[:, None] + n2[None, :] - 2.0 * (x1 @ x2.T)
    return np.maximum(d2, 0.0)


def _chol_or_raise(c: np.ndarray, label: str) -> np.ndarray:
    try:
        return cholesky(c, lower=True)
    except np.linalg.LinAlgError:
        pass
    eig = np.linalg.eigvalsh(c)
    raise CholeskyError(
        f"{label} covariance is not positive definite after the {_JITTER} jitter: "
        f"eigenvalue range [{eig[0]:.3e}, {eig[-1]:.3e}], "
        f"condition {abs(eig[-1]) / max(abs(eig[0]), 1e-300):.3e}"
    )


def _design(data: ObservedDataset) -> np.ndarray:
    return np.column_stack([data.a, data.confounders])


def gp_fit_predict(
    data: ObservedDataset, test, cfg: GPConfig, chain: ChainConfig
) -> GPFit:
    """Posterior function draws at ``test`` covariate rows.

    Covariates are (A, confounders...) and ``test`` rows must match that
    width. Free hyperparameters are sampled jointly as one random-walk block
    (each target evaluation costs a Cholesky factorization, so scalar-at-a-
    time updates would triple the price for no mixing gain); fixed ones are
    pinned. Per retained draw, one exact conditional draw of the function is
    taken at the test rows from a stream keyed by the draw index.
    """
    xtrain = _design(data)
    n = xtrain.shape[0]
    if n > _MAX_TRAIN:
        raise InvalidParameterError(
            f"{n} training rows exceed the {_MAX_TRAIN} dense-solve limit"
        )
    xtest = np.atleast_2d(np.asarray(test, dtype=float))
    if xtest.shape[1] != xtrain.shape[1]:
        raise ShapeError(
            f"test rows have {xtest.shape[1]} columns, training data has "
            f"{xtrain.shape[1]} (treatment first, then confounders)"
        )
    y = data.y
    d_ss = _sqdist(xtrain, xtrain)
    d_st = _sqdist(xtrain, xtest)
    d_tt = _sqdist(xtest, xtest)

    free = [name for name in ("eta", "rho", "noise") if getattr(cfg, name) is None]

    def unpack(v):
        """Free-parameter vector (alpha, eps, noise sd order) -> (eta, rho, noise)."""
        out = {}
        k = 0
        for name in ("eta", "rho", "noise"):
            fixed = getattr(cfg, name)
            if fixed is not None:
                out[name] = fixed
            else:
                raw = v[k]
                k += 1
                if name == "eta":
                    out[name] = raw * raw
                elif name == "rho":
                    out[name] = 1.0 / (2.0 * raw * raw)
                else:
                    out[name] = raw
        return out["eta"], out["rho"], out["noise"]

    if free:
        cn2 = 0.5 * n * math.log(2.0 * math.pi)

        def log_post(v):
            if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
                return -np.inf
            eta, rho, noise = unpack(v)
            c = eta * np.exp(-rho * d_ss)
            c[np.diag_indices_from(c)] += _JITTER + noise * noise
            try:
                factor = np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                return -np.inf
            alpha_vec = cho_solve((factor, True), y)
            lp = (
                -0.5 * float(y @ alpha_vec)
                - float(np.sum(np.log(np.diag(factor))))
                - cn2
            )
            k = 0
            for name in ("eta", "rho", "noise"):
                if getattr(cfg, name) is not None:
                    continue
                raw = v[k]
                k += 1
                if name == "rho":
                    lp += -6.0 * math.log(raw) - 5.0 / raw
                else:
                    lp += -0.5 * raw * raw
            return lp

        names = {"eta": "gp_alpha", "rho": "gp_eps", "noise": "gp_noise"}
        init = {"eta": max(float(y.std()), 0.1), "rho": 1.0, "noise": max(0.5 * float(y.std()), 0.05)}
        target = LogPosteriorTarget(
            dim=len(free),
            names=[names[f] for f in free],
            log_post=log_post,
            blocks=[list(range(len(free)))],
            transforms=["log"] * len(free),
            default_init=np.array([init[f] for f in free]),
        )
        hyper = run_chains(target, chain)
        raws = hyper.values
        chain_ids = hyper.chain
        iters = hyper.iteration
    else:
        per = -(-(chain.iterations - chain.burnin) // chain.thin)
        m = chain.n_chains * per
        raws = np.zeros((m, 0))
        chain_ids = np.repeat(np.arange(chain.n_chains), per)
        iters = np.tile(chain.burnin + chain.thin * np.arange(per), chain.n_chains)

    m = raws.shape[0]
    mu = np.empty((m, xtest.shape[0]))
    means = np.empty((m, xtest.shape[0]))
    etas = np.empty(m)
    rhos = np.empty(m)
    noises = np.empty(m)
    handle = RngHandle(chain.seed, _FUNC_STREAM)
    cache_key = None
    cache = None
    for i in range(m):
        eta, rho, noise = unpack(raws[i])
        etas[i], rhos[i], noises[i] = eta, rho, noise
        key = (eta, rho, noise)
        if key != cache_key:
            c_ss = eta * np.exp(-rho * d_ss)
            c_ss[np.diag_indices_from(c_ss)] += _JITTER + noise * noise
            factor = (_chol_or_raise(c_ss, "training"), True)
            k_st = eta * np.exp(-rho * d_st)
            alpha_vec = cho_solve(factor, y)
            mean_t = k_st.T @ alpha_vec
            v = cho_solve(factor, k_st)
            cov_t = eta * np.exp(-rho * d_tt) - k_st.T @ v
            cov_t[np.diag_indices_from(cov_t)] += _JITTER
            cov_t = 0.5 * (cov_t + cov_t.T)
            chol_t = _chol_or_raise(cov_t, "test-row conditional")
            cache_key = key
            cache = (mean_t, chol_t)
        mean_t, chol_t = cache
        z = handle.derive(i).generator().standard_normal(xtest.shape[0])
        means[i] = mean_t
        mu[i] = mean_t + chol_t @ z
    return GPFit(
        mu=mu,
        mean=means,
        eta=etas,
        rho=rhos,
        noise=noises,
        chain=chain_ids,
        iteration=iters,
    )
