"""Adaptive random-walk Metropolis within Gibbs, plus chain diagnostics.

The sampler works on an unconstrained scale: each coordinate declares a
support transform (identity, log, or logit) and the engine folds the Jacobian
into the target so that callers write their log posterior on the natural
scale. Block step sizes adapt by Robbins-Monro during burn-in only and are
frozen afterwards, so the retained chain is a valid Markov chain.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InitializationError,
    InvalidParameterError,
    ShapeError,
    StuckChainWarning,
)
from .prob import RngHandle

__all__ = [
    "LogPosteriorTarget",
    "ChainConfig",
    "DrawsMatrix",
    "run_chains",
    "split_rhat",
    "effective_sample_size",
]

TRANSFORMS = ("identity", "log", "logit")

# acceptance-rate targets for scalar and multivariate blocks
_TARGET_SCALAR = 0.44
_TARGET_BLOCK = 0.234
_STUCK_WINDOW = 500


def _softplus(t: float) -> float:
    return math.log1p(math.exp(-abs(t))) + max(t, 0.0)


def _to_unconstrained(x: np.ndarray, transforms) -> np.ndarray:
    z = np.empty_like(x)
    for i, tr in enumerate(transforms):
        if tr == "identity":
            z[i] = x[i]
        elif tr == "log":
            if x[i] <= 0.0:
                raise InvalidParameterError(
                    f"coordinate {i} needs a positive value for the log transform, got {x[i]}"
                )
            z[i] = math.log(x[i])
        else:  # logit
            if not 0.0 < x[i] < 1.0:
                raise InvalidParameterError(
                    f"coordinate {i} needs a value in (0, 1) for the logit transform, got {x[i]}"
                )
            z[i] = math.log(x[i] / (1.0 - x[i]))
    return z


def _to_natural(z: np.ndarray, transforms) -> np.ndarray:
    x = np.empty_like(z)
    for i, tr in enumerate(transforms):
        if tr == "identity":
            x[i] = z[i]
        elif tr == "log":
            x[i] = math.exp(z[i])
        else:
            x[i] = 1.0 / (1.0 + math.exp(-z[i])) if z[i] >= 0 else math.exp(z[i]) / (1.0 + math.exp(z[i]))
    return x


def _log_jacobian(z: np.ndarray, transforms) -> float:
    total = 0.0
    for i, tr in enumerate(transforms):
        if tr == "log":
            total += z[i]
        elif tr == "logit":
            total += -_softplus(z[i]) - _softplus(-z[i])
    return total


@dataclass
class LogPosteriorTarget:
    """A log posterior over a fixed-length parameter vector.

    Parameters
    ----------
    dim : int
        Number of parameters.
    names : list of str
        One name per parameter, used for draw columns and diagnostics.
    log_post : callable
        Maps a natural-scale vector of length ``dim`` to a float log density
        (unnormalized). Must return -inf, not raise, off support.
    blocks : list of list of int
        Partition of ``range(dim)`` into update blocks. Defaults to one
        scalar block per coordinate.
    transforms : list of str
        Per-coordinate support transform: 'identity', 'log', or 'logit'.
    default_init : array, optional
        Natural-scale starting point used when the chain config gives none.
    """

    dim: int
    names: list
    log_post: object
    blocks: list = None
    transforms: list = None
    default_init: np.ndarray = None

    def __post_init__(self):
        if self.blocks is None:
            self.blocks = [[i] for i in range(self.dim)]
        if self.transforms is None:
            self.transforms = ["identity"] * self.dim
        if len(self.names) != self.dim:
            raise ShapeError(f"{len(self.names)} names for dim {self.dim}")
        if len(self.transforms) != self.dim:
            raise ShapeError(f"{len(self.transforms)} transforms for dim {self.dim}")
        for tr in self.transforms:
            if tr not in TRANSFORMS:
                raise InvalidParameterError(f"unknown transform {tr!r}")
        seen = sorted(i for b in self.blocks for i in b)
        if seen != list(range(self.dim)):
            raise InvalidParameterError("blocks must partition the coordinates")


@dataclass(frozen=True)
class ChainConfig:
    """How many chains to run and for how long.

    ``iterations`` counts total sweeps including burn-in; the retained sample
    per chain has ``ceil((iterations - burnin) / thin)`` draws.
    """

    n_chains: int = 4
    iterations: int = 4000
    burnin: int = 2000
    thin: int = 1
    seed: int = 0
    init: np.ndarray = None

    def __post_init__(self):
        if self.n_chains < 1:
            raise InvalidParameterError(f"n_chains must be >= 1, got {self.n_chains}")
        if self.iterations <= 0:
            raise InvalidParameterError("iterations must be positive")
        if not 0 <= self.burnin < self.iterations:
            raise InvalidParameterError(
                f"burnin must lie in [0, iterations), got {self.burnin} of {self.iterations}"
            )
        if self.thin < 1:
            raise InvalidParameterError(f"thin must be >= 1, got {self.thin}")

    @property
    def retained_per_chain(self) -> int:
        return -(-(self.iterations - self.burnin) // self.thin)


@dataclass
class DrawsMatrix:
    """Posterior draws with chain/iteration metadata.

    ``values`` is (M, dim) on the natural scale; ``chain`` and ``iteration``
    give each row's provenance. Serializes to CSV with header
    ``chain,iter,<param names...>``.
    """

    names: list
    values: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    accept_rates: list = None
    step_sizes: list = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.chain = np.asarray(self.chain, dtype=int)
        self.iteration = np.asarray(self.iteration, dtype=int)
        if self.values.shape[1] != len(self.names):
            raise ShapeError(
                f"{self.values.shape[1]} columns for {len(self.names)} names"
            )
        if self.values.shape[0] != self.chain.shape[0] != self.iteration.shape[0]:
            raise ShapeError("values, chain, iteration row counts differ")

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n_chains(self) -> int:
        return len(np.unique(self.chain))

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.names.index(name)
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None
        return self.values[:, j]

    def with_columns(self, names, values) -> "DrawsMatrix":
        """Return a copy with extra derived columns appended."""
        vals = np.column_stack([self.values, np.asarray(values, dtype=float)])
        return DrawsMatrix(
            names=list(self.names) + list(names),
            values=vals,
            chain=self.chain,
            iteration=self.iteration,
            accept_rates=self.accept_rates,
            step_sizes=self.step_sizes,
            warnings=list(self.warnings),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("chain,iter," + ",".join(self.names) + "\n")
            for r in range(self.n_draws):
                row = ",".join("%.17g" % v for v in self.values[r])
                fh.write(f"{self.chain[r]},{self.iteration[r]},{row}\n")

    @classmethod
    def from_csv(cls, path) -> "DrawsMatrix":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        if header[:2] != ["chain", "iter"]:
            raise ShapeError(f"{path}: draws files start with chain,iter columns")
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(
            names=header[2:],
            values=raw[:, 2:],
            chain=raw[:, 0].astype(int),
            iteration=raw[:, 1].astype(int),
        )


def run_chains(target: LogPosteriorTarget, cfg: ChainConfig) -> DrawsMatrix:
    """Run ``cfg.n_chains`` adaptive RWM-within-Gibbs chains over ``target``.

    Returns draws on the natural scale with per-chain metadata. Step sizes
    adapt only during burn-in; chains use independent counter-based streams
    keyed by ``(cfg.seed, chain_id)`` so results do not depend on scheduling.
    The ``CAUSAL_POSTERIOR_THREADS`` env var caps chain parallelism (default
    serial).
    """
    inits = _chain_inits(target, cfg)
    n_workers = _thread_cap(cfg.n_chains)
    args = [(target, cfg, c, inits[c]) for c in range(cfg.n_chains)]
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(lambda a: _chain_loop(*a), args))
    else:
        results = [_chain_loop(*a) for a in args]

    values = np.vstack([r["draws"] for r in results])
    chain = np.concatenate(
        [np.full(len(r["iters"]), c) for c, r in enumerate(results)]
    )
    iteration = np.concatenate([r["iters"] for r in results])
    msgs = [m for r in results for m in r["messages"]]
    return DrawsMatrix(
        names=list(target.names),
        values=values,
        chain=chain,
        iteration=iteration,
        accept_rates=[r["accept_rates"] for r in results],
        step_sizes=[r["step_sizes"] for r in results],
        warnings=msgs,
    )


def _thread_cap(n_chains: int) -> int:
    raw = os.environ.get("CAUSAL_POSTERIOR_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        cap = 1
    return max(1, min(n_chains, cap))


def _chain_inits(target, cfg):
    per_chain = False
    if cfg.init is not None:
        init = np.asarray(cfg.init, dtype=float)
        if init.ndim == 1:
            if init.size != target.dim:
                raise ShapeError(f"init length {init.size} != dim {target.dim}")
            nat = [init] * cfg.n_chains
        else:
            if init.shape != (cfg.n_chains, target.dim):
                raise ShapeError(
                    f"init shape {init.shape} != ({cfg.n_chains}, {target.dim})"
                )
            nat = [init[c] for c in range(cfg.n_chains)]
            per_chain = True
    elif target.default_init is not None:
        nat = [np.asarray(target.default_init, dtype=float)] * cfg.n_chains
    else:
        raise InitializationError("no init given and the target has no default")

    out = []
    for c, x0 in enumerate(nat):
        try:
            z0 = _to_unconstrained(np.asarray(x0, dtype=float), target.transforms)
        except InvalidParameterError as exc:
            # a start outside the support has -inf log posterior
            raise InitializationError(str(exc)) from exc
        if c > 0 and not per_chain:
            # overdisperse secondary chains deterministically from their own stream
            jitter_rng = RngHandle(cfg.seed, c).derive(0).generator()
            z0 = z0 + 0.1 * jitter_rng.standard_normal(target.dim)
        out.append(z0)
    return out


def _chain_loop(target, cfg, chain_id, z0):
    rng = RngHandle(cfg.seed, chain_id).generator()
    n_blocks = len(target.blocks)
    log_steps = np.array(
        [0.0 if len(b) == 1 else math.log(2.38 / math.sqrt(len(b))) for b in target.blocks]
    )
    rate_targets = np.array(
        [_TARGET_SCALAR if len(b) == 1 else _TARGET_BLOCK for b in target.blocks]
    )

    transforms = target.transforms

    def logpost_z(z):
        val = target.log_post(_to_natural(z, transforms))
        if math.isnan(val):
            return -math.inf
        return val + _log_jacobian(z, transforms)

    z = np.asarray(z0, dtype=float).copy()
    cur = logpost_z(z)
    if not math.isfinite(cur):
        raise InitializationError(
            f"chain {chain_id}: log posterior is {cur} at the initial point"
        )

    keep = cfg.retained_per_chain
    draws = np.empty((keep, target.dim))
    iters = np.empty(keep, dtype=int)
    accepted = np.zeros(n_blocks)
    proposed = np.zeros(n_blocks)
    rejects_in_row = np.zeros(n_blocks, dtype=int)
    stuck = [False] * n_blocks
    messages = []
    k = 0
    for t in range(cfg.iterations):
        adapting = t < cfg.burnin
        for b, idx in enumerate(target.blocks):
            step = math.exp(log_steps[b])
            prop = z.copy()
            prop[idx] = z[idx] + step * rng.standard_normal(len(idx))
            new = logpost_z(prop)
            ratio = new - cur
            alpha = 1.0 if ratio >= 0.0 else math.exp(ratio)
            took = rng.random() < alpha
            if took:
                z, cur = prop, new
                rejects_in_row[b] = 0
            else:
                rejects_in_row[b] += 1
                if adapting and rejects_in_row[b] >= _STUCK_WINDOW and not stuck[b]:
                    stuck[b] = True
                    msg = (
                        f"chain {chain_id} block {b} rejected {_STUCK_WINDOW} "
                        "consecutive proposals during burn-in"
                    )
                    warnings.warn(msg, StuckChainWarning)
                    messages.append(msg)
            if adapting:
                log_steps[b] += (alpha - rate_targets[b]) / (t + 1) ** 0.6
            else:
                proposed[b] += 1
                accepted[b] += took
        if t >= cfg.burnin and (t - cfg.burnin) % cfg.thin == 0:
            draws[k] = _to_natural(z, transforms)
            iters[k] = t
            k += 1
    with np.errstate(invalid="ignore"):
        rates = np.where(proposed > 0, accepted / np.maximum(proposed, 1), np.nan)
    return {
        "draws": draws[:k],
        "iters": iters[:k],
        "accept_rates": rates.tolist(),
        "step_sizes": np.exp(log_steps).tolist(),
        "messages": messages,
    }


def _split_sequences(draws: DrawsMatrix, name: str) -> np.ndarray:
    """Stack each chain's first and second half as rows of equal length."""
    col = draws.column(name)
    chains = np.unique(draws.chain)
    series = [col[draws.chain == c] for c in chains]
    half = min(len(s) for s in series) // 2
    seqs = []
    for s in series:
        seqs.append(s[:half])
        seqs.append(s[len(s) - half:])
    return np.asarray(seqs)


def split_rhat(draws: DrawsMatrix, name: str) -> float:
    """Split-chain potential scale reduction for one parameter.

    Each chain is split in half, so disagreement between a chain's own start
    and end shows up as well as disagreement across chains. Returns NaN when
    every half-chain is constant (the degenerate-variance flag); values near
    1 indicate mixing.
    """
    if draws.n_chains < 2:
        raise InvalidParameterError("split_rhat needs at least 2 chains")
    seqs = _split_sequences(draws, name)
    m, n = seqs.shape
    if n < 2:
        raise InvalidParameterError("split_rhat needs at least 4 draws per chain")
    within = seqs.var(axis=1, ddof=1)
    w = within.mean()
    if w == 0.0:
        return math.nan
    b_over_n = seqs.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * w + b_over_n
    return math.sqrt(var_plus / w)


def effective_sample_size(draws: DrawsMatrix, name: str) -> float:
    """Effective sample size via the initial-positive-sequence estimator.

    Autocorrelations are pooled across chains; the running sum of adjacent
    autocorrelation pairs stops at the first negative pair. The estimate is
    capped at the total draw count. Returns NaN for a constant sequence.
    """
    col = draws.column(name)
    if len(col) < 100:
        raise InvalidParameterError("effective_sample_size needs >= 100 draws")
    chains = np.unique(draws.chain)
    series = [col[draws.chain == c] for c in chains]
    n = min(len(s) for s in series)
    if n < 4:
        raise InvalidParameterError("effective_sample_size needs >= 4 draws per chain")
    series = np.asarray([s[:n] for s in series])
    m = series.shape[0]

    acov = np.empty((m, n))
    for i in range(m):
        acov[i] = _autocov_fft(series[i])
    within = acov[:, 0] * n / (n - 1.0)
    w = within.mean()
    if w == 0.0:
        return math.nan
    if m > 1:
        var_plus = w * (n - 1.0) / n + series.mean(axis=1).var(ddof=1)
    else:
        var_plus = w * (n - 1.0) / n + acov[0, 0] / n
    mean_acov = acov.mean(axis=0)
    rho = 1.0 - (w - mean_acov) / var_plus
    rho[0] = 1.0

    tau = 1.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        t += 2
    total = m * n
    return float(min(total, total / tau))


def _autocov_fft(x: np.ndarray) -> np.ndarray:
    n = len(x)
    centered = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n
