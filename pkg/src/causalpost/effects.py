"""Posterior causal-effect post-processing.

Turns draws of regression surfaces into draws of marginal estimands: the
confounder distribution gets a Bayesian-bootstrap posterior (flat Dirichlet
over the observed sample), each posterior draw of the outcome surface is
averaged under fresh bootstrap weights, and contrasts are taken on the
requested scale. A sensitivity step can subtract a drawn bias term from each
estimand draw.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .engine import DrawsMatrix
from .errors import (
    ClampWarning,
    InvalidParameterError,
    MissingStratumError,
    ShapeError,
    UnsupportedKindError,
)
from .prob import Distribution, RngHandle, sample_dirichlet, sample_scalar

__all__ = [
    "EstimandDraws",
    "SensitivitySpec",
    "bb_weights",
    "standardize_marginal",
    "standardize_stratified_or",
    "stratified_or_from_means",
    "bias_xi",
    "sensitivity_perturb",
    "marginal_ate_from_linear",
]

KINDS = ("difference", "ratio", "odds-ratio")
_CLAMP = 1e-12


@dataclass
class EstimandDraws:
    """Draws of one scalar causal estimand.

    ``kind`` records the contrast scale so downstream steps can refuse
    operations that only make sense on one scale.
    """

    name: str
    values: np.ndarray
    kind: str = "difference"
    chain: np.ndarray = None
    iteration: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown estimand kind {self.kind!r}")
        m = self.values.shape[0]
        if self.chain is None:
            self.chain = np.zeros(m, dtype=int)
        if self.iteration is None:
            self.iteration = np.arange(m, dtype=int)
        self.chain = np.asarray(self.chain, dtype=int)
        self.iteration = np.asarray(self.iteration, dtype=int)
        if self.chain.shape[0] != m or self.iteration.shape[0] != m:
            raise ShapeError("chain/iteration metadata length differs from values")

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    def summary(self) -> dict:
        q = np.quantile(self.values, [0.025, 0.5, 0.975])
        return {
            "mean": float(self.values.mean()),
            "sd": float(self.values.std(ddof=1)) if self.n_draws > 1 else 0.0,
            "q025": float(q[0]),
            "q50": float(q[1]),
            "q975": float(q[2]),
        }

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("chain,iter,value\n")
            for c, i, v in zip(self.chain, self.iteration, self.values):
                fh.write("%d,%d,%.17g\n" % (c, i, v))

    @classmethod
    def from_csv(cls, path, name=None, kind="difference") -> "EstimandDraws":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        if header != ["chain", "iter", "value"]:
            raise ShapeError(f"{path}: estimand files have header chain,iter,value")
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(
            name=name or "estimand",
            values=raw[:, 2],
            kind=kind,
            chain=raw[:, 0].astype(int),
            iteration=raw[:, 1].astype(int),
        )

    def summary_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, sort_keys=True, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class SensitivitySpec:
    """Prior over the additive bias term subtracted from each estimand draw.

    ``negated`` flips the sign of each drawn bias before subtraction, for
    priors with positive support used to express negative bias beliefs.
    """

    prior: Distribution
    negated: bool = False


def bb_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """One Bayesian-bootstrap weight vector: Dirichlet(1, ..., 1) over n points."""
    if n < 1:
        raise InvalidParameterError(f"need at least one observation, got n={n}")
    return sample_dirichlet(np.ones(n), rng)


def standardize_marginal(mu1, mu0, weights, kind: str = "difference") -> float:
    """Average two outcome surfaces under one weight vector and contrast them.

    ``mu1``/``mu0`` are per-subject conditional means under treatment and
    control for a single posterior draw; ``weights`` is a simplex vector over
    the same subjects.
    """
    if kind not in KINDS:
        raise InvalidParameterError(f"unknown contrast kind {kind!r}")
    mu1 = np.asarray(mu1, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    w = np.asarray(weights, dtype=float)
    if mu1.shape != mu0.shape or mu1.shape != w.shape:
        raise ShapeError("mu1, mu0, and weights must have equal length")
    if kind == "difference":
        return float(np.sum(w * (mu1 - mu0)))
    m1 = float(np.sum(w * mu1))
    m0 = float(np.sum(w * mu0))
    if kind == "ratio":
        return m1 / m0
    m1c, m0c = _clamp_unit(m1), _clamp_unit(m0)
    return (m1c / (1.0 - m1c)) / (m0c / (1.0 - m0c))


def _clamp_unit(m: float) -> float:
    if m < _CLAMP or m > 1.0 - _CLAMP:
        clamped = min(max(m, _CLAMP), 1.0 - _CLAMP)
        warnings.warn(
            f"standardized mean {m} clamped to {clamped} before odds", ClampWarning
        )
        return clamped
    return m


def standardize_stratified_or(draws, data, rng):
    """Stratified marginal odds ratios from a partially pooled logistic fit.

    Reconstructs per-subject success probabilities under both treatment arms
    from the draw columns, then integrates each stratum separately with fresh
    Bayesian-bootstrap weights per draw. Returns ``{stratum: EstimandDraws}``.
    """
    from .models import partial_pool_predictions

    mu1, mu0 = partial_pool_predictions(draws, data)
    return stratified_or_from_means(mu1, mu0, data.strata.astype(int), rng)


def stratified_or_from_means(mu1, mu0, strata, rng, labels=None, name="or"):
    """Stratified marginal odds ratios with fresh weights per draw per stratum.

    ``mu1``/``mu0`` are (M, n) prediction matrices over all subjects;
    ``strata`` assigns each subject a stratum label. For each posterior draw
    and each stratum, that stratum's subjects get a fresh Bayesian-bootstrap
    weight vector, means are formed on the probability scale, and the odds
    ratio is taken. Returns ``{label: EstimandDraws}``.
    """
    mu1 = np.atleast_2d(np.asarray(mu1, dtype=float))
    mu0 = np.atleast_2d(np.asarray(mu0, dtype=float))
    strata = np.asarray(strata)
    if mu1.shape != mu0.shape:
        raise ShapeError("mu1 and mu0 must have equal shape")
    if mu1.shape[1] != strata.shape[0]:
        raise ShapeError("prediction columns must match the stratum vector")
    if labels is None:
        labels = sorted(np.unique(strata).tolist())
    members = {}
    for v in labels:
        idx = np.nonzero(strata == v)[0]
        if idx.size == 0:
            raise MissingStratumError(f"stratum {v!r} has no observations")
        members[v] = idx

    m_draws = mu1.shape[0]
    handle = rng if isinstance(rng, RngHandle) else None
    gen = None if handle is not None else rng
    out = {v: np.empty(m_draws) for v in labels}
    for m in range(m_draws):
        g = handle.derive(m).generator() if handle is not None else gen
        for v in labels:
            idx = members[v]
            w = bb_weights(idx.size, g)
            out[v][m] = standardize_marginal(
                mu1[m, idx], mu0[m, idx], w, kind="odds-ratio"
            )
    return {
        v: EstimandDraws(name=f"{name}_v{v}", values=out[v], kind="odds-ratio")
        for v in labels
    }


def bias_xi(delta1, delta0, propensity, confounders, weights) -> float:
    """Weighted bias integral for an unmeasured-confounding contrast.

    ``delta1``/``delta0`` map a confounder sample to the treated/control
    selection-bias terms; ``propensity`` maps it to P(A=1 | L). All three are
    evaluated on ``confounders`` (vectorized over rows) and averaged under
    ``weights``: sum_i w_i {delta0(L_i) e(L_i) + delta1(L_i) [1 - e(L_i)]}.
    """
    conf = np.asarray(confounders, dtype=float)
    w = np.asarray(weights, dtype=float)
    d1 = np.asarray(delta1(conf), dtype=float)
    d0 = np.asarray(delta0(conf), dtype=float)
    e = np.asarray(propensity(conf), dtype=float)
    n = w.shape[0]
    if d1.shape != (n,) or d0.shape != (n,) or e.shape != (n,):
        raise ShapeError("delta/propensity callables must return one value per row")
    if np.any(e < 0.0) or np.any(e > 1.0):
        raise InvalidParameterError("propensity values must lie in [0, 1]")
    return float(np.sum(w * (d0 * e + d1 * (1.0 - e))))


def sensitivity_perturb(psi: EstimandDraws, spec: SensitivitySpec, rng) -> EstimandDraws:
    """Subtract an independent bias draw from each estimand draw.

    Only difference-scale estimands support additive bias; ratio scales raise.
    A point-mass prior at zero returns draws bit-identical to the input.
    """
    if psi.kind != "difference":
        raise UnsupportedKindError(
            f"sensitivity perturbation needs a difference-scale estimand, got {psi.kind!r}"
        )
    gen = rng.generator() if isinstance(rng, RngHandle) else rng
    m = psi.n_draws
    delta = np.empty(m)
    for i in range(m):
        delta[i] = sample_scalar(spec.prior, gen)
    if spec.negated:
        delta = -delta
    return EstimandDraws(
        name=f"{psi.name}_sens",
        values=psi.values - delta,
        kind="difference",
        chain=psi.chain,
        iteration=psi.iteration,
    )


def marginal_ate_from_linear(draws: DrawsMatrix, column: str = "theta") -> EstimandDraws:
    """Marginal difference contrast for a linear outcome model.

    With a linear model the per-subject contrast is the treatment coefficient
    itself, so weighting over any confounder sample returns that coefficient
    unchanged; the draws come back bit-identical to the named column.
    """
    values = draws.column(column)
    return EstimandDraws(
        name="ate",
        values=values.copy(),
        kind="difference",
        chain=draws.chain,
        iteration=draws.iteration,
    )
