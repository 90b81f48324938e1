"""Time-varying treatment machinery.

Fits one Gaussian regression per time point for the confounder process plus a
Gaussian outcome regression, all conditioning on the full observed history,
with coefficient priors that decay with lag (ridge) or adapt per lag
(horseshoe). Posterior draws then drive Monte Carlo g-computation: confounder
trajectories are simulated forward under each treatment regime and the
outcome model is averaged over them, with common random numbers shared by the
two regimes inside each posterior draw.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np

from .data import LongitudinalDataset
from .effects import EstimandDraws
from .engine import ChainConfig, DrawsMatrix, LogPosteriorTarget, run_chains
from .errors import (
    InvalidParameterError,
    SchemaError,
    ShapeError,
    ToleranceUnreachableError,
)
from .prob import RngHandle

__all__ = [
    "ShrinkageSpec",
    "Regime",
    "fit_sequential",
    "gcomp_static",
    "gcomp_dynamic",
    "gcomp_arm_means",
    "choose_B",
]

_LOG_2PI = math.log(2.0 * math.pi)
_FAMILIES = ("ridge", "horseshoe")


@dataclass(frozen=True)
class ShrinkageSpec:
    """History-coefficient prior family for the sequential regressions.

    Ridge fixes the prior sd of a lag-k coefficient at lambda^-k, halving per
    backward step at the default lam=2. Horseshoe replaces the fixed scales
    with half-Cauchy(0, 2^-k) local variances tau_k times a shared
    half-Cauchy(0, nu) global variance, which lets isolated distant-lag
    signals escape the shrinkage. ``shrink_treatment`` applies the same decay
    to treatment-history coefficients; with it off they get unit-sd priors.
    """

    family: str = "ridge"
    lam: float = 2.0
    nu: float = 1.0
    shrink_treatment: bool = True
    intercept_sd: float = 10.0
    var_shape: float = 1.0
    var_scale: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise InvalidParameterError(f"family must be one of {_FAMILIES}")
        if self.lam <= 1.0:
            raise InvalidParameterError("lam must be > 1")
        if self.nu <= 0.0:
            raise InvalidParameterError("nu must be > 0")
        for nm in ("intercept_sd", "var_shape", "var_scale"):
            if getattr(self, nm) <= 0:
                raise InvalidParameterError(f"{nm} must be > 0")


@dataclass(frozen=True)
class Regime:
    """A treatment plan: a fixed 0/1 vector, or the rule a_t = I(L_t > kappa).

    The dynamic rule reads only the current simulated confounder, so it is
    evaluable during forward simulation at every time point including t=0.
    """

    kind: str
    vec: tuple = None
    kappa: float = None

    def __post_init__(self):
        if self.kind not in ("static", "dynamic"):
            raise InvalidParameterError("regime kind must be static or dynamic")
        if self.kind == "static":
            if self.vec is None:
                raise InvalidParameterError("static regime needs vec")
            vec = tuple(int(v) for v in self.vec)
            if any(v not in (0, 1) for v in vec):
                raise InvalidParameterError("static regime entries must be 0 or 1")
            object.__setattr__(self, "vec", vec)
        else:
            # +-inf thresholds are legal (always/never treat); NaN is not
            if self.kappa is None or math.isnan(float(self.kappa)):
                raise InvalidParameterError("dynamic regime needs a kappa threshold")
            object.__setattr__(self, "kappa", float(self.kappa))

    def actions(self, t: int, l_now: np.ndarray) -> np.ndarray:
        if self.kind == "static":
            return np.full(l_now.shape[0], float(self.vec[t]))
        return (l_now > self.kappa).astype(float)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"kind={self.kind}\n")
            if self.kind == "static":
                fh.write("vec=" + ",".join(str(v) for v in self.vec) + "\n")
            else:
                fh.write("kappa=%.17g\n" % self.kappa)

    @classmethod
    def from_file(cls, path) -> "Regime":
        kv = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise SchemaError(f"{path}: expected key=value lines, got {line!r}")
                key, val = line.split("=", 1)
                kv[key.strip()] = val.strip()
        kind = kv.get("kind")
        if kind == "static":
            if "vec" not in kv:
                raise SchemaError(f"{path}: static regime file needs vec=")
            vec = tuple(int(x) for x in kv["vec"].split(","))
            return cls(kind="static", vec=vec)
        if kind == "dynamic":
            if "kappa" not in kv:
                raise SchemaError(f"{path}: dynamic regime file needs kappa=")
            return cls(kind="dynamic", kappa=float(kv["kappa"]))
        raise SchemaError(f"{path}: kind must be static or dynamic")


def _half_cauchy_logpdf(x: float, scale: float) -> float:
    r = x / scale
    return math.log(2.0 / math.pi) - math.log(scale) - math.log1p(r * r)


def _inv_gamma_logpdf(x, shape, scale) -> float:
    return (
        shape * math.log(scale)
        - math.lgamma(shape)
        - (shape + 1.0) * math.log(x)
        - scale / x
    )


def _sub_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(101, index))
    return int(ss.generate_state(1, np.uint64)[0])


def _one_regression(y, design, lag_of_col, spec, cfg, prefix, prior_only, idx):
    """Build and sample one Gaussian regression of the sequential system.

    ``design`` includes the leading intercept column; ``lag_of_col`` gives,
    for every non-intercept column, its backward lag (None for coefficients
    exempt from shrinkage, which get unit-sd priors).
    """
    n, d = design.shape
    coef_names = [f"{prefix}_b0"] + [f"{prefix}_{nm}" for nm, _ in lag_of_col]
    lags = [lag for _, lag in lag_of_col]
    names = coef_names + [f"{prefix}_var"]
    transforms = ["identity"] * d + ["log"]

    if spec.family == "ridge":
        sd_vec = np.empty(d)
        sd_vec[0] = spec.intercept_sd
        for j, lag in enumerate(lags):
            sd_vec[j + 1] = 1.0 if lag is None else spec.lam ** (-lag)

        def log_post(v):
            beta, var = v[:d], v[d]
            z = beta / sd_vec
            lp = -0.5 * float(z @ z) - float(np.sum(np.log(sd_vec))) - 0.5 * d * _LOG_2PI
            lp += _inv_gamma_logpdf(var, spec.var_shape, spec.var_scale)
            if not prior_only:
                resid = y - design @ beta
                lp += -0.5 * n * (_LOG_2PI + math.log(var)) - resid @ resid / (2.0 * var)
            return lp

        dim = d + 1
    else:
        shrunk_lags = sorted({lag for lag in lags if lag is not None})
        tau_names = [f"{prefix}_tau{k}" for k in shrunk_lags]
        tau_scales = np.array([2.0 ** (-k) for k in shrunk_lags])
        tau_pos = {k: d + 1 + j for j, k in enumerate(shrunk_lags)}
        names = names + tau_names + [f"{prefix}_hsphi"]
        transforms = transforms + ["log"] * (len(shrunk_lags) + 1)
        dim = d + 2 + len(shrunk_lags)
        col_tau = np.array([-1 if lag is None else tau_pos[lag] for lag in lags])

        unshrunk = col_tau < 0

        def log_post(v):
            beta, var = v[:d], v[d]
            hsphi = v[dim - 1]
            lp = -0.5 * (beta[0] / spec.intercept_sd) ** 2 - math.log(spec.intercept_sd)
            if d > 1:
                pvar = np.where(unshrunk, 1.0, v[col_tau] * hsphi)
                bj = beta[1:]
                lp += -0.5 * float(bj * bj @ (1.0 / pvar)) - 0.5 * float(
                    np.sum(np.log(pvar))
                )
            lp += -0.5 * d * _LOG_2PI
            for j in range(len(shrunk_lags)):
                lp += _half_cauchy_logpdf(v[d + 1 + j], tau_scales[j])
            lp += _half_cauchy_logpdf(hsphi, spec.nu)
            lp += _inv_gamma_logpdf(var, spec.var_shape, spec.var_scale)
            if not prior_only:
                resid = y - design @ beta
                lp += -0.5 * n * (_LOG_2PI + math.log(var)) - resid @ resid / (2.0 * var)
            return lp

    if prior_only or n <= d:
        beta0 = np.zeros(d)
        var0 = 1.0
    else:
        beta0, *_ = np.linalg.lstsq(design, y, rcond=None)
        var0 = max(float(np.var(y - design @ beta0)), 1e-8)
    init = np.concatenate([beta0, [var0]])
    if spec.family == "horseshoe":
        init = np.concatenate([init, tau_scales, [spec.nu]])

    target = LogPosteriorTarget(
        dim=dim, names=names, log_post=log_post, transforms=transforms, default_init=init
    )
    return run_chains(target, replace(cfg, seed=_sub_seed(cfg.seed, idx), init=None))


def fit_sequential(
    data: LongitudinalDataset,
    spec: ShrinkageSpec = ShrinkageSpec(),
    cfg: ChainConfig = ChainConfig(),
    prior_only: bool = False,
) -> DrawsMatrix:
    """Sample every regression in the sequential factorization.

    One model per time point for L_t given the full history (L_0 gets an
    intercept-only model), plus the outcome model for Y given the complete
    treatment and confounder history. The factorization makes the per-model
    posteriors independent, so each is sampled separately (with separated
    substreams) and the draws are glued into a single matrix whose column
    names encode the layout: ``lt{t}_b0, lt{t}_bL{s}, lt{t}_bA{s}, lt{t}_var``
    and ``y_b0, y_bL{s}, y_bA{s}, y_var`` (plus ``_tau{k}``/``_hsphi`` columns
    for the horseshoe family).
    """
    t1 = data.t_plus_1
    if t1 < 2:
        raise InvalidParameterError(
            "single time point: use the point-treatment models instead"
        )
    n = data.n
    lmat, amat, y = data.confounders, data.treatments, data.y

    fits = []
    for t in range(t1):
        design = np.column_stack([np.ones(n), lmat[:, :t], amat[:, :t]])
        cols = [(f"bL{s}", t - s) for s in range(t)] + [
            (f"bA{s}", (t - s) if spec.shrink_treatment else None) for s in range(t)
        ]
        fits.append(
            _one_regression(lmat[:, t], design, cols, spec, cfg, f"lt{t}", prior_only, t)
        )

    design = np.column_stack([np.ones(n), lmat, amat])
    cols = [(f"bL{s}", t1 - 1 - s) for s in range(t1)] + [
        (f"bA{s}", (t1 - 1 - s) if spec.shrink_treatment else None) for s in range(t1)
    ]
    fits.append(_one_regression(y, design, cols, spec, cfg, "y", prior_only, t1))

    names = [nm for f in fits for nm in f.names]
    values = np.concatenate([f.values for f in fits], axis=1)
    accept = [
        np.concatenate([f.accept_rates[c] for f in fits])
        for c in range(cfg.n_chains)
    ]
    steps = [
        np.concatenate([f.step_sizes[c] for f in fits]) for c in range(cfg.n_chains)
    ]
    msgs = [m for f in fits for m in f.warnings]
    return DrawsMatrix(
        names=names,
        values=values,
        chain=fits[0].chain,
        iteration=fits[0].iteration,
        accept_rates=accept,
        step_sizes=steps,
        warnings=msgs,
    )


class _SequentialLayout:
    """Column-index view of a sequential fit, parsed from draw names."""

    def __init__(self, names):
        idx = {nm: j for j, nm in enumerate(names)}
        ts = set()
        for nm in names:
            m = re.match(r"lt(\d+)_b0$", nm)
            if m:
                ts.add(int(m.group(1)))
        if not ts or sorted(ts) != list(range(max(ts) + 1)):
            raise SchemaError("draws lack a contiguous set of lt{t}_b0 columns")
        self.t_plus_1 = max(ts) + 1
        t1 = self.t_plus_1

        def need(nm):
            if nm not in idx:
                raise SchemaError(f"draws lack required column {nm}")
            return idx[nm]

        self.l_b0 = [need(f"lt{t}_b0") for t in range(t1)]
        self.l_var = [need(f"lt{t}_var") for t in range(t1)]
        self.l_bl = [[need(f"lt{t}_bL{s}") for s in range(t)] for t in range(t1)]
        self.l_ba = [[need(f"lt{t}_bA{s}") for s in range(t)] for t in range(t1)]
        self.y_b0 = need("y_b0")
        self.y_var = need("y_var")
        self.y_bl = [need(f"y_bL{s}") for s in range(t1)]
        self.y_ba = [need(f"y_bA{s}") for s in range(t1)]


def _simulate_outcome_means(row, layout, regime, z):
    """Per-trajectory outcome means for one posterior draw under one regime.

    ``z`` is the (B, T+1) standard-normal matrix shared across regimes inside
    a draw; reusing it for both arms of a contrast is what makes identical
    regimes cancel exactly.
    """
    b, t1 = z.shape
    lsim = np.empty((b, t1))
    asim = np.empty((b, t1))
    for t in range(t1):
        mean = np.full(b, row[layout.l_b0[t]])
        if t:
            mean += lsim[:, :t] @ row[layout.l_bl[t]]
            mean += asim[:, :t] @ row[layout.l_ba[t]]
        lsim[:, t] = mean + math.sqrt(row[layout.l_var[t]]) * z[:, t]
        asim[:, t] = regime.actions(t, lsim[:, t])
    return row[layout.y_b0] + lsim @ row[layout.y_bl] + asim @ row[layout.y_ba]


def _contrast_all_draws(draws, regimes, b, rng, kind):
    if b < 1:
        raise InvalidParameterError(f"B must be a positive integer, got {b}")
    layout = _SequentialLayout(draws.names)
    t1 = layout.t_plus_1
    for reg in regimes:
        if reg.kind == "static" and len(reg.vec) != t1:
            raise ShapeError(
                f"regime length {len(reg.vec)} does not match {t1} time points"
            )
    handle = rng if isinstance(rng, RngHandle) else RngHandle(seed=int(rng))
    m = draws.n_draws
    psi = np.empty(m)
    mu_first = np.empty(m)
    mu_second = np.empty(m)
    for i in range(m):
        gen = handle.derive(i).generator()
        z = gen.standard_normal((b, t1))
        row = draws.values[i]
        y_first = _simulate_outcome_means(row, layout, regimes[0], z)
        y_second = _simulate_outcome_means(row, layout, regimes[1], z)
        weights = np.full(b, 1.0 / b)
        mu_first[i] = float(np.sum(weights * y_first))
        mu_second[i] = float(np.sum(weights * y_second))
        if kind == "difference":
            psi[i] = float(np.sum(weights * (y_first - y_second)))
        else:
            psi[i] = mu_first[i] / mu_second[i]
    return psi, mu_first, mu_second


def gcomp_static(
    draws: DrawsMatrix, regimes, b: int, rng, kind: str = "difference"
) -> EstimandDraws:
    """Monte Carlo g-computation contrast between two static regimes.

    Per posterior draw, B confounder trajectories are simulated forward under
    each regime from the same standard-normal matrix (common random numbers),
    the outcome model is averaged over trajectories, and the contrast is
    taken; identical regimes therefore give exactly zero on the difference
    scale.
    """
    for reg in regimes:
        if reg.kind != "static":
            raise InvalidParameterError("gcomp_static requires two static regimes")
    psi, _, _ = _contrast_all_draws(draws, regimes, b, rng, kind)
    return EstimandDraws(
        name="gcomp", values=psi, kind=kind, chain=draws.chain, iteration=draws.iteration
    )


def gcomp_dynamic(
    draws: DrawsMatrix, rule_first: Regime, rule_second: Regime, b: int, rng,
    kind: str = "difference",
) -> EstimandDraws:
    """G-computation contrast between two threshold rules a_t = I(L_t > kappa).

    Treatment at each time point is set from the just-simulated confounder,
    then the next confounder is simulated given that choice; common random
    numbers are shared across the two rules within each posterior draw.
    """
    for reg in (rule_first, rule_second):
        if reg.kind != "dynamic":
            raise InvalidParameterError("gcomp_dynamic requires two dynamic regimes")
    psi, _, _ = _contrast_all_draws(draws, (rule_first, rule_second), b, rng, kind)
    return EstimandDraws(
        name="gcomp_dynamic",
        values=psi,
        kind=kind,
        chain=draws.chain,
        iteration=draws.iteration,
    )


def gcomp_arm_means(draws: DrawsMatrix, regimes, b: int, rng):
    """Per-draw simulated mean outcomes under each regime (M, 2).

    Uses the same common-random-number scheme as the contrast functions, so
    dividing the columns reproduces ratio-kind g-computation draws exactly.
    """
    _, mu_first, mu_second = _contrast_all_draws(
        draws, regimes, b, rng, kind="difference"
    )
    return np.column_stack([mu_first, mu_second])


def choose_B(
    draws: DrawsMatrix, regimes, rng, row: int = 0, tol: float = 0.01, b_cap: int = 2 ** 20
) -> int:
    """Pick a trajectory count by doubling until the contrast stabilizes.

    Evaluates the single-draw contrast at B and 2B with independent streams
    and accepts B once the symmetric relative change |a-b|/(|a|+|b|) falls
    within ``tol``; the zero-MC-error case accepts the first candidate B=100.
    """
    _SequentialLayout(draws.names)  # validate columns up front
    handle = rng if isinstance(rng, RngHandle) else RngHandle(seed=int(rng))
    one = DrawsMatrix(
        names=draws.names,
        values=draws.values[row : row + 1],
        chain=draws.chain[row : row + 1],
        iteration=draws.iteration[row : row + 1],
    )

    def eval_at(b, j):
        psi, _, _ = _contrast_all_draws(one, regimes, b, handle.derive(j), "difference")
        return float(psi[0])

    b = 100
    j = 0
    current = eval_at(b, j)
    while True:
        if 2 * b > b_cap:
            raise ToleranceUnreachableError(
                f"contrast still moving more than {tol:g} at B={b}"
            )
        j += 1
        doubled = eval_at(2 * b, j)
        denom = abs(current) + abs(doubled)
        rel = 0.0 if denom == 0.0 else abs(doubled - current) / denom
        if rel <= tol:
            return b
        b *= 2
        current = doubled
