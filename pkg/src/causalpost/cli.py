"""File-driven command line: simulate, fit, effects, summarize, replay.

Every command is a pure function of its input files, flags, and seed, and
writes a manifest recording all of them plus SHA-256 digests of every input
and output; ``replay`` re-runs a manifest and verifies byte reproduction.
stdout carries only machine-readable progress lines (``wrote <role> <path>``
and ``metric <name> <value>``); results go to files.

Exit codes: 0 success; 2 usage or schema error; 3 convergence diagnostics
exceeded the R-hat limit (draws are still written); 4 initialization failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .bnp import (
    BARTConfig,
    DPConfig,
    GPConfig,
    bart_fit_predict,
    bnp_ate,
    dp_fit,
    dp_predict,
    gp_fit_predict,
)
from .data import LongitudinalDataset, ObservedDataset, _read_table
from .effects import (
    EstimandDraws,
    SensitivitySpec,
    marginal_ate_from_linear,
    sensitivity_perturb,
    standardize_stratified_or,
)
from .engine import ChainConfig, DrawsMatrix, effective_sample_size, split_rhat
from .errors import (
    CausalPostError,
    InitializationError,
    InvalidParameterError,
    SchemaError,
    SingleChainWarning,
)
from .gcomp import Regime, ShrinkageSpec, fit_sequential, gcomp_dynamic, gcomp_static
from .manifest import RunManifest, build_manifest, file_digest, manifest_path
from .models import (
    DoseModelSpec,
    LinearModelSpec,
    PartialPoolSpec,
    fit_dose_ar1,
    fit_linear,
    fit_partial_pool,
)
from .prob import RngHandle, gamma_dist, normal, point_mass
from .synthdata import Scenario, generate

__all__ = ["main"]

_RHAT_LIMIT = 1.1
# stream id for post-fit prediction draws, distinct from chain stream ids
_PREDICT_STREAM = 30_003

_EXIT_OK = 0
_EXIT_USAGE = 2
_EXIT_NONCONVERGED = 3
_EXIT_INIT = 4


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse has already printed its message; --help exits 0
        return _EXIT_OK if exc.code in (0, None) else _EXIT_USAGE
    try:
        return args.handler(args)
    except InitializationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INIT
    except (CausalPostError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return _EXIT_USAGE


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalpost",
        description="Simulate scenario data, fit posterior models, and "
        "post-process draws into causal effect estimates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw one scenario dataset to CSV")
    sim.add_argument("--scenario", required=True, help="dose | partialpool | sensitivity | gcomp | bnp")
    sim.add_argument("--n", type=int, default=None, help="rows (default: the scenario's pinned size)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="dataset CSV path")
    sim.set_defaults(handler=_cmd_simulate)

    fit = sub.add_parser("fit", help="sample a model posterior to a draws CSV")
    fit.add_argument(
        "--model",
        required=True,
        choices=["linear", "dose", "partialpool", "gcomp", "dp", "gp", "bart"],
    )
    fit.add_argument("--data", required=True, help="dataset CSV")
    fit.add_argument("--config", default=None, help="flat key=value hyperparameter file")
    fit.add_argument("--iter", type=int, default=4000, help="sweeps per chain including burn-in")
    fit.add_argument("--burnin", type=int, default=2000)
    fit.add_argument("--chains", type=int, default=4)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True, help="draws CSV path")
    fit.set_defaults(handler=_cmd_fit)

    eff = sub.add_parser("effects", help="turn draws into causal-estimand draws")
    eff.add_argument("--draws", required=True, help="draws CSV from fit, or estimand CSV for sensitivity mode")
    eff.add_argument("--data", default=None, help="dataset CSV (stratified mode)")
    eff.add_argument(
        "--mode",
        required=True,
        choices=["marginal", "stratified", "gcomp-static", "gcomp-dynamic", "sensitivity"],
    )
    eff.add_argument("--regime", action="append", default=None, help="regime file; give twice for gcomp modes")
    eff.add_argument("--sens-prior", dest="sens_prior", default=None, help="bias prior, e.g. gamma:1:3:negated")
    eff.add_argument("--B", dest="b", type=int, default=500, help="trajectories per draw (gcomp modes)")
    eff.add_argument("--seed", type=int, default=0)
    eff.add_argument("--out", required=True, help="estimand draws CSV path")
    eff.set_defaults(handler=_cmd_effects)

    summ = sub.add_parser("summarize", help="per-column summary JSON for a draws CSV")
    summ.add_argument("--draws", required=True)
    summ.add_argument("--out", required=True, help="summary JSON path")
    summ.set_defaults(handler=_cmd_summarize)

    rep = sub.add_parser("replay", help="re-run a manifest and verify byte reproduction")
    rep.add_argument("--manifest", required=True)
    rep.set_defaults(handler=_cmd_replay)
    return parser


def _sibling(out, suffix: str) -> str:
    return str(Path(out).with_suffix("")) + suffix


def _report_outputs(command, flags, seed, inputs, outputs):
    """Write the manifest next to the primary output and print progress lines."""
    mpath = manifest_path(flags["out"])
    build_manifest(command, flags, seed, inputs, [p for _, p in outputs]).to_json(mpath)
    for role, path in outputs:
        print(f"wrote {role} {path}")
    print(f"wrote manifest {mpath}")


def _cmd_simulate(args) -> int:
    scenario = Scenario(args.scenario, n=args.n, seed=args.seed)
    generate(scenario).to_csv(args.out)
    flags = {
        "scenario": scenario.id,
        "n": scenario.n,
        "seed": args.seed,
        "out": args.out,
    }
    _report_outputs("simulate", flags, args.seed, [], [("dataset", args.out)])
    return _EXIT_OK


def _read_config(path) -> dict:
    """Parse a flat key=value file; '#' comments and blank lines are skipped."""
    pairs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SchemaError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value.strip()
    return pairs


def _coerce_config(pairs: dict, schema: dict, model: str) -> dict:
    out = {}
    for key, raw in pairs.items():
        if key not in schema:
            raise InvalidParameterError(
                f"unknown config key {key!r} for model {model!r}; "
                f"expected one of {sorted(schema)}"
            )
        out[key] = schema[key](raw)
    return out


def _as_bool(raw: str) -> bool:
    if raw in ("1", "true", "True"):
        return True
    if raw in ("0", "false", "False"):
        return False
    raise InvalidParameterError(f"expected a boolean (0/1/true/false), got {raw!r}")


_FLOAT_KEYS = lambda *names: {nm: float for nm in names}  # noqa: E731

_CONFIG_SCHEMAS = {
    "linear": _FLOAT_KEYS(
        "theta_mean", "theta_sd", "beta_mean", "beta_sd", "phi_shape", "phi_scale"
    ),
    "dose": {
        "n_levels": int,
        "mu1": float,
        "tau1": float,
        "tauk": float,
        "beta_mean": float,
        "beta_sd": float,
        "phi_shape": float,
        "phi_scale": float,
    },
    "partialpool": {
        "n_offsets": int,
        **_FLOAT_KEYS(
            "tau", "mu_mean", "mu_sd", "beta_w_mean", "beta_w_sd", "beta_v_mean", "beta_v_sd"
        ),
    },
    "gcomp": {
        "family": str,
        "shrink_treatment": _as_bool,
        **_FLOAT_KEYS("lam", "nu", "intercept_sd", "var_shape", "var_scale"),
    },
    "dp": {"alpha": float, "aux_m": int, "init_k": int, "kinds": str},
    "gp": _FLOAT_KEYS("eta", "rho", "noise"),
    "bart": {"n_trees": int, **_FLOAT_KEYS("a_split", "b_split", "leaf_sd", "nu", "q")},
}


def _cmd_fit(args) -> int:
    pairs = _read_config(args.config) if args.config else {}
    init = None
    if "init" in pairs:
        init = np.array([float(tok) for tok in pairs.pop("init").split(",")])
    chain = ChainConfig(
        n_chains=args.chains,
        iterations=args.iter,
        burnin=args.burnin,
        seed=args.seed,
        init=init,
    )
    if args.chains == 1:
        warnings.warn(
            "only one chain requested; split-chain diagnostics are unavailable",
            SingleChainWarning,
        )

    if args.model == "gcomp":
        data = LongitudinalDataset.from_csv(args.data)
    else:
        data = ObservedDataset.from_csv(args.data)

    kw = _coerce_config(pairs, _CONFIG_SCHEMAS[args.model], args.model)
    if args.model in ("linear", "dose", "partialpool", "gcomp"):
        draws = _fit_parametric(args.model, data, kw, chain)
        predictions = None
    else:
        draws, predictions = _fit_bnp(args.model, data, kw, chain, args.seed)

    draws.to_csv(args.out)
    outputs = [("draws", args.out)]
    if predictions is not None:
        ppath = _sibling(args.out, ".predictions.csv")
        _write_predictions(ppath, predictions, draws.chain, draws.iteration)
        outputs.append(("predictions", ppath))

    diagnostics, rhat_max = _diagnostics(draws)
    dpath = _sibling(args.out, ".diagnostics.json")
    with open(dpath, "w", encoding="utf-8") as fh:
        json.dump(diagnostics, fh, indent=2)
        fh.write("\n")
    outputs.append(("diagnostics", dpath))

    flags = {
        "model": args.model,
        "data": args.data,
        "config": args.config,
        "iter": args.iter,
        "burnin": args.burnin,
        "chains": args.chains,
        "seed": args.seed,
        "out": args.out,
    }
    inputs = [args.data] + ([args.config] if args.config else [])
    _report_outputs("fit", flags, args.seed, inputs, outputs)
    print(f"metric rhat_max {rhat_max if np.isfinite(rhat_max) else float('nan'):.17g}")
    if np.isfinite(rhat_max) and rhat_max > _RHAT_LIMIT:
        print(
            f"error: split R-hat {rhat_max:.4f} exceeds {_RHAT_LIMIT}; "
            "draws written but not trusted",
            file=sys.stderr,
        )
        return _EXIT_NONCONVERGED
    return _EXIT_OK


def _fit_parametric(model, data, kw, chain) -> DrawsMatrix:
    if model == "linear":
        return fit_linear(data, LinearModelSpec(**kw), chain)
    if model == "dose":
        n_levels = kw.pop("n_levels", int(round(float(np.max(data.a)))))
        tau1 = kw.pop("tau1", 10.0)
        tauk = kw.pop("tauk", 1.0)
        spec = DoseModelSpec(
            n_levels=n_levels, tau=(tau1,) + (tauk,) * (n_levels - 1), **kw
        )
        return fit_dose_ar1(data, spec, chain)
    if model == "partialpool":
        return fit_partial_pool(data, PartialPoolSpec(**kw), chain)
    return fit_sequential(data, ShrinkageSpec(**kw), chain)


def _fit_bnp(model, data, kw, chain, seed):
    """Fit a nonparametric model and predict both arms at the observed rows.

    The prediction matrix is (M, 2n): the first n columns are fitted values
    with treatment forced to 1, the next n with treatment forced to 0, both
    at the observed confounder rows.
    """
    n = data.n
    test = np.vstack(
        [
            np.column_stack([np.ones(n), data.confounders]),
            np.column_stack([np.zeros(n), data.confounders]),
        ]
    )
    if model == "dp":
        cfg = DPConfig.from_data(data, kinds=_dp_kinds(kw.pop("kinds", None)), **kw)
        fit = dp_fit(data, cfg, chain)
        predictions = dp_predict(fit, cfg, test, RngHandle(seed, _PREDICT_STREAM))
        draws = DrawsMatrix(
            names=["alpha", "n_clusters"],
            values=np.column_stack([fit.alpha, fit.n_clusters.astype(float)]),
            chain=fit.chain,
            iteration=fit.iteration,
        )
        return draws, predictions
    if model == "gp":
        fit = gp_fit_predict(data, test, GPConfig(**kw), chain)
        draws = DrawsMatrix(
            names=["eta", "rho", "noise"],
            values=np.column_stack([fit.eta, fit.rho, fit.noise]),
            chain=fit.chain,
            iteration=fit.iteration,
        )
        return draws, fit.mu
    fit = bart_fit_predict(data, test, BARTConfig(**kw), chain)
    draws = DrawsMatrix(
        names=["sigma"],
        values=fit.sigma[:, None],
        chain=fit.chain,
        iteration=fit.iteration,
    )
    return draws, fit.mu


def _dp_kinds(raw):
    if raw is None:
        return None
    return [tok.strip() for tok in raw.split(",")]


def _write_predictions(path, predictions, chain, iteration) -> None:
    predictions = np.asarray(predictions, dtype=float)
    names = [f"yhat_{j + 1}" for j in range(predictions.shape[1])]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("chain,iter," + ",".join(names) + "\n")
        for r in range(predictions.shape[0]):
            row = ",".join("%.17g" % v for v in predictions[r])
            fh.write(f"{chain[r]},{iteration[r]},{row}\n")


def _diagnostics(draws: DrawsMatrix):
    """Per-parameter split R-hat and ESS; R-hat needs at least two chains."""
    per_param = {}
    rhat_max = -np.inf
    multi_chain = draws.n_chains >= 2
    for name in draws.names:
        rhat = split_rhat(draws, name) if multi_chain else None
        ess = effective_sample_size(draws, name)
        per_param[name] = {
            "rhat": None if rhat is None or not np.isfinite(rhat) else rhat,
            "ess": None if not np.isfinite(ess) else ess,
        }
        if rhat is not None and np.isfinite(rhat):
            rhat_max = max(rhat_max, rhat)
    payload = {
        "params": per_param,
        "rhat_max": None if not np.isfinite(rhat_max) else rhat_max,
        "n_chains": draws.n_chains,
        "n_draws": draws.n_draws,
    }
    return payload, rhat_max


def _cmd_effects(args) -> int:
    rng = RngHandle(args.seed, 0)
    inputs = [args.draws]
    if args.mode == "marginal":
        est = _effects_marginal(args, rng)
    elif args.mode == "stratified":
        if args.data is None:
            raise InvalidParameterError("stratified mode needs --data")
        inputs.append(args.data)
        return _effects_stratified(args, rng, inputs)
    elif args.mode in ("gcomp-static", "gcomp-dynamic"):
        if not args.regime or len(args.regime) != 2:
            raise InvalidParameterError(
                f"{args.mode} mode needs exactly two --regime files"
            )
        inputs.extend(args.regime)
        draws = DrawsMatrix.from_csv(args.draws)
        regimes = [Regime.from_file(p) for p in args.regime]
        if args.mode == "gcomp-static":
            est = gcomp_static(draws, regimes, args.b, rng)
        else:
            est = gcomp_dynamic(draws, regimes[0], regimes[1], args.b, rng)
    else:
        if args.sens_prior is None:
            raise InvalidParameterError("sensitivity mode needs --sens-prior")
        psi = _load_estimand(args.draws)
        est = sensitivity_perturb(psi, _parse_sens_prior(args.sens_prior), rng)

    est.to_csv(args.out)
    spath = _sibling(args.out, ".summary.json")
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(est.summary(), fh, indent=2)
        fh.write("\n")
    _report_outputs(
        "effects",
        _effects_flags(args),
        args.seed,
        inputs,
        [("draws", args.out), ("summary", spath)],
    )
    return _EXIT_OK


def _effects_flags(args) -> dict:
    return {
        "draws": args.draws,
        "data": args.data,
        "mode": args.mode,
        "regime": args.regime,
        "sens-prior": args.sens_prior,
        "B": args.b,
        "seed": args.seed,
        "out": args.out,
    }


def _effects_marginal(args, rng) -> EstimandDraws:
    names, mat = _read_table(args.draws)
    if any(nm.startswith("yhat_") for nm in names):
        return _marginal_from_predictions(args.draws, names, mat, rng)
    if "theta" in names:
        return marginal_ate_from_linear(DrawsMatrix.from_csv(args.draws))
    raise SchemaError(
        f"{args.draws}: marginal mode needs a linear-model draws file "
        "(theta column) or a predictions file (yhat_* columns)"
    )


def _marginal_from_predictions(path, names, mat, rng) -> EstimandDraws:
    if names[:2] != ["chain", "iter"]:
        raise SchemaError(f"{path}: predictions file must start with chain,iter")
    n_cols = len(names) - 2
    if n_cols % 2:
        raise SchemaError(
            f"{path}: {n_cols} prediction columns; need an even count "
            "(treated block then control block)"
        )
    half = n_cols // 2
    values = mat[:, 2:]
    return bnp_ate(
        values[:, :half],
        values[:, half:],
        rng,
        chain=mat[:, 0].astype(int),
        iteration=mat[:, 1].astype(int),
    )


def _effects_stratified(args, rng, inputs) -> int:
    draws = DrawsMatrix.from_csv(args.draws)
    data = ObservedDataset.from_csv(args.data)
    per_stratum = standardize_stratified_or(draws, data, rng)
    strata = sorted(per_stratum)
    first = per_stratum[strata[0]]
    csv_names = [f"or_v{v}" for v in strata]
    values = np.column_stack([per_stratum[v].values for v in strata])
    DrawsMatrix(
        names=csv_names, values=values, chain=first.chain, iteration=first.iteration
    ).to_csv(args.out)
    spath = _sibling(args.out, ".summary.json")
    summary = {f"or_v{v}": per_stratum[v].summary() for v in strata}
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    _report_outputs(
        "effects",
        _effects_flags(args),
        args.seed,
        inputs,
        [("draws", args.out), ("summary", spath)],
    )
    return _EXIT_OK


def _load_estimand(path) -> EstimandDraws:
    names, _ = _read_table(path)
    if names != ["chain", "iter", "value"]:
        raise SchemaError(
            f"{path}: sensitivity mode needs an estimand draws file with "
            f"columns chain,iter,value, got {names}"
        )
    return EstimandDraws.from_csv(path)


def _parse_sens_prior(raw: str) -> SensitivitySpec:
    """Parse a bias-prior token: name:param[:param][:negated]."""
    tokens = raw.split(":")
    negated = False
    if tokens and tokens[-1] == "negated":
        negated = True
        tokens = tokens[:-1]
    if not tokens:
        raise InvalidParameterError(f"empty sensitivity prior {raw!r}")
    name, params = tokens[0], tokens[1:]
    try:
        values = [float(tok) for tok in params]
    except ValueError:
        raise InvalidParameterError(f"non-numeric parameter in prior {raw!r}")
    if name == "pointmass" and len(values) == 1:
        prior = point_mass(values[0])
    elif name == "normal" and len(values) == 2:
        prior = normal(values[0], values[1])
    elif name == "gamma" and len(values) == 2:
        prior = gamma_dist(values[0], values[1])
    else:
        raise InvalidParameterError(
            f"unsupported sensitivity prior {raw!r}; use pointmass:v, "
            "normal:mean:sd, or gamma:shape:rate, optionally ':negated'"
        )
    return SensitivitySpec(prior=prior, negated=negated)


def _cmd_summarize(args) -> int:
    names, mat = _read_table(args.draws)
    if names[:2] != ["chain", "iter"]:
        raise SchemaError(f"{args.draws}: draws file must start with chain,iter columns")
    summary = {}
    for j, name in enumerate(names[2:], start=2):
        col = mat[:, j]
        q = np.quantile(col, [0.025, 0.5, 0.975])
        summary[name] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0,
            "q025": float(q[0]),
            "q50": float(q[1]),
            "q975": float(q[2]),
        }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    flags = {"draws": args.draws, "out": args.out}
    _report_outputs("summarize", flags, 0, [args.draws], [("summary", args.out)])
    return _EXIT_OK


def _cmd_replay(args) -> int:
    man = RunManifest.from_json(args.manifest)
    for path, digest in man.inputs.items():
        if not Path(path).exists():
            print(f"error: replay input missing: {path}", file=sys.stderr)
            return _EXIT_USAGE
        if file_digest(path) != digest:
            print(f"error: replay input changed since recording: {path}", file=sys.stderr)
            return _EXIT_USAGE
    rc = main(man.argv())
    if rc not in (_EXIT_OK, _EXIT_NONCONVERGED):
        return rc
    clean = True
    for path, digest in man.outputs.items():
        same = Path(path).exists() and file_digest(path) == digest
        clean = clean and same
        print(f"replay {'ok' if same else 'mismatch'} {path}")
    return _EXIT_OK if clean else 1
