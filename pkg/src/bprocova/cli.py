"""Command-line interface.

Subcommands: analyze, simulate, calibrate, prior-ess, sbc. Machine
output is JSON on stdout (or --out); a short human-readable block goes
to stderr. Exit codes: 0 success, 1 I/O, 2 validation, 3 numerical.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from importlib import metadata

import numpy as np

from . import __version__
from .data import build_design, load_historical_csv, load_trial_csv
from .errors import (
    BProcovaError,
    ChainDiverged,
    DegenerateFit,
    DegenerateResample,
    NoFeasibleGamma,
    NonFinite,
    NonFiniteDensity,
    NumericalFailure,
    ParseError,
    RankDeficient,
    UndefinedPriorESS,
    UndefinedVariance,
    ValidationError,
)
from .frequentist import DEFAULT_HC_VARIANT, HC_VARIANTS, procova_ci_and_test, procova_fit
from .posterior import ess, sample_size_reduction
from .prior import (
    DEFAULT_FLAT_K,
    DEFAULT_K1,
    FlatComponent,
    MixturePrior,
    WeightPrior,
    bootstrap_delta_variance,
    calibrate_k_hyperparameters,
    fit_informative_component,
    mixture_prior_from_dict,
    mixture_prior_to_dict,
    prior_beta1_variance,
    prior_effective_sample_size,
)
from .sampler import (
    GibbsConfig,
    balanced_covariate_generator,
    batch_means_se,
    export_chain_csv,
    gibbs_run,
    sbc_validate,
    summarize,
)
from .simulation import (
    ScenarioConfig,
    run_scenario,
    scenario_config_from_dict,
    scenario_result_to_dict,
    type1_error_curve,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

SEED_ENV_VAR = "PROCOVA_SEED"
DEFAULT_SEED = 0

_VALIDATION_ERRORS = (ParseError, ValidationError, NonFinite, RankDeficient,
                      DegenerateFit, NoFeasibleGamma)
_NUMERICAL_ERRORS = (NumericalFailure, ChainDiverged, NonFiniteDensity,
                     UndefinedVariance, UndefinedPriorESS, DegenerateResample)


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"{SEED_ENV_VAR} must be an integer") from exc
    return DEFAULT_SEED


def _emit(doc: dict, out_path: str | None) -> None:
    text = json.dumps(doc, indent=2)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _note(*lines: str) -> None:
    for line in lines:
        print(line, file=sys.stderr)


def _run_metadata(seed: int, **extra) -> dict:
    meta = {
        "seed": seed,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": metadata.version("scipy"),
    }
    meta.update(extra)
    return meta


def _add_seed_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help=f"RNG seed (falls back to ${SEED_ENV_VAR}, then {DEFAULT_SEED})")


def _build_prior_from_args(args, hist) -> MixturePrior:
    if args.prior_json:
        with open(args.prior_json, encoding="utf-8") as fh:
            return mixture_prior_from_dict(json.load(fh))
    if hist is None:
        raise ValidationError("either a historical CSV or --prior-json is required")
    if args.k0_mode == "explicit":
        if args.k0 is None or args.k2 is None:
            raise ValidationError("--k0 and --k2 are required with --k0-mode explicit")
        comp = fit_informative_component(
            hist, k0_mode="explicit", explicit_k=(args.k0, args.k1, args.k2)
        )
    else:
        comp = fit_informative_component(hist, k0_mode=args.k0_mode, k1=args.k1)
    return MixturePrior(
        informative=comp,
        flat=FlatComponent(k=args.k, nu0=args.nu0, sigma0_sq=args.sigma0_sq),
        weight=WeightPrior(alpha1=args.alpha1, alpha2=args.alpha2),
    )


def cmd_analyze(args) -> int:
    seed = _resolve_seed(args.seed)
    trial = load_trial_csv(args.trial_csv, y_col=args.y_col, w_col=args.w_col,
                           m_col=args.m_col)
    hist = None
    if args.historical_csv:
        hist = load_historical_csv(args.historical_csv, y_col=args.hist_y_col,
                                   m_col=args.hist_m_col)
    prior = _build_prior_from_args(args, hist)
    design = build_design(trial)

    chain_seeds = [int(s.generate_state(1, dtype=np.uint64)[0])
                   for s in np.random.SeedSequence(seed).spawn(args.chains)]
    all_draws = []
    for chain_seed in chain_seeds:
        config = GibbsConfig(
            iterations=args.iterations, burn_in=args.burn_in, seed=chain_seed,
            omega_init=args.omega_init, omega_fixed=args.omega_fixed,
        )
        draws = gibbs_run(design, prior, config)
        all_draws.extend(draws[args.burn_in:])
    if args.chain_out:
        export_chain_csv(all_draws, args.chain_out)
    summary = summarize(all_draws, burn_in=0)

    fit = procova_fit(trial, args.hc_variant)
    (ci_lo, ci_hi), _ = procova_ci_and_test(fit)
    v1 = float(fit.hc_cov[1, 1])
    v2 = summary.beta1_var

    report = {
        "beta1": {
            "mean": summary.beta1_mean,
            "sd": math.sqrt(v2),
            "ci95": [summary.beta1_q025, summary.beta1_q975],
            "prob_positive": summary.prob_beta1_positive,
            "mc_se": summary.mc_se_beta1,
        },
        "omega": {
            "posterior_mean": summary.omega_mean,
            "informative_weight": summary.z_informative_fraction,
        },
        "ess": {
            "ess": ess(trial.n, v1, v2),
            "ess_minus_n": sample_size_reduction(trial.n, v1, v2),
            "v1_procova_hc": v1,
            "v2_posterior": v2,
        },
        "procova": {
            "beta1": fit.beta1,
            "hc_se": fit.hc_se_beta1,
            "ci95": [ci_lo, ci_hi],
            "hc_variant": fit.hc_variant,
        },
        "prior": mixture_prior_to_dict(prior),
        "meta": _run_metadata(
            seed, iterations=args.iterations, burn_in=args.burn_in,
            chains=args.chains, omega_fixed=args.omega_fixed,
            n=trial.n, n_hist=None if hist is None else hist.n,
        ),
    }
    _emit(report, args.out)
    _note(
        f"beta1 posterior mean {summary.beta1_mean:.6g} "
        f"(sd {math.sqrt(v2):.6g}, 95% CrI [{summary.beta1_q025:.6g}, {summary.beta1_q975:.6g}])",
        f"informative component weight {summary.z_informative_fraction:.3f}, "
        f"ESS {report['ess']['ess']:.1f} (N = {trial.n})",
    )
    return EXIT_OK


def _load_scenarios(path) -> list[dict]:
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError as exc:  # py3.10
            raise ValidationError("TOML configs need Python >= 3.11; use JSON") from exc
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    else:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    if isinstance(doc, dict) and "scenarios" in doc:
        return list(doc["scenarios"])
    if isinstance(doc, list):
        return doc
    return [doc]


def _write_records_csv(records, path) -> None:
    columns = ["replicate", "beta1_posterior_mean", "v2_posterior_var",
               "procova_beta1", "v1_procova_hc_var", "variance_reduction_pct",
               "ess", "ess_minus_n", "ess_ratio", "omega_mean",
               "informative_weight", "reject_null", "k0", "k2"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for rec in records:
            writer.writerow([getattr(rec, c) for c in columns])


def cmd_simulate(args) -> int:
    seed = args.seed
    scenario_docs = _load_scenarios(args.config)
    os.makedirs(args.out_dir, exist_ok=True)
    index_doc = []
    for i, doc in enumerate(scenario_docs):
        config = scenario_config_from_dict(doc)
        if seed is not None:
            config = replace(config, seed=seed + i)
        result = run_scenario(config, n_jobs=args.threads)
        base = os.path.join(args.out_dir, f"scenario_{i:03d}")
        with open(base + ".json", "w", encoding="utf-8") as fh:
            json.dump(scenario_result_to_dict(result), fh, indent=2)
        _write_records_csv(result.records, base + "_replicates.csv")
        index_doc.append({
            "scenario": i,
            "result_json": base + ".json",
            "replicates_csv": base + "_replicates.csv",
            "type1_error_rate": result.type1_error_rate,
            "variance_reduction_median": result.variance_reduction.median,
            "avg_posterior_omega": result.avg_posterior_omega,
        })
        _note(f"scenario {i}: median variance reduction "
              f"{result.variance_reduction.median:.2f}%, "
              f"type I error {result.type1_error_rate:.3f}")
    _emit({"scenarios": index_doc, "meta": _run_metadata(seed if seed is not None else -1)},
          args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    seed = _resolve_seed(args.seed)
    hist = load_historical_csv(args.historical_csv, y_col=args.hist_y_col,
                               m_col=args.hist_m_col)
    gamma_grid = sorted(args.gamma_grid)
    if not gamma_grid:
        raise ValidationError("gamma grid must not be empty")

    comp = fit_informative_component(hist, k0_mode="inverse_N", k1=args.k1)
    var_delta_raw = bootstrap_delta_variance(hist, args.trial_n,
                                             args.bootstrap_j, seed)
    # simulation runs at unit noise variance, so shift quantities are
    # expressed relative to the historical residual scale
    var_delta_scaled = var_delta_raw / comp.s2_H
    max_shift = args.shift_sd_max * math.sqrt(var_delta_scaled)
    shifts = np.linspace(0.0, max_shift, args.shift_points)
    rho_hat = min(abs(float(np.corrcoef(hist.prognostic_scores, hist.outcomes)[0, 1])),
                  0.9)

    configs = [
        ScenarioConfig(
            trial_n=args.trial_n, hist_n=hist.n, rho_h=rho_hat,
            bias_shift=float(shift), replicates=args.replicates,
            seed=seed + 1 + i, var_delta=var_delta_scaled,
            iterations=args.iterations, burn_in=args.burn_in,
        )
        for i, shift in enumerate(shifts)
    ]
    table = type1_error_curve(configs, gamma_grid, n_jobs=args.threads)

    chosen = None
    for gamma in gamma_grid:
        worst = max(row["type1_error_rate"] for row in table
                    if row["gamma"] == gamma)
        if worst <= args.target_alpha:
            chosen = gamma
            break
    if chosen is None:
        raise NoFeasibleGamma(
            f"no gamma in {gamma_grid} keeps the Type I error at or below "
            f"{args.target_alpha} for shifts up to {max_shift:.4g}"
        )

    k0, k2 = calibrate_k_hyperparameters(comp, chosen, var_delta_raw)
    calibrated = MixturePrior(
        informative=replace_component_k(comp, k0, k2),
        flat=FlatComponent(k=args.k, nu0=args.nu0, sigma0_sq=args.sigma0_sq),
        weight=WeightPrior(alpha1=args.alpha1, alpha2=args.alpha2),
    )
    report = {
        "chosen_gamma": chosen,
        "var_delta": var_delta_raw,
        "var_delta_scaled": var_delta_scaled,
        "max_shift_scaled": max_shift,
        "table": table,
        "prior": mixture_prior_to_dict(calibrated),
        "meta": _run_metadata(
            seed, trial_n=args.trial_n, n_hist=hist.n,
            bootstrap_j=args.bootstrap_j, target_alpha=args.target_alpha,
            rho_estimate=rho_hat,
        ),
    }
    _emit(report, args.out)
    _note(f"chosen gamma {chosen} (K0 = {k0:.6g}, K2 = {k2:.6g}); "
          f"Var(Delta) = {var_delta_raw:.6g}")
    return EXIT_OK


def replace_component_k(comp, k0: float, k2: float):
    """Informative component with calibrated K0 and K2 substituted."""
    from .prior import InformativeComponent

    return InformativeComponent(
        beta0_hat_H=comp.beta0_hat_H, beta2_hat_H=comp.beta2_hat_H,
        s2_H=comp.s2_H, df_H=comp.df_H,
        K=np.array([k0, comp.K[1], k2]), ss_m_H=comp.ss_m_H,
    )


def cmd_prior_ess(args) -> int:
    with open(args.prior_json, encoding="utf-8") as fh:
        prior = mixture_prior_from_dict(json.load(fh))
    var = prior_beta1_variance(prior, args.omega)
    if math.isinf(var):
        report = {"omega": args.omega, "s_sq": args.s_sq,
                  "prior_beta1_variance": "infinite", "prior_ess": "undefined"}
        _emit(report, args.out)
        _note("prior variance of the treatment coefficient is infinite; "
              "prior ESS undefined")
        return EXIT_OK
    n_equiv = prior_effective_sample_size(prior, args.omega, args.s_sq)
    report = {"omega": args.omega, "s_sq": args.s_sq,
              "prior_beta1_variance": var, "prior_ess": n_equiv}
    _emit(report, args.out)
    _note(f"prior ESS {n_equiv:.2f} at omega={args.omega}")
    return EXIT_OK


def cmd_sbc(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.prior_json:
        with open(args.prior_json, encoding="utf-8") as fh:
            prior = mixture_prior_from_dict(json.load(fh))
    else:
        # self-contained moderate-tailed default, proper in every factor
        from .prior import InformativeComponent

        prior = MixturePrior(
            informative=InformativeComponent(
                beta0_hat_H=0.5, beta2_hat_H=1.0, s2_H=0.8, df_H=30,
                K=np.array([0.05, 2.0, 0.1]), ss_m_H=30.0,
            ),
            flat=FlatComponent(k=25.0, nu0=5.0, sigma0_sq=2.0),
            weight=WeightPrior(),
        )
    config = GibbsConfig(iterations=args.iterations, burn_in=args.burn_in,
                         sigma_scale_factor=args.sigma_scale_factor)
    result = sbc_validate(
        prior, balanced_covariate_generator(args.n), args.replications,
        rank_bins=args.rank_bins, config=config, seed=seed,
    )
    report = {
        "statistic": result.statistic,
        "p_value": result.p_value,
        "counts": result.counts.tolist(),
        "replications": result.replications,
        "rank_bins": args.rank_bins,
        "meta": _run_metadata(seed, n=args.n, iterations=args.iterations,
                              sigma_scale_factor=args.sigma_scale_factor),
    }
    _emit(report, args.out)
    _note(f"SBC chi-square {result.statistic:.2f}, p = {result.p_value:.4f}")
    return EXIT_OK


def _add_prior_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--prior-json", default=None,
                        help="load the mixture prior from a JSON document")
    parser.add_argument("--k0-mode", default="inverse_N",
                        choices=["inverse_N", "inverse_sqrt_N", "explicit"])
    parser.add_argument("--k0", type=float, default=None)
    parser.add_argument("--k1", type=float, default=DEFAULT_K1)
    parser.add_argument("--k2", type=float, default=None)
    parser.add_argument("--k", type=float, default=DEFAULT_FLAT_K,
                        help="flat component coefficient variance factor")
    parser.add_argument("--nu0", type=float, default=1.0)
    parser.add_argument("--sigma0-sq", type=float, default=1.0)
    parser.add_argument("--alpha1", type=float, default=1.0)
    parser.add_argument("--alpha2", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bprocova",
        description="Treatment-effect inference with dynamic borrowing of "
                    "historical control data via prognostic scores",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="fit both analyses on real CSV data")
    analyze.add_argument("trial_csv")
    analyze.add_argument("historical_csv", nargs="?", default=None)
    analyze.add_argument("--y-col", default="y")
    analyze.add_argument("--w-col", default="w")
    analyze.add_argument("--m-col", default="m")
    analyze.add_argument("--hist-y-col", default="y")
    analyze.add_argument("--hist-m-col", default="m")
    _add_prior_flags(analyze)
    analyze.add_argument("--iterations", type=int, default=1000)
    analyze.add_argument("--burn-in", type=int, default=100)
    analyze.add_argument("--chains", type=int, default=1)
    analyze.add_argument("--omega-init", type=float, default=0.5)
    analyze.add_argument("--omega-fixed", type=float, default=None)
    analyze.add_argument("--hc-variant", default=DEFAULT_HC_VARIANT,
                         choices=list(HC_VARIANTS))
    analyze.add_argument("--chain-out", default=None,
                         help="write the pooled chain to this CSV")
    analyze.add_argument("--out", default=None)
    _add_seed_flag(analyze)
    analyze.set_defaults(func=cmd_analyze)

    simulate = sub.add_parser("simulate", help="run simulation scenarios")
    simulate.add_argument("config", help="JSON or TOML scenario document")
    simulate.add_argument("out_dir")
    simulate.add_argument("--threads", type=int, default=1)
    simulate.add_argument("--out", default=None)
    _add_seed_flag(simulate)
    simulate.set_defaults(func=cmd_simulate)

    calibrate = sub.add_parser(
        "calibrate", help="select the historical discount from simulated "
                          "operating characteristics")
    calibrate.add_argument("historical_csv")
    calibrate.add_argument("--hist-y-col", default="y")
    calibrate.add_argument("--hist-m-col", default="m")
    calibrate.add_argument("--trial-n", type=int, required=True)
    calibrate.add_argument("--gamma-grid", type=float, nargs="+", required=True)
    calibrate.add_argument("--target-alpha", type=float, default=0.10)
    calibrate.add_argument("--shift-sd-max", type=float, default=4.0)
    calibrate.add_argument("--shift-points", type=int, default=3)
    calibrate.add_argument("--bootstrap-j", type=int, default=1000)
    calibrate.add_argument("--replicates", type=int, default=200)
    calibrate.add_argument("--iterations", type=int, default=1000)
    calibrate.add_argument("--burn-in", type=int, default=100)
    calibrate.add_argument("--k1", type=float, default=DEFAULT_K1)
    calibrate.add_argument("--k", type=float, default=DEFAULT_FLAT_K)
    calibrate.add_argument("--nu0", type=float, default=1.0)
    calibrate.add_argument("--sigma0-sq", type=float, default=1.0)
    calibrate.add_argument("--alpha1", type=float, default=1.0)
    calibrate.add_argument("--alpha2", type=float, default=1.0)
    calibrate.add_argument("--threads", type=int, default=1)
    calibrate.add_argument("--out", default=None)
    _add_seed_flag(calibrate)
    calibrate.set_defaults(func=cmd_calibrate)

    prior_ess = sub.add_parser("prior-ess",
                               help="prior effective sample size of a prior document")
    prior_ess.add_argument("prior_json")
    prior_ess.add_argument("--omega", type=float, required=True)
    prior_ess.add_argument("--s-sq", type=float, required=True)
    prior_ess.add_argument("--out", default=None)
    prior_ess.set_defaults(func=cmd_prior_ess)

    sbc = sub.add_parser("sbc", help="simulation-based calibration of the sampler")
    sbc.add_argument("--prior-json", default=None)
    sbc.add_argument("--replications", type=int, default=500)
    sbc.add_argument("--n", type=int, default=25)
    sbc.add_argument("--rank-bins", type=int, default=20)
    sbc.add_argument("--iterations", type=int, default=1000)
    sbc.add_argument("--burn-in", type=int, default=100)
    sbc.add_argument("--sigma-scale-factor", type=float, default=1.0)
    sbc.add_argument("--out", default=None)
    _add_seed_flag(sbc)
    sbc.set_defaults(func=cmd_sbc)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        _note(f"error: {exc}")
        return EXIT_VALIDATION
    except _NUMERICAL_ERRORS as exc:
        _note(f"numerical error: {exc}")
        return EXIT_NUMERICAL
    except OSError as exc:
        _note(f"i/o error: {exc}")
        return EXIT_IO
    except BProcovaError as exc:
        _note(f"error: {exc}")
        return EXIT_VALIDATION


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
