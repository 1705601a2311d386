"""Command-line front end: estimation on CSV files and simulation studies.

Exit codes: 0 success, 2 configuration/input error, 3 estimation error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .core import (
    ConfigurationError,
    Dataset,
    IngestionError,
    LeanGlmError,
    Link,
    load_csv,
    make_folds,
)
from .interaction import (
    estimate_interaction_indep,
    estimate_interaction_proj,
    fit_interaction_nuisances,
)
from .learners import LearnerSpec
from .main_effect import MainEffectProblem, estimate_main
from .crossfit import nuisance_main
from .simulation import (
    DiscreteJoint,
    StudyConfig,
    brute_force_estimand,
    illustration_estimand,
    oracle_limit,
    run_study,
)

_DEFAULT_CLI_FOREST = {"n_trees": 500, "min_leaf": 5}


def _add_common_estimation_args(sub):
    sub.add_argument("--input", required=True, help="input CSV path")
    sub.add_argument("--y", required=True, help="outcome column name")
    sub.add_argument("--a", required=True, help="exposure column name")
    sub.add_argument("--l", required=True, help="comma-separated covariate column names")
    sub.add_argument("--link", default="identity", choices=["identity", "log", "logit"])
    sub.add_argument("--learner", default="forest",
                     choices=["forest", "kernel", "ridge_linear", "ridge_logistic"])
    sub.add_argument("--K", type=int, default=10, help="number of cross-fitting folds")
    sub.add_argument("--seed", type=int, default=1)
    sub.add_argument("--output", default=None, help="write the JSON report here as well")
    sub.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leanglm")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    est_main = subparsers.add_parser("estimate-main", help="main-effect estimation")
    _add_common_estimation_args(est_main)

    est_int = subparsers.add_parser("estimate-interaction", help="effect-modification estimation")
    _add_common_estimation_args(est_int)
    est_int.add_argument("--a2", required=True, help="second exposure column name")
    est_int.add_argument("--assume-indep", action="store_true",
                         help="use the conditional-independence estimator instead of the "
                              "projection estimator")

    sim = subparsers.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--output", required=True, help="summary CSV path")
    sim.add_argument("--threads", type=int, default=None,
                     help="override the config's replicate thread count")

    oracle = subparsers.add_parser("oracle", help="estimand targets / estimator limits")
    oracle.add_argument("--config", required=True,
                        help="JSON: {mode: oracle_limit|illustration|brute_force, ...}")
    return parser


def _learner_spec(kind: str, seed: int) -> LearnerSpec:
    if kind == "forest":
        return LearnerSpec(kind="forest", hyperparams=dict(_DEFAULT_CLI_FOREST), seed=seed)
    if kind == "kernel":
        return LearnerSpec(kind="kernel", hyperparams={"bandwidth": "cv"}, seed=seed)
    return LearnerSpec(kind=kind, hyperparams={"penalty": "cv"}, seed=seed)


def _emit_report(report_json: str, output: str | None) -> None:
    print(report_json)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(report_json + "\n")


def _cmd_estimate_main(args) -> int:
    schema = {"y": args.y, "a1": args.a, "l": [c for c in args.l.split(",") if c]}
    data = load_csv(args.input, schema)
    link = Link(args.link)
    spec = _learner_spec(args.learner, args.seed)
    plan = make_folds(data.n, args.K, args.seed)
    nuis = nuisance_main(data, link, spec, spec, spec, plan)
    report = estimate_main(MainEffectProblem(data=data, link=link, nuis=nuis))
    _emit_report(report.to_json(), args.output)
    return 0


def _cmd_estimate_interaction(args) -> int:
    schema = {"y": args.y, "a1": args.a, "a2": args.a2,
              "l": [c for c in args.l.split(",") if c]}
    data = load_csv(args.input, schema)
    link = Link(args.link)
    spec = _learner_spec(args.learner, args.seed)
    plan = make_folds(data.n, args.K, args.seed)
    if args.assume_indep:
        nuis = fit_interaction_nuisances(data, link, spec, plan)
        report = estimate_interaction_indep(data, link, nuis)
    else:
        report = estimate_interaction_proj(data, link, spec, plan)
    _emit_report(report.to_json(), args.output)
    return 0


def _cmd_simulate(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        config = StudyConfig.from_json(fh.read())
    if args.threads is not None:
        import dataclasses

        config = dataclasses.replace(config, threads=args.threads)
    result = run_study(config)
    result.to_csv(args.output)
    for row in result.rows:
        s = row.summary
        print(
            f"{config.name} {row.estimator} n={row.n}: bias={s['bias']:.4g} "
            f"emp_sd={s['emp_sd']:.4g} mean_se={s['mean_se']:.4g} "
            f"coverage={s['coverage_pct']:.1f}% (target {row.target:.4g})"
        )
    return 0


def _cmd_oracle(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    mode = cfg.get("mode")
    if mode == "oracle_limit":
        res = oracle_limit(
            cfg["estimator"],
            int(cfg["exp_id"]),
            n_large=int(cfg.get("n_large", 50_000)),
            reps=int(cfg.get("reps", 100)),
            seed=int(cfg.get("seed", 0)),
            sigma_seed=int(cfg.get("sigma_seed", 0)),
        )
    elif mode == "illustration":
        res = illustration_estimand(bool(cfg.get("code_variant", False)))
    elif mode == "brute_force":
        joint = DiscreteJoint(
            a_levels=cfg["a_levels"],
            a2_levels=cfg.get("a2_levels"),
            l_levels=cfg["l_levels"],
            pmf=cfg["pmf"],
            mean_y=cfg["mean_y"],
        )
        value = brute_force_estimand(joint, cfg["which"], Link(cfg.get("link", "identity")))
        print(json.dumps({"schema_version": 1, "value": value,
                          "provenance": "exact enumeration"}))
        return 0
    else:
        raise ConfigurationError(f"unknown oracle mode '{mode}'")
    print(json.dumps({"schema_version": 1, "value": res.value, "mc_se": res.mc_se,
                      "provenance": res.provenance}))
    return 0


def run_cli(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if args.subcommand == "estimate-main":
            return _cmd_estimate_main(args)
        if args.subcommand == "estimate-interaction":
            return _cmd_estimate_interaction(args)
        if args.subcommand == "simulate":
            return _cmd_simulate(args)
        return _cmd_oracle(args)
    except (ConfigurationError, IngestionError, FileNotFoundError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LeanGlmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))
