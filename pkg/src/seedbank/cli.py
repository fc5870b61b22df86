"""Command-line entry point: ``seedbank <subcommand> ...``."""
from __future__ import annotations

import argparse
import sys

from . import io
from .complete import estimate_complete
from .dynamics import DemographicParams, observe, simulate
from .errors import SeedbankError
from .experiments import ExperimentConfig, config_dict, run_table_experiment
from .incomplete import FitOptions, fit_phi_full, fit_phi_reduced, identifiable_set
from .stochastic import DistributionSpec


def _params_from_args(args) -> DemographicParams:
    base = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig(deviation="none")
    values = {k: getattr(base, k) for k in ("a", "a_prime", "b", "b_prime", "c", "d", "m", "u", "sigma", "tau")}
    for key in values:
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    m, u = values.pop("m"), values.pop("u")
    offspring = DistributionSpec.negbin(m, args.offspring_var) if args.offspring_var else DistributionSpec.poisson(m)
    immigration = (
        DistributionSpec.negbin(u, args.immigration_var) if args.immigration_var else DistributionSpec.poisson(u)
    )
    return DemographicParams(offspring=offspring, immigration=immigration, **values)


def cmd_simulate(args):
    params = _params_from_args(args)
    data = simulate(params, args.n, args.K, args.seed)
    io.write_complete_csv(data, args.out)
    if args.observed_out:
        io.write_observed_csv(observe(data), args.observed_out)


def cmd_observe(args):
    io.write_observed_csv(observe(io.read_complete_csv(args.input)), args.out)


def cmd_estimate_complete(args):
    data = io.read_complete_csv(args.input)
    est = estimate_complete(data)
    io.write_estimate_csv(est.rows(), args.out)
    if args.report:
        io.write_kv_report(
            {
                "method": "complete",
                "K": est.K,
                "n": est.n,
                "estimates": {name: value for name, value, _ in est.rows()},
                "std_errors": {name: se for name, _, se in est.rows()},
                "cov_a_a_prime": est.cov_aa,
                "cov_b_b_prime": est.cov_bb,
                "cov_m_u": est.cov_mu,
                "warnings": est.warnings,
            },
            args.report,
        )


def cmd_estimate_incomplete(args):
    data = io.read_observed_csv(args.input)
    opts = FitOptions(seed=args.seed)
    if args.mode == "reduced":
        if args.a is None or args.g is None:
            raise SeedbankError("reduced mode needs --a and --g (the known a and a'b/b')")
        rep = fit_phi_reduced(data, args.a, args.g, options=opts)
    else:
        rep = fit_phi_full(data, options=opts)
    io.write_estimate_csv(rep.rows(), args.out)
    if args.report:
        io.write_kv_report(
            {
                "method": rep.method,
                "K": rep.K,
                "n": rep.n,
                "loglik": rep.loglik,
                "loglik_convention": "sum(r log Lambda - Lambda); -log r! omitted",
                "converged": rep.converged,
                "iterations": rep.iterations,
                "free_parameters": list(rep.free),
                "active_bounds": rep.active_bounds,
                "condition_number": rep.condition_number,
                "fisher": rep.fisher,
                "covariance": rep.covariance if rep.covariance is not None else "unavailable",
                "identifiable_set": rep.identifiable.lines(),
                "degenerate": rep.degenerate,
                "warnings": rep.warnings,
            },
            args.report,
        )
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)


def cmd_identifiability(args):
    for line in identifiable_set(args.n).lines():
        print(line)


def cmd_experiment(args):
    config = ExperimentConfig.from_file(args.config)
    if args.workers:
        config.workers = args.workers
    rows = run_table_experiment(config, args.out)
    if args.report:
        io.write_kv_report(
            {
                "config": config_dict(config),
                "rows": [
                    {"ratio": r.ratio, "completed": r.completed, "failures": r.failures, "flagged": r.flagged}
                    for r in rows
                ],
            },
            args.report,
        )
    for r in rows:
        if r.flagged:
            print(f"warning: ratio {r.ratio:g}: {r.failures} of {config.M} replicates failed", file=sys.stderr)


def build_parser():
    parser = argparse.ArgumentParser(prog="seedbank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate complete trajectories")
    p.add_argument("--n", type=int, default=4, help="last cycle index")
    p.add_argument("--K", type=int, default=300, help="number of populations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="complete-data CSV")
    p.add_argument("--observed-out", help="also write the observed projection here")
    p.add_argument("--config", help="config file supplying demographic parameters")
    for key in ("a", "a_prime", "b", "b_prime", "c", "d", "m", "u", "sigma", "tau"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    p.add_argument("--offspring-var", type=float, help="negative binomial offspring with this variance")
    p.add_argument("--immigration-var", type=float, help="negative binomial immigration with this variance")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("observe", help="drop the seed stages from a complete dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_observe)

    p = sub.add_parser("estimate-complete", help="estimators for fully observed data")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="parameter,estimate,std_error CSV")
    p.add_argument("--report", help="key-value diagnostics file")
    p.set_defaults(func=cmd_estimate_complete)

    p = sub.add_parser("estimate-incomplete", help="Poisson intensity MLE from (R, V, F) counts")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--mode", choices=("reduced", "full"), default="reduced")
    p.add_argument("--a", type=float, help="known a (reduced mode)")
    p.add_argument("--g", type=float, help="known a'b/b' (reduced mode)")
    p.add_argument("--seed", type=int, default=0, help="seed for multi-start perturbations")
    p.set_defaults(func=cmd_estimate_incomplete)

    p = sub.add_parser("identifiability", help="identifiable functionals for a horizon")
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_identifiability)

    p = sub.add_parser("experiment", help="run the overdispersion robustness table")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (SeedbankError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
