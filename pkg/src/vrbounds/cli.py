"""Command line entry point: ``vrbounds <subcommand> [options]``.

Exit codes: 0 success, 1 a verification or gradient check failed,
2 configuration or usage error, 3 divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .concentration import monte_carlo_staleness, staleness_bound_iid, staleness_bound_markov
from .config import SCHEMA_VERSION, load_config, parse_config
from .errors import ConfigError, DivergenceError, HorizonExceeded, InvalidArgument, InvalidChain
from .problems import check_gradients, problem_from_spec
from .samplers import analyze_mixing, load_transition

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

DEFAULT_VERIFY_CONFIG = json.dumps({
    "problem": {"family": "quadratic", "n": 20, "d": 5, "kappa": 10, "seed": 7},
    "sampler": {"kind": "iid_uniform"},
    "run": {"algorithm": "saga", "iterations": 2000, "delta": 0.05},
    "diagnostics": {"unbiasedness_checkpoints": 20},
    "replications": 20,
    "base_seed": 0,
})


def _emit(obj, args, filename=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if args.out and filename:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / filename).write_text(text + "\n")
    if not args.quiet:
        print(text)


def _load(args, default_text=None):
    if args.config:
        cfg = load_config(args.config)
    elif default_text is not None:
        cfg = parse_config(default_text)
    else:
        raise ConfigError("--config is required for this subcommand")
    if args.seed is not None:
        cfg.base_seed = args.seed
    return cfg


def cmd_run(args):
    cfg = _load(args)
    problem, traces = harness.run_replications(cfg)
    summary = harness.write_run_outputs(cfg, problem, traces, args.out or cfg.output.dir)
    if not args.quiet:
        print(json.dumps({"resolved": summary["resolved"], "replications": summary["replications"]},
                         indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args):
    if args.acceptance:
        from .acceptance import run_all

        results = run_all(args.criteria)
        report = {
            "schema_version": SCHEMA_VERSION,
            "criteria": {str(c.number): {"title": c.title, "passed": c.passed, "detail": c.detail}
                         for c in results},
            "all_passed": all(c.passed for c in results),
        }
        _emit(report, args, "acceptance.json")
        return EXIT_OK if report["all_passed"] else EXIT_FAIL
    cfg = _load(args, DEFAULT_VERIFY_CONFIG)
    if args.conditioning:
        cfg.diagnostics.conditioning = args.conditioning
    outcome = harness.verify(cfg)
    _emit(outcome.report, args, "verify.json")
    return EXIT_OK if outcome.passed else EXIT_FAIL


def cmd_sweep(args):
    cfg = _load(args)
    grid = dict(cfg.sweep)
    for key in ("kappa", "n", "tau", "algorithm", "sampler"):
        values = getattr(args, key)
        if values:
            grid[key] = values
    if not grid:
        raise ConfigError("sweep needs a grid (config 'sweep' block or --kappa/--n/--tau/--algorithm/--sampler)")
    rows = harness.sweep(cfg, grid)
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_sweep(rows, out / f"{cfg.output.prefix}_sweep.csv")
    if not args.quiet:
        for row in rows:
            print({k: row[k] for k in ("cell", "kappa", "n", "tau", "algorithm", "sampler", "status",
                                       "fitted_exponent", "theory_exponent", "prior_iag_exponent")})
    return EXIT_OK


def cmd_staleness(args):
    seed = 0 if args.seed is None else args.seed
    if args.regime == "markov":
        if not args.transition:
            raise ConfigError("--transition is required for the markov regime")
        P = load_transition(args.transition)
        if P.shape[0] != args.n:
            raise ConfigError(f"transition matrix has {P.shape[0]} states, --n is {args.n}")
        spec = {"kind": "markov", "transition": P.tolist()}
        mix = analyze_mixing(P)
        tau = args.tau or staleness_bound_markov(mix.t_mix, mix.pi_min, args.n, args.k, args.delta)
    else:
        spec = {"kind": "iid_uniform"}
        tau = args.tau or staleness_bound_iid(args.n, args.k, args.delta)
    rep = monte_carlo_staleness(spec, args.n, args.k, tau, replications=args.reps, base_seed=seed, delta=args.delta)
    _emit(rep.to_dict(), args, "staleness.json")
    return EXIT_OK


def cmd_mixing(args):
    rep = analyze_mixing(load_transition(args.transition), k_max=args.k_max)
    _emit({"schema_version": SCHEMA_VERSION, **rep.to_dict()}, args, "mixing.json")
    return EXIT_OK


def cmd_gradcheck(args):
    if args.config:
        specs = {"config": _load(args).problem}
    else:
        specs = {
            "quadratic": {"family": "quadratic", "n": 20, "d": 5, "kappa": 10, "seed": 7},
            "logistic": {"family": "logistic", "n": 20, "d": 5, "l2": 0.1, "seed": 7},
            "nonconvex": {"family": "nonconvex", "n": 10, "d": 3, "seed": 7},
            "two_well": {"family": "two_well"},
        }
    seed = 0 if args.seed is None else args.seed
    reports = {name: check_gradients(problem_from_spec(s), trials=args.trials, seed=seed) for name, s in specs.items()}
    out = {
        "schema_version": SCHEMA_VERSION,
        "problems": {k: {"max_relative_error": r.max_relative_error, "worst_component": r.worst_component,
                         "passed": r.passed} for k, r in reports.items()},
    }
    _emit(out, args, "gradcheck.json")
    return EXIT_OK if all(r.passed for r in reports.values()) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--quiet", action="store_true", help="do not print results to stdout")

    parser = argparse.ArgumentParser(prog="vrbounds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run replications and write CSV traces")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", parents=[common], help="check every applicable bound on fresh runs")
    p.add_argument("--conditioning", choices=["good_event", "none"], help="override the config's conditioning")
    p.add_argument("--acceptance", action="store_true", help="run the built-in acceptance criteria instead")
    p.add_argument("--criteria", type=int, nargs="+", help="subset of acceptance criteria (1-14)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", parents=[common], help="fit empirical rates over a parameter grid")
    p.add_argument("--kappa", type=float, nargs="+")
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--tau", type=int, nargs="+")
    p.add_argument("--algorithm", nargs="+")
    p.add_argument("--sampler", nargs="+")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("staleness", parents=[common], help="Monte Carlo check of the staleness bound")
    p.add_argument("--regime", choices=["iid", "markov"], default="iid")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--tau", type=int, help="window to test (default: the theory bound)")
    p.add_argument("--transition", help="JSON file with the transition matrix rows")
    p.set_defaults(func=cmd_staleness)

    p = sub.add_parser("mixing", parents=[common], help="stationary distribution and mixing time")
    p.add_argument("--transition", required=True)
    p.add_argument("--k-max", type=int, default=10_000)
    p.set_defaults(func=cmd_mixing)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidArgument, InvalidChain, HorizonExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
