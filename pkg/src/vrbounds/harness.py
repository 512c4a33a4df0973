"""Experiment orchestration behind the ``run``, ``verify`` and ``sweep`` subcommands.

Everything here is deterministic in (config, base seed): replications and
sweep cells run sequentially in a fixed order, and outputs carry no
timestamps, so reruns produce byte-identical files.
"""
from __future__ import annotations

import copy
import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import binomtest

from . import diagnostics as D
from .concentration import monte_carlo_staleness, staleness_bound_iid, staleness_bound_markov
from .config import SCHEMA_VERSION, ExperimentConfig
from .errors import InvalidArgument
from .optimizers import MEMORY_ALGORITHMS, RunTrace, resolve_parameters, run
from .problems import FiniteSumProblem, problem_from_spec
from .samplers import analyze_mixing, sampler_from_spec

UNBIASEDNESS_TOL = 1e-10
SWEEP_COLUMNS = ("cell", "kappa", "n", "tau", "algorithm", "sampler", "status", "alpha", "kappa_measured",
                 "fitted_rho", "fitted_exponent", "theory_exponent", "prior_iag_exponent",
                 "fit_first_k", "fit_last_k", "final_r", "good_event_held")


def build_problem(cfg: ExperimentConfig) -> FiniteSumProblem:
    return problem_from_spec(cfg.problem)


def build_sampler(cfg: ExperimentConfig, problem: FiniteSumProblem, replicate: int):
    if cfg.sampler is None:
        return None
    return sampler_from_spec(cfg.sampler, problem.n_components, seed=cfg.base_seed, replicate=replicate)


def run_replications(cfg: ExperimentConfig, problem: Optional[FiniteSumProblem] = None):
    """One run per replication; replicate r uses seed stream (base_seed, r)."""
    problem = problem or build_problem(cfg)
    traces = []
    for r in range(cfg.replications):
        traces.append(run(problem, build_sampler(cfg, problem, r), cfg.run))
    return problem, traces


def theory_summary(cfg: ExperimentConfig, problem: FiniteSumProblem, trace: RunTrace) -> dict:
    """Resolved parameters plus the closed-form quantities they imply."""
    md = problem.metadata
    K = cfg.run.iterations
    out = {
        "alpha": trace.alpha,
        "tau": trace.tau,
        "L": md.smoothness,
        "mu": md.strong_convexity,
        "kappa": md.condition_number,
        "B": trace.B,
        "alpha_theory": 1.0 / (16 * md.smoothness * trace.tau),
        "log": "natural",
    }
    kind = None if cfg.sampler is None else cfg.sampler["kind"]
    n = problem.n_components
    if kind == "iid_uniform":
        out["tau_theory"] = staleness_bound_iid(n, max(K, 1), cfg.run.delta)
    elif kind == "markov":
        sampler = build_sampler(cfg, problem, 0)
        mix = analyze_mixing(sampler.transition_matrix)
        out.update(t_mix=mix.t_mix, pi_min=mix.pi_min,
                   tau_theory=staleness_bound_markov(mix.t_mix, mix.pi_min, n, max(K, 1), cfg.run.delta))
    elif kind in ("cyclic", "custom_pattern"):
        out["tau_theory"] = build_sampler(cfg, problem, 0).certified_delay()
    if md.strong_convexity > 0:
        kappa = md.condition_number
        out["theory_exponent"] = D.theory_exponent(kappa, trace.tau)
        out["prior_iag_exponent"] = D.prior_iag_exponent(kappa, trace.tau)
        if K > trace.tau:
            out["envelope_at_K"] = float(D.rate_envelope("sc", md, trace.tau, trace.B)(K))
    elif K >= 2 * trace.tau:
        out["envelope_at_K"] = float(D.rate_envelope("nonconvex", md, trace.tau, trace.B)(K))
    return out


def write_run_outputs(cfg: ExperimentConfig, problem, traces, out_dir) -> dict:
    """CSV trace + sidecar per replication and one summary JSON; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = cfg.output.prefix
    reps = []
    for r, tr in enumerate(traces):
        path = out / f"{prefix}_rep{r:03d}.csv"
        if cfg.run.record_trace:
            tr.write_csv(path)
        reps.append({
            "replicate": r,
            "trace": path.name if cfg.run.record_trace else None,
            "good_event_held": tr.good_event_held,
            "final_r": float(tr.r[-1]) if tr.r.size else None,
        })
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "resolved": theory_summary(cfg, problem, traces[0]),
        "replications": reps,
    }
    with open(out / f"{prefix}_meta.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


# --------------------------------------------------------------------------
# verification


@dataclass
class VerifyOutcome:
    report: dict
    passed: bool


def trace_checks(trace: RunTrace, problem: FiniteSumProblem, conditioning: bool):
    """The predicate suite that applies to one trace, as a list of CheckResult."""
    md = problem.metadata
    L, mu = md.smoothness, md.strong_convexity
    algo, a, t, K = trace.algorithm, trace.alpha, trace.tau, trace.iterations
    checks = [D.check_window_identities(trace)]
    if a <= (1 + 1e-12) / (4 * L):
        checks.append(D.check_descent(trace))
    if algo == "gd":
        if mu > 0 and a <= (1 + 1e-12) / L:
            checks.append(D.check_gd_rate(trace, md.condition_number))
        return checks
    if algo not in MEMORY_ALGORITHMS:
        return checks
    checks.append(D.check_gradient_error_trace(trace, conditioning=conditioning))
    checks.append(D.check_gradient_bound(trace, conditioning=conditioning))
    if a > (1 + 1e-12) / (16 * L * t):
        return checks
    if K >= t + 1:
        checks.append(D.check_burn_in(trace, L, trace.B, a, t).as_check())
    if mu > 0:
        checks.append(D.check_contraction_trace(trace, mu, conditioning=conditioning))
        checks.append(D.check_monotone_V(trace, conditioning=conditioning))
        name = {"iag": "iag_envelope"}.get(algo, "sc_envelope")
        checks.append(D.check_linear_envelope(trace, md, conditioning=conditioning, name=name))
    else:
        checks.append(D.check_nonconvex_descent(trace, conditioning=conditioning))
        checks.append(D.check_nonconvex_envelope(trace, md, conditioning=conditioning))
    return checks


def verify(cfg: ExperimentConfig, problem: Optional[FiniteSumProblem] = None) -> VerifyOutcome:
    """Run every replication and evaluate the applicable predicates.

    With ``conditioning = good_event`` window-level checks at iteration k use
    only replications whose measured staleness stayed within tau through k
    (a replication contributes its good prefix).  Replications whose good
    event fails are listed and, when tau comes from the theory formula,
    counted against the delta budget.
    """
    if not cfg.run.record_trace:
        raise InvalidArgument("verify needs diagnostics enabled")
    problem, traces = run_replications(cfg, problem)
    conditioning = cfg.diagnostics.conditioning == "good_event"
    per_check = {}
    for tr in traces:
        for c in trace_checks(tr, problem, conditioning):
            per_check.setdefault(c.name, []).append(c)
    checks = {name: D.merge_results(rs) for name, rs in per_check.items()}

    for name, c in list(checks.items()):
        if c.n_evaluated == 0:
            checks[name] = D.CheckResult(name, False, None, None, 0, "vacuous: no iterations evaluated")

    if cfg.run.algorithm == "saga" and cfg.run.unbiasedness_checkpoints:
        errs = [tr.meta.get("unbiasedness_max_rel_error", 0.0) for tr in traces]
        worst = max(errs)
        checks["saga_unbiasedness"] = D.CheckResult(
            "saga_unbiasedness", worst <= UNBIASEDNESS_TOL, None, float(UNBIASEDNESS_TOL - worst),
            len(errs) * cfg.run.unbiasedness_checkpoints)

    bad = [r for r, tr in enumerate(traces) if not tr.good_event_held]
    good_event = {
        "replications": len(traces),
        "good": len(traces) - len(bad),
        "non_good_replicates": bad,
        "first_violation_k": {str(r): traces[r].good_prefix_end for r in bad},
    }
    kind = None if cfg.sampler is None else cfg.sampler["kind"]
    if cfg.run.tau_mode == "theory" and cfg.run.algorithm in MEMORY_ALGORITHMS:
        if kind in ("cyclic", "custom_pattern"):
            checks["deterministic_coverage"] = D.CheckResult(
                "deterministic_coverage", not bad, None if not bad else min(traces[r].good_prefix_end for r in bad),
                None, len(traces))
        elif kind in ("iid_uniform", "markov"):
            # Fail only when the observed failure count is implausible under rate delta.
            p = binomtest(len(bad), len(traces), cfg.run.delta, alternative="greater").pvalue
            checks["good_event_budget"] = D.CheckResult(
                "good_event_budget", p >= 0.05, None, float(cfg.run.delta - len(bad) / len(traces)), len(traces),
                f"{len(bad)} of {len(traces)} replications outside the good event (delta={cfg.run.delta})")

    reps = cfg.diagnostics.concentration_replications
    if reps and kind in ("iid_uniform", "markov"):
        tau = traces[0].tau
        rep = monte_carlo_staleness(cfg.sampler, problem.n_components, cfg.run.iterations, tau,
                                    replications=reps, base_seed=cfg.base_seed, delta=cfg.run.delta)
        ok = rep.good_event_ci[1] >= 1 - cfg.run.delta
        checks["staleness_concentration"] = D.CheckResult(
            "staleness_concentration", bool(ok), None, float(rep.good_event_frequency - (1 - cfg.run.delta)), reps)
        good_event["monte_carlo"] = rep.to_dict()

    report = {
        "schema_version": SCHEMA_VERSION,
        "checks": {name: c.to_dict() for name, c in sorted(checks.items())},
        "good_event": good_event,
        "resolved": theory_summary(cfg, problem, traces[0]),
        "conditioning": cfg.diagnostics.conditioning,
    }
    passed = all(c.passed for c in checks.values())
    report["all_passed"] = passed
    return VerifyOutcome(report, passed)


# --------------------------------------------------------------------------
# sweeps


def _cell_config(cfg: ExperimentConfig, cell: dict) -> ExperimentConfig:
    c = copy.deepcopy(cfg)
    c.replications = 1
    if "kappa" in cell:
        c.problem["kappa"] = cell["kappa"]
    if "n" in cell:
        c.problem["n"] = cell["n"]
        if c.sampler and c.sampler.get("kind") == "markov":
            raise InvalidArgument("cannot sweep n with a fixed Markov transition matrix")
    if "tau" in cell:
        c.run.tau_mode, c.run.tau = "manual", int(cell["tau"])
    if "algorithm" in cell:
        c.run.algorithm = cell["algorithm"]
    if "sampler" in cell:
        c.sampler = dict(c.sampler or {}, kind=cell["sampler"])
    c.run.unbiasedness_checkpoints = 0
    return c


def sweep(cfg: ExperimentConfig, grid: Optional[dict] = None):
    """Grid over any of kappa, n, tau, algorithm, sampler; one row per cell.

    The per-iteration rate is fitted by least squares on log r_k over the
    second half of the post-burn-in iterations (see
    :func:`vrbounds.diagnostics.fit_linear_rate`); the window is reported.
    """
    grid = dict(grid if grid is not None else cfg.sweep)
    keys = [k for k in ("kappa", "n", "tau", "algorithm", "sampler") if k in grid]
    rows = []
    for idx, values in enumerate(itertools.product(*(grid[k] for k in keys))):
        cell = dict(zip(keys, values))
        row = {k: "" for k in SWEEP_COLUMNS}
        row.update(cell, cell=idx)
        try:
            c = _cell_config(cfg, cell)
            problem = build_problem(c)
            sampler = build_sampler(c, problem, 0)
            resolve_parameters(problem, sampler, c.run)
        except InvalidArgument as exc:
            row["status"] = f"skipped: {exc}"
            rows.append(row)
            continue
        tr = run(problem, sampler, c.run)
        md = problem.metadata
        start = tr.tau if c.run.algorithm in MEMORY_ALGORITHMS else 0
        rho, (lo, hi) = D.fit_linear_rate(tr.r, start)
        kappa = md.condition_number
        row.update(
            status="ok",
            alpha=tr.alpha,
            tau=tr.tau,
            algorithm=c.run.algorithm,
            sampler=(c.sampler or {}).get("kind", ""),
            n=problem.n_components,
            kappa_measured=kappa if kappa is not None else "",
            fitted_rho=rho,
            fitted_exponent=-math.log(rho) if rho > 0 else float("nan"),
            theory_exponent=D.theory_exponent(kappa, tr.tau) if kappa else "",
            prior_iag_exponent=D.prior_iag_exponent(kappa, tr.tau) if kappa else "",
            fit_first_k=lo,
            fit_last_k=hi,
            final_r=float(tr.r[-1]),
            good_event_held=tr.good_event_held,
        )
        rows.append(row)
    return rows


def write_sweep(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
