"""The acceptance suite: fourteen end-to-end criteria, each a function returning a Criterion.

Used by ``tests/test_acceptance.py`` and by ``vrbounds verify --acceptance``.
Criteria that depend on randomness use fixed seeds, so the outcome is
reproducible.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as D
from .concentration import bernstein_tail, monte_carlo_staleness, staleness_bound_iid, staleness_bound_markov
from .optimizers import GradientMemory, RunConfig, run, saga_unbiasedness_oracle
from .problems import check_gradients, full_gradient, make_logistic, make_nonconvex, make_quadratic, two_well_quadratic
from .samplers import Sampler, analyze_mixing

QUAD_SEED = 7
LAZY_CHAIN = np.array([[0.9, 0.1], [0.1, 0.9]])


@dataclass
class Criterion:
    number: int
    title: str
    passed: bool
    detail: str = ""
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number:2d}: {self.title} -- {self.detail}"


def _quadratic(n=20, d=5, kappa=10.0):
    return make_quadratic(n, d, kappa, QUAD_SEED)


def _runs(problem, kind, config, seeds, **sampler_kw):
    return [run(problem, Sampler(kind, problem.n_components, rng_seed=s, **sampler_kw), config) for s in seeds]


def _merge(traces, fn):
    return D.merge_results(fn(tr) for tr in traces)


def criterion_1() -> Criterion:
    p = _quadratic()
    rng = np.random.default_rng(101)
    saga_worst, sag_gap = 0.0, 0.0
    sag_identity_worst = 0.0
    for _ in range(20):
        x = rng.standard_normal(p.dimension) * p.metadata.radius_B
        mem = GradientMemory(p.n_components, p.dimension)
        for i in range(p.n_components):
            mem.store(i, rng.standard_normal(p.dimension), k=0)
        grad = full_gradient(p, x)
        scale = np.linalg.norm(grad)
        saga_worst = max(saga_worst, np.linalg.norm(saga_unbiasedness_oracle(p, mem, x) - grad) / scale)
        sag = saga_unbiasedness_oracle(p, mem, x, algorithm="sag")
        sag_gap = max(sag_gap, np.linalg.norm(sag - grad) / scale)
        mean_stored = mem.stored.mean(axis=0)
        identity = mean_stored + (p.component_gradients(x) - mem.stored).sum(axis=0) / p.n_components ** 2
        sag_identity_worst = max(sag_identity_worst, np.linalg.norm(sag - identity) / np.linalg.norm(identity))
    ok = saga_worst <= 1e-10 and sag_gap > 1e-6 and sag_identity_worst <= 1e-10
    return Criterion(1, "SAGA unbiased, SAG biased", ok,
                     f"SAGA max rel err {saga_worst:.2e}, SAG max rel gap {sag_gap:.2e}",
                     {"saga_max_rel_error": saga_worst, "sag_max_rel_gap": sag_gap})


def criterion_2() -> Criterion:
    p = _quadratic()
    alpha = 1.0 / (4 * p.metadata.smoothness)
    results = {}
    for algo in ("sag", "saga"):
        cfg = RunConfig(algo, 5000, "manual", alpha, "manual", 4 * p.n_components)
        results[algo] = D.check_descent(run(p, Sampler("iid_uniform", p.n_components, rng_seed=2), cfg))
    ok = all(r.passed for r in results.values())
    return Criterion(2, "descent inequality, alpha = 1/(4L), K = 5000", ok,
                     ", ".join(f"{a}: min margin {r.margin_min:.2e}" for a, r in results.items()),
                     {a: r.to_dict() for a, r in results.items()})


def tau4n_traces(K=1000, seeds=range(50)):
    p = _quadratic()
    tau = 4 * p.n_components
    alpha = 1.0 / (16 * p.metadata.smoothness * tau)
    out = {}
    for algo in ("sag", "saga"):
        cfg = RunConfig(algo, K, "manual", alpha, "manual", tau)
        out[algo] = _runs(p, "iid_uniform", cfg, seeds)
    return p, out


def criterion_3(cache=None) -> Criterion:
    p, traces = cache or tau4n_traces()
    checks = []
    for algo, trs in traces.items():
        checks.append(_merge(trs, D.check_gradient_error_trace))
        checks.append(_merge(trs, D.check_gradient_bound))
    evaluated = min(c.n_evaluated for c in checks)
    ok = all(c.passed for c in checks) and evaluated > 0
    return Criterion(3, "gradient error and estimator bounds on the good event, tau = 4N, 50 seeds", ok,
                     f"{sum(not c.passed for c in checks)} failing checks, >= {evaluated} conditioned iterations each",
                     {f"{a}_{c.name}": c.to_dict() for a, c in zip(("sag", "sag", "saga", "saga"), checks)})


def criterion_4(cache=None) -> Criterion:
    p, traces = cache or tau4n_traces()
    mu = p.metadata.strong_convexity
    checks = []
    for trs in traces.values():
        checks.append(_merge(trs, lambda tr: D.check_contraction_trace(tr, mu)))
        checks.append(_merge(trs, D.check_monotone_V))
    evaluated = min(c.n_evaluated for c in checks)
    ok = all(c.passed for c in checks) and evaluated > 0
    return Criterion(4, "Lyapunov contraction and monotone V, same runs", ok,
                     f"min margin {min(c.margin_min for c in checks):.2e} over >= {evaluated} iterations each",
                     {f"{a}_{c.name}": c.to_dict() for a, c in zip(("sag", "sag", "saga", "saga"), checks)})


def criterion_5() -> Criterion:
    p = two_well_quadratic()
    L = p.metadata.smoothness
    parts = {}
    for freeze in (False, True):
        for algo in ("sag", "saga"):
            cfg = RunConfig(algo, 1000, delta=0.05, burn_in_freeze=freeze)
            trs = _runs(p, "iid_uniform", cfg, range(50))
            reports = [D.check_burn_in(tr, L, tr.B, tr.alpha, tr.tau) for tr in trs]
            parts[(algo, freeze)] = (all(r.passed for r in reports), trs[0].B, trs[0].tau)
    ok = all(v[0] for v in parts.values()) and {v[1] for k, v in parts.items() if k[1]} == {1.0}
    tau = parts[("sag", False)][2]
    return Criterion(5, "burn-in bounds on the two-component quadratic (B = 2; frozen B = 1)", ok,
                     f"tau = {tau}, " + ", ".join(f"{a}{'/frozen' if f else ''}: {'ok' if v[0] else 'FAIL'}"
                                                  for (a, f), v in parts.items()),
                     {"tau": tau})


def criterion_6() -> Criterion:
    p = make_quadratic(10, 5, 10.0, QUAD_SEED)
    kappa = p.metadata.condition_number
    cfg = RunConfig("iag", 200_000, "manual", 1.0 / (160 * p.metadata.smoothness), "manual", 10)
    t0 = time.perf_counter()
    tr = run(p, Sampler("cyclic", 10), cfg)
    elapsed = time.perf_counter() - t0
    check = D.check_linear_envelope(tr, p.metadata, name="iag_envelope")
    ok = check.passed and 9.9 <= kappa <= 10.1 and tr.good_event_held and elapsed < 5.0 and check.n_evaluated == 200_000 - 10
    return Criterion(6, "IAG envelope, cyclic N = 10, K = 2e5", ok,
                     f"kappa {kappa:.4f}, min margin {check.margin_min:.3e}, {elapsed:.2f} s",
                     {"elapsed_s": elapsed, "check": check.to_dict()})


def criterion_7() -> Criterion:
    p = _quadratic()
    K = 2000
    tau = staleness_bound_iid(20, K, 0.05)
    out = {}
    for algo in ("sag", "saga"):
        trs = _runs(p, "iid_uniform", RunConfig(algo, K, delta=0.05), range(100))
        assert all(tr.tau == tau for tr in trs)
        good = [tr for tr in trs if tr.good_event_held]
        check = D.merge_results(D.check_linear_envelope(tr, p.metadata) for tr in good)
        out[algo] = (len(good), check)
    ok = all(n >= 90 and c.passed and c.n_evaluated > 0 for n, c in out.values())
    return Criterion(7, f"strongly convex envelope, theory tau = {tau}, 100 seeds", ok,
                     ", ".join(f"{a}: {n}/100 good, min margin {c.margin_min:.2e}" for a, (n, c) in out.items()),
                     {a: {"good": n, "check": c.to_dict()} for a, (n, c) in out.items()})


def criterion_8() -> Criterion:
    p = make_nonconvex(10, 3, QUAD_SEED)
    tau = 40
    alpha = 1.0 / (16 * p.metadata.smoothness * tau)
    out = {}
    for algo in ("sag", "saga"):
        trs = _runs(p, "iid_uniform", RunConfig(algo, 8 * tau, "manual", alpha, "manual", tau), range(50))
        out[algo] = (sum(tr.good_event_held for tr in trs), _merge(trs, lambda tr: D.check_nonconvex_envelope(tr, p.metadata)))
    ok = all(c.passed and c.n_evaluated > 0 for _, c in out.values())
    return Criterion(8, "non-convex running-average envelope, tau = 4N, K = 8 tau, 50 seeds", ok,
                     ", ".join(f"{a}: {g}/50 fully good, {c.n_evaluated} horizons checked, min margin {c.margin_min:.3f}"
                               for a, (g, c) in out.items()),
                     {a: {"fully_good": g, "check": c.to_dict()} for a, (g, c) in out.items()})


def criterion_9() -> Criterion:
    n, K, delta = 10, 500, 0.1
    tau = staleness_bound_iid(n, K, delta)
    rep = monte_carlo_staleness({"kind": "iid_uniform"}, n, K, tau, replications=1000, base_seed=0, delta=delta)
    freq_ok = rep.good_event_ci[0] >= 1 - delta
    tail_ok = all(p.empirical_tail <= bernstein_tail(p.window, "iid", n=n) + p.confidence_halfwidth
                  for p in rep.tail_curve)
    exact_ok = all(p.ci_low <= p.exact_tail <= p.ci_high for p in rep.tail_curve)
    ok = freq_ok and tail_ok and exact_ok
    return Criterion(9, f"iid staleness concentration, tau = {tau}", ok,
                     f"good-event frequency {rep.good_event_frequency:.3f} (CI {rep.good_event_ci[0]:.4f}.."
                     f"{rep.good_event_ci[1]:.4f}), tail dominated: {tail_ok}, exact within CI: {exact_ok}",
                     rep.to_dict())


def criterion_10() -> Criterion:
    mix = analyze_mixing(LAZY_CHAIN)
    mix_ok = mix.t_mix == 4 and np.allclose(mix.stationary, [0.5, 0.5], atol=1e-12, rtol=0)
    tau = staleness_bound_markov(4, 0.5, 2, 500, 0.1)
    rep = monte_carlo_staleness({"kind": "markov", "transition": LAZY_CHAIN.tolist()}, 2, 500, tau,
                                replications=1000, base_seed=0, delta=0.1)
    freq_ok = rep.good_event_frequency >= 0.9

    p = two_well_quadratic()
    K = 20_000
    cfg = RunConfig("saga", K, delta=0.1)
    trs = _runs(p, "markov", cfg, range(10), transition_matrix=LAZY_CHAIN)
    good = [tr for tr in trs if tr.good_event_held]
    env = D.merge_results(D.check_linear_envelope(tr, p.metadata, name="markov_envelope") for tr in good) \
        if good else D.CheckResult("markov_envelope", False, None, None, 0, "no good replications")
    ok = mix_ok and freq_ok and env.passed and env.n_evaluated > 0
    return Criterion(10, "Markov sampling: mixing, concentration and envelope", ok,
                     f"t_mix {mix.t_mix}, pi {np.round(mix.stationary, 12).tolist()}, MC tau {tau} freq "
                     f"{rep.good_event_frequency:.3f}; SAGA tau {trs[0].tau}: {len(good)}/10 good, "
                     f"envelope min margin {env.margin_min:.3f}",
                     {"t_mix": mix.t_mix, "mc_tau": tau, "run_tau": trs[0].tau, "envelope": env.to_dict()})


def criterion_11() -> Criterion:
    p = _quadratic()
    tr = run(p, None, RunConfig("gd", 500))
    check = D.check_gd_rate(tr, p.metadata.condition_number)
    return Criterion(11, "gradient descent rate, alpha = 1/L, K = 500", check.passed,
                     f"min margin {check.margin_min:.3e}", check.to_dict())


def criterion_12() -> Criterion:
    rng = np.random.default_rng(12)
    worst = 0.0
    domination = True
    for tau in (1, 7, 64):
        st = D.LyapunovState(tau, alpha=0.01, L=1.0)
        norms = np.exp(rng.uniform(-20, 5, size=10_000))
        for c in norms:
            st.push(float(c), r=0.0)
            U, W = st.direct_sums()
            worst = max(worst, abs(st.U - U) / max(U, 1e-300), abs(st.W - W) / max(W, 1e-300))
            domination &= st.W <= tau * st.U * (1 + 1e-12)
    p = _quadratic()
    tr = run(p, Sampler("iid_uniform", 20, rng_seed=3), RunConfig("saga", 3000, tau_mode="manual", tau=80))
    identities = D.check_window_identities(tr)
    ok = worst <= 1e-9 and domination and identities.passed
    return Criterion(12, "window bookkeeping fuzz (1e4 pushes) and window identities on a run", ok,
                     f"max rel err {worst:.2e}, W <= tau U: {domination}, run identities: {identities.passed}",
                     {"max_rel_error": worst})


def criterion_13() -> Criterion:
    grid = (2, 5, 10, 20)
    cells = [(k, t, D.theory_exponent(k, t), D.prior_iag_exponent(k, t)) for k in grid for t in grid]
    ok = all(ours > prior for _, _, ours, prior in cells)
    worst = min(ours / prior for _, _, ours, prior in cells)
    return Criterion(13, "IAG exponent beats the prior exponent on {2,5,10,20}^2", ok,
                     f"smallest ratio ours/prior = {worst:.2f}", {"min_ratio": worst})


def criterion_14() -> Criterion:
    problems = {
        "quadratic": _quadratic(),
        "logistic": make_logistic(20, 5, 0.1, QUAD_SEED),
        "nonconvex": make_nonconvex(10, 3, QUAD_SEED),
        "two_well": two_well_quadratic(),
    }
    reports = {name: check_gradients(p) for name, p in problems.items()}
    ok = all(r.max_relative_error <= 1e-5 for r in reports.values())
    return Criterion(14, "finite-difference gradient checks on all builtin problems", ok,
                     ", ".join(f"{k} {r.max_relative_error:.1e}" for k, r in reports.items()),
                     {k: r.max_relative_error for k, r in reports.items()})


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 15)}


def run_all(numbers=None):
    numbers = sorted(numbers or CRITERIA)
    cache = tau4n_traces() if {3, 4} & set(numbers) else None
    out = []
    for i in numbers:
        out.append(CRITERIA[i](cache) if i in (3, 4) else CRITERIA[i]())
    return out
