"""Staleness bounds from Bernstein-type concentration, and their Monte Carlo check.

I.I.D. uniform sampling: the indicator Y_k = 1{i_k = i} has mean p = 1/N and
variance at most p, so Bernstein's inequality bounds the probability that i
is missed in a window of tau draws by exp(-3 tau / (8N)).  Union bounding over
N components and K start points gives tau >= (8N/3) ln(NK/delta).

Markov sampling uses the Bernstein inequality for stationary finite-state
chains with pseudo spectral gap gamma_ps (Paulin 2015, Thm 3.4):

    P(S - E S <= -t) <= exp(-t^2 gamma_ps / (8 (k + 1/gamma_ps) V_f + 20 t M))

for S = sum_j f(X_j), |f - E f| <= M, V_f = Var_pi f.  With gamma_ps >= 1/(2 t_mix)
and f = 1{x = i} this specialises to exp(-tau pi_i / (88 t_mix)); only that
specialisation is implemented here.  All logarithms are natural.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .errors import InvalidArgument
from .samplers import Sampler, analyze_mixing, staleness_profile, stationary_distribution


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise InvalidArgument(f"delta must lie in (0, 1), got {delta}")


def staleness_bound_iid(n: int, K: int, delta: float) -> int:
    """ceil((8n/3) ln(nK/delta))."""
    if n < 1 or K < 1:
        raise InvalidArgument("n and K must be >= 1")
    _check_delta(delta)
    return math.ceil((8.0 * n / 3.0) * math.log(n * K / delta))


def staleness_bound_markov(t_mix: int, pi_min: float, n: int, K: int, delta: float) -> int:
    """ceil((88 t_mix / pi_min) ln(nK/delta))."""
    if t_mix < 1:
        raise InvalidArgument("t_mix must be >= 1")
    if not 0.0 < pi_min <= 1.0:
        raise InvalidArgument("pi_min must lie in (0, 1]")
    if n < 1 or K < 1:
        raise InvalidArgument("n and K must be >= 1")
    _check_delta(delta)
    return math.ceil((88.0 * t_mix / pi_min) * math.log(n * K / delta))


def bernstein_tail(tau: float, regime: str, n: int = 1, t_mix: int = 1, pi_min: float = 1.0) -> float:
    """Per-(component, window) miss probability bound before the union bound."""
    if tau < 0:
        raise InvalidArgument("tau must be >= 0")
    if regime == "iid":
        return math.exp(-3.0 * tau / (8.0 * n))
    if regime == "markov":
        return math.exp(-tau * pi_min / (88.0 * t_mix))
    raise InvalidArgument(f"unknown regime {regime!r}")


def exact_miss_probability(w: int, n: int, P=None, component: int = 0) -> float:
    """Exact probability that ``component`` is absent from w consecutive draws.

    I.I.D. uniform: (1 - 1/n)^w.  Stationary Markov chain: start in pi
    restricted to the other states, then w - 1 steps that avoid the component.
    """
    if w <= 0:
        return 1.0
    if P is None:
        return (1.0 - 1.0 / n) ** w
    P = np.asarray(P, dtype=float)
    pi = stationary_distribution(P)
    keep = np.arange(P.shape[0]) != component
    v = pi[keep]
    Q = P[np.ix_(keep, keep)]
    for _ in range(w - 1):
        v = v @ Q
    return float(v.sum())


def wilson_interval(successes: int, trials: int, confidence: float = 0.95):
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def exact_interval(successes: int, trials: int, confidence: float = 0.95):
    """Clopper-Pearson interval; conservative coverage even when the expected count is below one."""
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="exact")
    return float(ci.low), float(ci.high)


@dataclass
class TailPoint:
    window: int
    analytic_tail: float
    exact_tail: float
    empirical_tail: float
    ci_low: float
    ci_high: float

    @property
    def confidence_halfwidth(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


@dataclass
class ConcentrationReport:
    regime: str
    n: int
    horizon_K: int
    delta: Optional[float]
    tau_theory: Optional[int]
    tau_tested: int
    replications: int
    good_event_count: int
    good_event_ci: tuple
    tail_curve: list = field(default_factory=list)
    tail_confidence: float = 0.95
    t_mix: Optional[int] = None
    pi_min: Optional[float] = None
    log: str = "natural"

    @property
    def good_event_frequency(self) -> float:
        return self.good_event_count / self.replications

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "regime": self.regime,
            "n": self.n,
            "horizon_K": self.horizon_K,
            "delta": self.delta,
            "tau_theory": self.tau_theory,
            "tau_tested": self.tau_tested,
            "log": self.log,
            "t_mix": self.t_mix,
            "pi_min": self.pi_min,
            "replications": self.replications,
            "good_event_frequency": self.good_event_frequency,
            "good_event_ci95": list(self.good_event_ci),
            "tail_confidence": self.tail_confidence,
            "tail_curve": [
                {
                    "tau_candidate": p.window,
                    "analytic_tail": p.analytic_tail,
                    "exact_tail": p.exact_tail,
                    "empirical_tail": p.empirical_tail,
                    "ci_low": p.ci_low,
                    "ci_high": p.ci_high,
                    "confidence_halfwidth": p.confidence_halfwidth,
                }
                for p in self.tail_curve
            ],
        }


def default_window_grid(n: int, K: int, P=None, points: int = 9, floor: float = 1e-3):
    """Integer windows from 0 up to where the exact miss probability drops to ``floor`` (capped at K)."""
    if P is None:
        top = n * math.log(1.0 / floor) if n > 1 else 1
    else:
        top = 1
        while top < K and max(exact_miss_probability(top, n, P, c) for c in range(n)) > floor:
            top = min(K, 2 * top)
    top = max(1, min(K, int(math.ceil(top))))
    return sorted({int(round(v)) for v in np.linspace(0, top, points)})


def monte_carlo_staleness(sampler_spec: dict, n: int, K: int, tau: int, replications: int = 1000,
                          base_seed: int = 0, delta: Optional[float] = None,
                          windows: Optional[Sequence[int]] = None,
                          tail_confidence: Optional[float] = None) -> ConcentrationReport:
    """Simulate index streams and measure the good event {max staleness <= tau}.

    Replicate r draws its stream from ``SeedSequence([base_seed, r])``.  For the
    single-window curve, replicate r watches component r mod n over the first
    w draws, so the per-window outcomes are independent across replicates.
    Tail intervals are Clopper-Pearson at a Bonferroni-adjusted level over the
    grid (Wilson under-covers when the expected miss count is below one).
    """
    if replications < 100:
        raise InvalidArgument("replications must be >= 100")
    kind = sampler_spec.get("kind", "iid_uniform")
    P = sampler_spec.get("transition")
    regime = "markov" if kind == "markov" else "iid"
    t_mix = pi_min = None
    tau_theory = None
    if kind == "markov":
        mix = analyze_mixing(P)
        t_mix, pi_min = mix.t_mix, mix.pi_min
        if delta is not None:
            tau_theory = staleness_bound_markov(t_mix, pi_min, n, K, delta)
    elif kind == "iid_uniform" and delta is not None:
        tau_theory = staleness_bound_iid(n, K, delta)

    if windows is None:
        windows = default_window_grid(n, K, P)
    windows = [int(w) for w in windows]
    if windows and max(windows) > K:
        raise InvalidArgument("window grid exceeds the horizon K")

    streams = np.empty((replications, K), dtype=np.int64)
    for r in range(replications):
        s = Sampler(kind=kind, n_components=n, rng_seed=base_seed, replicate=r,
                    transition_matrix=None if P is None else np.asarray(P, dtype=float),
                    pattern=sampler_spec.get("pattern"))
        streams[r] = s.draw(K)
    good = int(np.sum(staleness_profile(streams, n).max(axis=1) <= tau))

    if tail_confidence is None:
        tail_confidence = 1.0 - 0.05 / max(1, len(windows))
    watched = np.arange(replications) % n
    hits = streams == watched[:, None]
    first_hit = np.where(hits.any(axis=1), hits.argmax(axis=1), K)
    curve = []
    for w in windows:
        misses = int(np.sum(first_hit >= w))
        lo, hi = exact_interval(misses, replications, tail_confidence)
        if regime == "iid":
            analytic = bernstein_tail(w, "iid", n=n)
            exact = exact_miss_probability(w, n) if kind == "iid_uniform" else float("nan")
        else:
            analytic = bernstein_tail(w, "markov", t_mix=t_mix, pi_min=pi_min)
            # Replicates watch components round-robin, so the matching exact
            # value is the replicate-weighted mean over watched components.
            counts = np.bincount(watched, minlength=n)
            exact = float(sum(counts[c] * exact_miss_probability(w, n, P, c) for c in range(n)) / replications)
        curve.append(TailPoint(w, analytic, exact, misses / replications, lo, hi))

    return ConcentrationReport(
        regime=regime,
        n=n,
        horizon_K=K,
        delta=delta,
        tau_theory=tau_theory,
        tau_tested=int(tau),
        replications=replications,
        good_event_count=good,
        good_event_ci=wilson_interval(good, replications),
        tail_curve=curve,
        tail_confidence=tail_confidence,
        t_mix=t_mix,
        pi_min=pi_min,
    )
