import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrbounds.concentration import (bernstein_tail, default_window_grid, exact_interval, exact_miss_probability,
                                    monte_carlo_staleness, staleness_bound_iid, staleness_bound_markov,
                                    wilson_interval)
from vrbounds.errors import InvalidArgument
from vrbounds.samplers import staleness_profile, stationary_distribution

LAZY = [[0.9, 0.1], [0.1, 0.9]]


# Expected integers were evaluated by hand from ceil(c * ln(nK/delta)) and are frozen here.
@pytest.mark.parametrize("n,K,delta,expected", [(1, 1, 0.5, 2), (10, 1000, 0.01, 369), (10, 500, 0.1, 289),
                                                (20, 2000, 0.05, 725), (2, 1000, 0.05, 57)])
def test_staleness_bound_iid_values(n, K, delta, expected):
    assert staleness_bound_iid(n, K, delta) == expected


@pytest.mark.parametrize("t_mix,pi_min,n,K,delta,expected", [(1, 0.1, 10, 1000, 0.01, 12158),
                                                             (1, 1.0, 1, 1, 1 / math.e, 88),
                                                             (4, 0.5, 2, 500, 0.1, 6485),
                                                             (4, 0.5, 2, 20_000, 0.1, 9082)])
def test_staleness_bound_markov_values(t_mix, pi_min, n, K, delta, expected):
    assert staleness_bound_markov(t_mix, pi_min, n, K, delta) == expected


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 1.5])
def test_bounds_reject_bad_delta(delta):
    with pytest.raises(InvalidArgument):
        staleness_bound_iid(5, 10, delta)
    with pytest.raises(InvalidArgument):
        staleness_bound_markov(1, 0.5, 5, 10, delta)


@pytest.mark.parametrize("pi_min", [0.0, -0.2, 1.5])
def test_markov_bound_rejects_bad_pi_min(pi_min):
    with pytest.raises(InvalidArgument):
        staleness_bound_markov(1, pi_min, 5, 10, 0.1)


@settings(max_examples=50)
@given(n=st.integers(1, 100), K=st.integers(1, 10 ** 6), extra=st.integers(0, 10 ** 6), delta=st.floats(1e-6, 0.99))
def test_bounds_are_monotone_in_K_and_markov_dominates_iid(n, K, extra, delta):
    assert staleness_bound_iid(n, K + extra, delta) >= staleness_bound_iid(n, K, delta)
    assert staleness_bound_markov(1, 1.0 / n, n, K, delta) >= staleness_bound_iid(n, K, delta)


def test_bernstein_tail_values():
    assert bernstein_tail(0, "iid", n=7) == 1.0
    n = 6
    assert bernstein_tail(8 * n / 3 * math.log(2), "iid", n=n) == pytest.approx(0.5, rel=1e-14)
    assert bernstein_tail(704, "markov", t_mix=4, pi_min=0.5) == pytest.approx(math.exp(-1), rel=1e-14)
    with pytest.raises(InvalidArgument):
        bernstein_tail(-1, "iid", n=2)
    with pytest.raises(InvalidArgument):
        bernstein_tail(1, "poisson")


def test_exact_miss_dominated_by_bernstein_on_grid():
    n = np.arange(1, 51)[:, None].astype(float)
    w = np.arange(0, 5001)[None, :].astype(float)
    exact = (1 - 1 / n) ** w
    bound = np.exp(-3 * w / (8 * n))
    assert np.all(exact <= bound * (1 + 1e-12))


def brute_force_markov_miss(P, w, c):
    """Sum over every path of length w (started from pi) that avoids state c."""
    P = np.asarray(P)
    pi = stationary_distribution(P)
    states = [s for s in range(P.shape[0]) if s != c]
    total = 0.0
    for path in itertools.product(states, repeat=w):
        p = pi[path[0]]
        for a, b in zip(path, path[1:]):
            p *= P[a, b]
        total += p
    return total


@pytest.mark.parametrize("P", [LAZY, [[0.5, 0.3, 0.2], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]]])
def test_exact_markov_miss_matches_path_enumeration(P):
    for c in range(len(P)):
        for w in range(0, 7):
            expected = 1.0 if w == 0 else brute_force_markov_miss(P, w, c)
            assert exact_miss_probability(w, len(P), P, c) == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_markov_exact_miss_dominated_by_markov_tail():
    for w in range(0, 2000, 50):
        assert exact_miss_probability(w, 2, LAZY, 0) <= bernstein_tail(w, "markov", t_mix=4, pi_min=0.5)


def test_intervals_contain_point_estimate_and_nest():
    lo, hi = wilson_interval(30, 100)
    assert lo < 0.3 < hi
    elo, ehi = exact_interval(30, 100, 0.99)
    assert elo < lo and ehi > hi
    assert wilson_interval(100, 100)[1] == 1.0


def test_window_grid_spans_measurable_range():
    g = default_window_grid(10, 500)
    assert g[0] == 0 and g == sorted(set(g))
    assert (1 - 0.1) ** g[-1] <= 1.1e-3
    g = default_window_grid(2, 500, np.array(LAZY))
    assert max(exact_miss_probability(g[-1], 2, LAZY, c) for c in range(2)) <= 1e-3


def test_cyclic_sampler_good_event_is_certain():
    rep = monte_carlo_staleness({"kind": "cyclic"}, 7, 300, 7, replications=100)
    assert rep.good_event_count == 100
    rep = monte_carlo_staleness({"kind": "cyclic"}, 7, 300, 6, replications=100)
    assert rep.good_event_count == 0


def test_monte_carlo_requires_enough_replications():
    with pytest.raises(InvalidArgument):
        monte_carlo_staleness({"kind": "iid_uniform"}, 5, 100, 10, replications=99)


def test_monte_carlo_is_deterministic_in_seed():
    a = monte_carlo_staleness({"kind": "iid_uniform"}, 5, 200, 30, replications=200, base_seed=4)
    b = monte_carlo_staleness({"kind": "iid_uniform"}, 5, 200, 30, replications=200, base_seed=4)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_report_fields_and_invariants():
    rep = monte_carlo_staleness({"kind": "iid_uniform"}, 10, 500, 289, replications=300, delta=0.1)
    d = rep.to_dict()
    assert d["schema_version"] == 1 and d["tau_theory"] == 289 and d["log"] == "natural"
    assert 0.0 <= d["good_event_frequency"] <= 1.0
    tails = [p["analytic_tail"] for p in d["tail_curve"]]
    assert all(a >= b for a, b in zip(tails, tails[1:]))
    assert all(p["ci_low"] <= p["empirical_tail"] <= p["ci_high"] for p in d["tail_curve"])


def test_good_event_matches_small_window_theory():
    # With tau small, misses are common; compare against the good-event probability
    # obtained by enumerating all 2^12 equally likely streams.
    n, K, tau = 2, 12, 3
    stream_probs = 0.0
    for s in itertools.product(range(n), repeat=K):
        if staleness_profile(np.array(s), n).max() <= tau:
            stream_probs += 0.5 ** K
    rep = monte_carlo_staleness({"kind": "iid_uniform"}, n, K, tau, replications=4000, base_seed=1)
    lo, hi = exact_interval(rep.good_event_count, 4000, 0.999)
    assert lo <= stream_probs <= hi
