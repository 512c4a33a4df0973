import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrbounds.errors import DivergenceError, InvalidArgument, NumericalFault
from vrbounds.optimizers import (TRACE_COLUMNS, GradientMemory, RunConfig, estimate_gradient, resolve_parameters,
                                 run, saga_unbiasedness_oracle)
from vrbounds.problems import full_gradient, make_nonconvex, make_quadratic, quadratic_from_matrices, two_well_quadratic
from vrbounds.samplers import Sampler


def naive_run(problem, indices, alpha, algorithm):
    """Literal O(Nd) transcription: refresh the drawn entry, then average the table."""
    n, d = problem.n_components, problem.dimension
    table = np.zeros((n, d))
    x = np.zeros(d)
    xs = [x.copy()]
    for i in indices:
        fresh = problem.component_gradient(int(i), x)
        if algorithm == "saga":
            g = fresh - table[i] + table.mean(axis=0)
            table[i] = fresh
        else:
            table[i] = fresh
            g = table.mean(axis=0)
        x = x - alpha * g
        xs.append(x.copy())
    return np.array(xs)


def test_estimators_on_the_two_well_example():
    # f_1 = x^2/2 (index 0), f_2 = (x-2)^2/2, x = 1, empty memory, draw f_1
    p = two_well_quadratic()
    x = np.array([1.0])
    g_sag, _ = estimate_gradient("sag", p, GradientMemory(2, 1), x, 0, 0)
    g_saga, _ = estimate_gradient("saga", p, GradientMemory(2, 1), x, 0, 0)
    assert g_sag[0] == pytest.approx(0.5)
    assert g_saga[0] == pytest.approx(1.0)


def test_gd_and_sgd_leave_memory_untouched():
    p = make_quadratic(5, 3, 4.0, 1)
    mem = GradientMemory(5, 3)
    x = np.ones(3)
    g, m = estimate_gradient("gd", p, mem, x, 2, 0)
    np.testing.assert_array_equal(g, full_gradient(p, x))
    g, m = estimate_gradient("sgd", p, mem, x, 2, 0)
    np.testing.assert_array_equal(g, p.component_gradient(2, x))
    assert not m.ever_sampled.any() and not m.stored.any()


def test_fresh_memory_collapses_to_full_gradient():
    p = make_quadratic(6, 3, 5.0, 2)
    x = np.array([0.3, -1.0, 2.0])
    for algo in ("sag", "saga"):
        for i in range(6):
            mem = GradientMemory(6, 3)
            for j in range(6):
                mem.store(j, p.component_gradient(j, x), 0)
            g, _ = estimate_gradient(algo, p, mem, x, i, 1)
            np.testing.assert_allclose(g, full_gradient(p, x), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(saga_unbiasedness_oracle(p, mem, x, algo), full_gradient(p, x), rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_saga_oracle_is_unbiased_and_sag_matches_its_identity(seed):
    p = make_quadratic(8, 3, 6.0, seed % 17)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(3)
    mem = GradientMemory(8, 3)
    for i in range(8):
        mem.store(i, rng.standard_normal(3), 0)
    before = mem.stored.copy()
    grad = full_gradient(p, x)
    np.testing.assert_allclose(saga_unbiasedness_oracle(p, mem, x), grad, rtol=1e-10, atol=1e-12)
    sag = saga_unbiasedness_oracle(p, mem, x, "sag")
    expected = mem.stored.mean(axis=0) + (p.component_gradients(x) - mem.stored).sum(axis=0) / 64
    np.testing.assert_allclose(sag, expected, rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(mem.stored, before)


@pytest.mark.parametrize("algorithm", ["sag", "saga"])
def test_running_sum_form_matches_literal_transcription(algorithm):
    p = make_quadratic(7, 3, 5.0, 4)
    sampler = Sampler("iid_uniform", 7, rng_seed=8)
    indices = Sampler("iid_uniform", 7, rng_seed=8).draw(400)
    alpha = 0.05
    tr = run(p, sampler, RunConfig(algorithm, 400, "manual", alpha, "manual", 10))
    xs = naive_run(p, indices, alpha, algorithm)
    np.testing.assert_allclose(tr.x_final, xs[-1], rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(tr.x_norm, np.linalg.norm(xs, axis=1), rtol=1e-11, atol=1e-13)


def test_single_component_methods_are_bit_identical():
    q = quadratic_from_matrices(np.array([[[2.0, 0.3], [0.3, 1.0]]]), np.array([[1.0, -2.0]]))
    ref = run(q, None, RunConfig("gd", 300, "manual", 0.3))
    for algo, kind in (("sag", "iid_uniform"), ("saga", "iid_uniform"), ("iag", "cyclic")):
        tr = run(q, Sampler(kind, 1), RunConfig(algo, 300, "manual", 0.3, "manual", 1))
        np.testing.assert_array_equal(tr.x_final, ref.x_final)
        np.testing.assert_array_equal(tr.r, ref.r)


@settings(max_examples=30, deadline=None)
@given(ops=st.lists(st.tuples(st.integers(0, 4), st.floats(-1e6, 1e6), st.floats(-1e-3, 1e-3)),
                    min_size=1, max_size=200))
def test_memory_invariants_under_random_updates(ops):
    mem = GradientMemory(5, 2)
    for k, (i, a, b) in enumerate(ops):
        mem.step("saga", i, np.array([a, b]), k)
        mem.check_consistency()
        assert np.all(mem.last_access[mem.ever_sampled] <= k)
    untouched = ~mem.ever_sampled
    assert not mem.stored[untouched].any()


def test_consistency_check_detects_drift():
    mem = GradientMemory(3, 2)
    mem.store(0, np.array([1.0, 2.0]), 0)
    mem.running_sum += 1e-3
    with pytest.raises(NumericalFault):
        mem.check_consistency()


def test_staleness_bookkeeping_under_cyclic_sampling():
    mem = GradientMemory(4, 1)
    for k in range(12):
        mem.step("iag", k % 4, np.zeros(1), k)
        st_k1 = mem.staleness(k + 1)
        assert st_k1.max() == min(k + 2, 4)
        assert st_k1[k % 4] == 1


def test_zero_iterations_returns_the_start_point():
    p = two_well_quadratic()
    tr = run(p, Sampler("iid_uniform", 2), RunConfig("sag", 0, "manual", 0.1, "manual", 2))
    np.testing.assert_array_equal(tr.x_final, [0.0])
    assert tr.r.tolist() == [0.5] and tr.iterations == 0


def test_divergence_reports_the_iteration():
    p = make_quadratic(5, 2, 3.0, 0)
    with pytest.raises(DivergenceError) as info:
        run(p, Sampler("iid_uniform", 5), RunConfig("saga", 1000, "manual", 50.0, "manual", 5))
    assert 1 <= info.value.iteration < 1000


def test_theory_parameters():
    p = make_quadratic(20, 5, 10.0, 7)
    L, mu = p.metadata.smoothness, p.metadata.strong_convexity
    iid = Sampler("iid_uniform", 20)
    assert resolve_parameters(p, iid, RunConfig("saga", 2000)) == (pytest.approx(1 / (16 * L * 725)), 725)
    assert resolve_parameters(p, None, RunConfig("gd", 10))[0] == pytest.approx(1 / L)
    assert resolve_parameters(p, iid, RunConfig("sgd", 10))[0] == pytest.approx(mu / (2 * L ** 2))
    assert resolve_parameters(p, Sampler("cyclic", 20), RunConfig("iag", 10))[1] == 20
    # uniform transition: t_mix = 1, pi_min = 1/20, so tau = ceil(88 * 20 * ln(20 * 1000 / 0.01))
    uniform = np.full((20, 20), 1 / 20)
    markov = Sampler("markov", 20, transition_matrix=uniform)
    assert resolve_parameters(p, markov, RunConfig("sag", 1000, delta=0.01))[1] == 25536


def test_theory_parameter_errors():
    p = make_quadratic(4, 2, 3.0, 0)
    with pytest.raises(InvalidArgument):
        resolve_parameters(p, Sampler("iid_uniform", 4), RunConfig("iag", 10))
    with pytest.raises(InvalidArgument):
        resolve_parameters(make_nonconvex(4, 2, 0), Sampler("iid_uniform", 4), RunConfig("sgd", 10))
    with pytest.raises(InvalidArgument):
        resolve_parameters(p, Sampler("iid_uniform", 5), RunConfig("sag", 10))
    with pytest.raises(InvalidArgument):
        RunConfig("adam")
    with pytest.raises(InvalidArgument):
        RunConfig("sag", 10, "manual", None)


def test_gd_trace_is_monotone_and_nonnegative():
    p = make_quadratic(20, 5, 10.0, 7)
    tr = run(p, None, RunConfig("gd", 200))
    assert np.all(np.diff(tr.r) <= 1e-15)
    assert np.all(tr.r >= -1e-9)
    assert np.all(tr.sampled_index == -1)


def test_trace_fields_are_consistent():
    p = make_quadratic(10, 3, 5.0, 3)
    tr = run(p, Sampler("iid_uniform", 10, rng_seed=1), RunConfig("sag", 300, tau_mode="manual", tau=40))
    K = 300
    assert tr.r.shape == tr.U.shape == tr.W.shape == tr.V.shape == (K + 1,)
    assert tr.est_norm_sq.shape == tr.err_norm_sq.shape == tr.max_staleness.shape == (K,)
    np.testing.assert_allclose(tr.V, tr.r + tr.L * tr.alpha ** 2 * tr.W)
    assert tr.good_event_held == (tr.max_staleness.max() <= tr.tau)
    # U_k by direct summation
    for k in (0, 1, 39, 40, 41, 300):
        assert tr.U[k] == pytest.approx(tr.est_norm_sq[max(0, k - 40):k].sum(), rel=1e-12, abs=0)


def test_saga_unbiasedness_checkpoints_in_run():
    p = make_quadratic(20, 5, 10.0, 7)
    tr = run(p, Sampler("iid_uniform", 20, rng_seed=0), RunConfig("saga", 500, unbiasedness_checkpoints=20))
    assert tr.meta["unbiasedness_max_rel_error"] <= 1e-10


def test_frozen_burn_in_holds_the_iterate_at_zero():
    p = two_well_quadratic()
    tr = run(p, Sampler("iid_uniform", 2, rng_seed=3), RunConfig("saga", 200, burn_in_freeze=True))
    assert np.all(tr.x_norm[:tr.tau + 1] == 0.0)
    assert np.all(tr.est_norm_sq[:tr.tau] == 0.0)
    assert tr.B == pytest.approx(1.0)


def test_csv_and_sidecar(tmp_path):
    p = make_quadratic(5, 2, 3.0, 0)
    tr = run(p, Sampler("iid_uniform", 5), RunConfig("saga", 50, tau_mode="manual", tau=10))
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 51
    assert float(rows[7][1]) == tr.r[6]  # repr round-trips exactly
    meta = json.loads((tmp_path / "t.csv.meta.json").read_text())
    assert meta["tau"] == 10 and meta["config"]["algorithm"] == "saga" and meta["good_event_held"] in (True, False)


def test_runs_are_reproducible():
    p = make_quadratic(5, 2, 3.0, 0)
    cfg = RunConfig("sag", 300, tau_mode="manual", tau=10)
    a = run(p, Sampler("iid_uniform", 5, rng_seed=2, replicate=1), cfg)
    b = run(p, Sampler("iid_uniform", 5, rng_seed=2, replicate=1), cfg)
    np.testing.assert_array_equal(a.r, b.r)
    np.testing.assert_array_equal(a.sampled_index, b.sampled_index)
