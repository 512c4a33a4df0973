import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrbounds.errors import InvalidArgument, NumericalFault
from vrbounds.problems import (FiniteSumProblem, check_gradients, d2phi, dphi, full_gradient, make_logistic,
                               make_nonconvex, make_quadratic, phi, problem_from_spec, quadratic_from_matrices,
                               two_well_quadratic)


def test_two_well_constants():
    p = two_well_quadratic()
    md = p.metadata
    assert p.n_components == 2 and p.dimension == 1
    assert md.smoothness == 1.0 and md.strong_convexity == 1.0
    np.testing.assert_allclose(md.minimizer, [1.0], atol=1e-15)
    np.testing.assert_allclose(md.component_minimizers, [[0.0], [2.0]], atol=1e-15)
    assert md.radius_B == pytest.approx(2.0, abs=1e-15)
    assert md.optimal_value == pytest.approx(0.5, abs=1e-15)
    # f(0) - f* = (0 + 2)/2 - 1/2
    assert p.suboptimality(np.zeros((1, 1)))[0] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("n,d,kappa,seed", [(20, 5, 10.0, 7), (10, 5, 10.0, 7), (5, 3, 2.0, 1), (8, 1, 4.0, 0)])
def test_quadratic_hits_target_condition_number(n, d, kappa, seed):
    p = make_quadratic(n, d, kappa, seed)
    md = p.metadata
    assert md.smoothness == pytest.approx(1.0, rel=1e-12)
    assert md.condition_number == pytest.approx(kappa, rel=1e-10)
    # independent oracle: eigenvalues of each component Hessian by finite differences of the gradient
    H_max = 0.0
    for i in range(n):
        H = np.column_stack([p.component_gradient(i, e) - p.component_gradient(i, np.zeros(d)) for e in np.eye(d)])
        H_max = max(H_max, np.linalg.eigvalsh(0.5 * (H + H.T)).max())
    assert H_max == pytest.approx(md.smoothness, rel=1e-10)
    np.testing.assert_allclose(full_gradient(p, md.minimizer), 0.0, atol=1e-12)
    for i in range(n):
        np.testing.assert_allclose(p.component_gradient(i, md.component_minimizers[i]), 0.0, atol=1e-12)


def test_quadratic_one_dimensional_edge_cases():
    assert make_quadratic(3, 1, 1.0, 0).metadata.condition_number == pytest.approx(1.0)
    with pytest.raises(InvalidArgument):
        make_quadratic(1, 1, 5.0, 0)  # a single 1-d component cannot have kappa > 1


def test_quadratic_is_deterministic_in_seed():
    a, b = make_quadratic(6, 4, 5.0, 3), make_quadratic(6, 4, 5.0, 3)
    x = np.linspace(-1, 1, 4)
    np.testing.assert_array_equal(a.component_gradients(x), b.component_gradients(x))


def test_singular_average_reports_zero_mu():
    A = np.array([[[1.0, 0.0], [0.0, 0.0]], [[2.0, 0.0], [0.0, 0.0]]])
    p = quadratic_from_matrices(A, np.array([[1.0, 0.0], [2.0, 0.0]]))
    assert p.metadata.strong_convexity == 0.0
    assert p.metadata.condition_number is None


def test_batch_functions_agree_with_component_average():
    for p in (make_quadratic(7, 3, 5.0, 2), make_logistic(9, 3, 0.1, 2), make_nonconvex(6, 3, 2)):
        X = np.random.default_rng(0).standard_normal((5, p.dimension))
        for row, v, g in zip(X, p.values(X), p.gradients(X)):
            assert v == pytest.approx(np.mean([p.component_value(i, row) for i in range(p.n_components)]), rel=1e-12)
            np.testing.assert_allclose(g, full_gradient(p, row), rtol=1e-11, atol=1e-14)
        np.testing.assert_allclose(p.suboptimality(X), p.values(X) - p.metadata.optimal_value, rtol=1e-9, atol=1e-12)


def test_logistic_minimizer_and_constants():
    p = make_logistic(30, 4, 0.1, 5)
    md = p.metadata
    assert np.linalg.norm(full_gradient(p, md.minimizer)) < 1e-12
    assert md.strong_convexity == pytest.approx(0.1)
    for i in range(p.n_components):
        assert np.linalg.norm(p.component_gradient(i, md.component_minimizers[i])) < 1e-10
    # smoothness: largest Hessian eigenvalue of any component is at most L (Hessian <= a a'/4 + l2 I)
    rng = np.random.default_rng(1)
    for _ in range(5):
        x, v = rng.standard_normal(4), rng.standard_normal(4)
        v /= np.linalg.norm(v)
        h = 1e-5
        for i in range(p.n_components):
            curv = (p.component_gradient(i, x + h * v) - p.component_gradient(i, x - h * v)) @ v / (2 * h)
            assert curv <= md.smoothness * (1 + 1e-6)


@given(st.floats(-50, 50))
def test_phi_curvature_bounds(t):
    assert -0.5 - 1e-12 <= d2phi(t) <= 2.0 + 1e-12
    assert 0.0 <= phi(t) < 1.0


def test_phi_derivatives_match_finite_differences():
    t = np.linspace(-3, 3, 61)
    h = 1e-6
    np.testing.assert_allclose(dphi(t), (phi(t + h) - phi(t - h)) / (2 * h), atol=1e-8)
    np.testing.assert_allclose(d2phi(t), (dphi(t + h) - dphi(t - h)) / (2 * h), atol=1e-7)


def test_nonconvex_minimizer_beats_dense_grid():
    p = make_nonconvex(10, 3, 7)
    md = p.metadata
    assert md.strong_convexity == 0.0 and md.smoothness == 2.0
    # the objective is separable, so a per-coordinate dense grid is an independent oracle
    grid = np.linspace(-4, 4, 80_001)
    for j in range(p.dimension):
        X = np.zeros((grid.size, p.dimension))
        X[:] = md.minimizer
        X[:, j] = grid
        best = p.values(X).min()
        assert p.value(md.minimizer) <= best + 1e-10
    np.testing.assert_allclose(full_gradient(p, md.minimizer), 0.0, atol=1e-10)


@pytest.mark.parametrize("factory", [lambda: make_quadratic(20, 5, 10.0, 7), lambda: make_logistic(20, 5, 0.1, 7),
                                     lambda: make_nonconvex(10, 3, 7), two_well_quadratic])
def test_check_gradients_passes_builtin_problems(factory):
    rep = check_gradients(factory())
    assert rep.passed and rep.max_relative_error <= 1e-5


def test_check_gradients_catches_a_wrong_gradient():
    p = two_well_quadratic()
    broken = FiniteSumProblem(2, 1, lambda i, x: 1.1 * p.component_gradient(i, x), p.component_value, p.metadata)
    assert not check_gradients(broken).passed


def test_full_gradient_names_the_faulty_component():
    p = make_quadratic(4, 2, 3.0, 0)

    def grad(i, x):
        return np.array([np.nan, 0.0]) if i == 2 else p.component_gradient(i, x)

    broken = FiniteSumProblem(4, 2, grad, p.component_value, p.metadata)
    with pytest.raises(NumericalFault) as info:
        full_gradient(broken, np.zeros(2))
    assert info.value.component == 2
    with pytest.raises(InvalidArgument):
        full_gradient(p, np.zeros(3))


def test_problem_from_spec_roundtrip():
    assert problem_from_spec({"family": "two_well"}).n_components == 2
    p = problem_from_spec({"family": "quadratic", "n": 6, "d": 2, "kappa": 3, "seed": 1})
    assert p.metadata.condition_number == pytest.approx(3.0)
    with pytest.raises(InvalidArgument):
        problem_from_spec({"family": "rosenbrock"})


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 8), d=st.integers(2, 5), kappa=st.floats(1.5, 50.0), seed=st.integers(0, 10_000))
def test_quadratic_strong_convexity_inequality(n, d, kappa, seed):
    p = make_quadratic(n, d, kappa, seed)
    md = p.metadata
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(d)
    r = p.suboptimality(x[None])[0]
    g = full_gradient(p, x)
    # mu/2 |x - x*|^2 <= r <= L/2 |x - x*|^2  and  |grad f|^2 >= 2 mu r
    dist = np.sum((x - md.minimizer) ** 2)
    assert md.strong_convexity / 2 * dist <= r * (1 + 1e-9) + 1e-15
    assert r <= md.smoothness / 2 * dist * (1 + 1e-9) + 1e-15
    assert g @ g >= 2 * md.strong_convexity * r * (1 - 1e-9) - 1e-15
