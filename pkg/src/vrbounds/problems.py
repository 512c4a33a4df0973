"""Finite-sum objectives f(x) = (1/N) sum_i f_i(x) with known constants.

Three builtin families are provided, each chosen so that the smoothness
constant L, the strong-convexity modulus mu, the minimizer x*, the component
minimizers x_i* and the radius B are exact (or solved to ~1e-12):

* ``make_quadratic``  -- f_i(x) = 1/2 x'A_i x - b_i'x + c_i
* ``make_logistic``   -- l2-regularised logistic loss
* ``make_nonconvex``  -- separable sum of t^2/(1+t^2) wells
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.special import expit

from .errors import InvalidArgument, NumericalFault


@dataclass(frozen=True, eq=False)
class ProblemMetadata:
    smoothness: float
    strong_convexity: float
    minimizer: np.ndarray
    optimal_value: float
    component_minimizers: np.ndarray  # (N, d)
    radius_B: float
    condition_number: Optional[float]

    @staticmethod
    def radius(minimizer, component_minimizers) -> float:
        norms = [np.linalg.norm(minimizer)]
        norms.extend(np.linalg.norm(np.asarray(component_minimizers), axis=1))
        return float(max(norms))


@dataclass(frozen=True, eq=False)
class FiniteSumProblem:
    """Immutable finite-sum objective.

    ``component_gradient(i, x)`` and ``component_value(i, x)`` are the oracles
    the optimizers use.  The optional ``batch_*`` callables evaluate the full
    objective at many points at once (rows of X) and are only used for
    post-hoc diagnostics; they must agree with the component average.
    """

    n_components: int
    dimension: int
    component_gradient: Callable[[int, np.ndarray], np.ndarray]
    component_value: Callable[[int, np.ndarray], float]
    metadata: ProblemMetadata
    family: str = "custom"
    params: dict = field(default_factory=dict)
    batch_values: Optional[Callable[[np.ndarray], np.ndarray]] = None
    batch_gradients: Optional[Callable[[np.ndarray], np.ndarray]] = None
    batch_suboptimality: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def component_gradients(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty((self.n_components, self.dimension))
        for i in range(self.n_components):
            out[i] = self.component_gradient(i, x)
        return out

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        vals = np.array([self.component_value(i, x) for i in range(self.n_components)])
        return float(np.sum(vals) / self.n_components)

    def full_gradient(self, x) -> np.ndarray:
        return full_gradient(self, x)

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.batch_values is not None:
            return self.batch_values(X)
        return np.array([self.value(x) for x in X])

    def gradients(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.batch_gradients is not None:
            return self.batch_gradients(X)
        return np.array([full_gradient(self, x) for x in X])

    def suboptimality(self, X) -> np.ndarray:
        """r = f(x) - f(x*) for each row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.batch_suboptimality is not None:
            return self.batch_suboptimality(X)
        return self.values(X) - self.metadata.optimal_value


def full_gradient(problem: FiniteSumProblem, x) -> np.ndarray:
    """Average of the component gradients at x, summed in index order."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dimension,) or not np.all(np.isfinite(x)):
        raise InvalidArgument(f"x must be a finite vector of length {problem.dimension}")
    grads = problem.component_gradients(x)
    bad = ~np.all(np.isfinite(grads), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalFault(f"component {i} returned a non-finite gradient", component=i)
    return np.sum(grads, axis=0) / problem.n_components


# --------------------------------------------------------------------------
# quadratics


def quadratic_from_matrices(A, b, c=None, family="quadratic", params=None) -> FiniteSumProblem:
    """Build f_i(x) = 1/2 x'A_i x - b_i'x + c_i from stacked (N,d,d) and (N,d) arrays.

    Singular A_i are allowed (minimizers are then minimum-norm least squares
    solutions); mu is reported as 0 when the averaged Hessian is singular.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2] or b.shape != A.shape[:2]:
        raise InvalidArgument("A must be (N,d,d) and b must be (N,d)")
    A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
    n, d = b.shape
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)

    A_bar = A.mean(axis=0)
    b_bar = b.mean(axis=0)
    c_bar = float(c.mean())

    L = max(float(np.max(np.linalg.eigvalsh(A))), 0.0)
    mu = float(np.min(np.linalg.eigvalsh(A_bar)))
    if mu <= 1e-14 * max(L, 1.0):
        mu = 0.0
    x_star = np.linalg.lstsq(A_bar, b_bar, rcond=None)[0]
    comp_min = np.array([np.linalg.lstsq(A[i], b[i], rcond=None)[0] for i in range(n)])
    f_star = float(0.5 * x_star @ A_bar @ x_star - b_bar @ x_star + c_bar)

    meta = ProblemMetadata(
        smoothness=L,
        strong_convexity=mu,
        minimizer=x_star,
        optimal_value=f_star,
        component_minimizers=comp_min,
        radius_B=ProblemMetadata.radius(x_star, comp_min),
        condition_number=(L / mu) if mu > 0 else None,
    )

    def grad(i, x):
        return A[i] @ x - b[i]

    def value(i, x):
        return float(0.5 * x @ A[i] @ x - b[i] @ x + c[i])

    def batch_values(X):
        return 0.5 * np.einsum("kd,de,ke->k", X, A_bar, X) - X @ b_bar + c_bar

    def batch_gradients(X):
        return X @ A_bar - b_bar

    def batch_subopt(X):
        D = X - x_star
        return 0.5 * np.einsum("kd,de,ke->k", D, A_bar, D)

    return FiniteSumProblem(
        n_components=n,
        dimension=d,
        component_gradient=grad,
        component_value=value,
        metadata=meta,
        family=family,
        params=dict(params or {}),
        batch_values=batch_values,
        batch_gradients=batch_gradients,
        batch_suboptimality=batch_subopt,
    )


def _random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def make_quadratic(n: int, d: int, kappa_target: float, seed: int, L: float = 1.0) -> FiniteSumProblem:
    """Random quadratic whose per-component L and composite mu are exact.

    All A_i share one random eigenbasis.  Coordinate 0 carries eigenvalue
    mu = L/kappa in every component and component 0 carries L on
    coordinate 1, so the averaged Hessian has smallest eigenvalue exactly mu
    and the largest component eigenvalue is exactly L.  For d = 1 the same
    is achieved with one component at L and the rest at a common value,
    which needs kappa < n (or kappa = 1).
    """
    if n < 1 or d < 1:
        raise InvalidArgument("n and d must be positive")
    if not kappa_target >= 1:
        raise InvalidArgument(f"kappa_target must be >= 1, got {kappa_target}")
    rng = np.random.default_rng(seed)
    mu = L / kappa_target

    if d >= 2:
        D = rng.uniform(mu, L, size=(n, d))
        D[:, 0] = mu
        D[0, 1] = L
    elif kappa_target == 1:
        D = np.full((n, 1), L)
    elif n >= 2 and kappa_target < n:
        D = np.full((n, 1), L * (n / kappa_target - 1.0) / (n - 1))
        D[0, 0] = L
    else:
        raise InvalidArgument("a 1-d quadratic with kappa > 1 needs kappa < n")

    Q = _random_orthogonal(rng, d)
    A = np.einsum("ij,nj,kj->nik", Q, D, Q)
    z = rng.standard_normal((n, d))
    b = np.einsum("nij,nj->ni", A, z)
    c = 0.5 * np.einsum("ni,ni->n", z, b)  # each f_i has minimum value 0
    return quadratic_from_matrices(
        A, b, c, params={"family": "quadratic", "n": n, "d": d, "kappa": kappa_target, "seed": seed}
    )


def two_well_quadratic() -> FiniteSumProblem:
    """The 1-d pair f_1 = x^2/2, f_2 = (x-2)^2/2: x* = 1, B = 2, L = mu = 1."""
    return quadratic_from_matrices(
        [[[1.0]], [[1.0]]], [[0.0], [2.0]], [0.0, 2.0], family="two_well",
        params={"family": "two_well"},
    )


# --------------------------------------------------------------------------
# logistic regression


def logistic_from_data(features, labels, l2: float, params=None) -> FiniteSumProblem:
    if not l2 > 0:
        raise InvalidArgument("l2 must be positive (component minimizers are otherwise unbounded)")
    a = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=float).reshape(-1)
    n, d = a.shape
    if y.shape != (n,) or not np.all(np.abs(y) == 1):
        raise InvalidArgument("labels must be +-1, one per feature row")

    def grad(i, x):
        m = y[i] * (a[i] @ x)
        return -y[i] * expit(-m) * a[i] + l2 * x

    def value(i, x):
        return float(np.logaddexp(0.0, -y[i] * (a[i] @ x)) + 0.5 * l2 * (x @ x))

    def batch_values(X):
        M = (X @ a.T) * y
        return np.mean(np.logaddexp(0.0, -M), axis=1) + 0.5 * l2 * np.einsum("kd,kd->k", X, X)

    def batch_gradients(X):
        M = (X @ a.T) * y
        return -(expit(-M) * y) @ a / n + l2 * X

    def hessian(x):
        s = expit(y * (a @ x))
        w = s * (1.0 - s)
        return (a.T * w) @ a / n + l2 * np.eye(d)

    x_star = _newton(lambda x: batch_gradients(x[None])[0], hessian, np.zeros(d))
    comp_min = np.array([_logistic_component_min(a[i], y[i], l2) for i in range(n)])
    L = float(np.max(np.einsum("nd,nd->n", a, a)) / 4.0 + l2)
    meta = ProblemMetadata(
        smoothness=L,
        strong_convexity=float(l2),
        minimizer=x_star,
        optimal_value=float(batch_values(x_star[None])[0]),
        component_minimizers=comp_min,
        radius_B=ProblemMetadata.radius(x_star, comp_min),
        condition_number=L / l2,
    )
    return FiniteSumProblem(
        n_components=n,
        dimension=d,
        component_gradient=grad,
        component_value=value,
        metadata=meta,
        family="logistic",
        params=dict(params or {}),
        batch_values=batch_values,
        batch_gradients=batch_gradients,
    )


def _logistic_component_min(a_i, y_i, l2):
    # The minimizer lies on span(a_i): x = t a_i with -y sigma(-y t s) + l2 t = 0.
    s = float(a_i @ a_i)
    if s == 0.0:
        return np.zeros_like(a_i)

    def h(t):
        return -y_i * expit(-y_i * t * s) + l2 * t

    t = optimize.brentq(h, -1.0 / l2, 1.0 / l2, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return t * a_i


def _newton(grad, hess, x0, tol=1e-13, max_iter=100):
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        g = grad(x)
        if np.linalg.norm(g) <= tol:
            break
        x = x - np.linalg.solve(hess(x), g)
    return x


def make_logistic(n: int, d: int, l2: float, seed: int) -> FiniteSumProblem:
    """Synthetic l2-regularised logistic regression with Gaussian features."""
    if n < 1 or d < 1:
        raise InvalidArgument("n and d must be positive")
    if not l2 > 0:
        raise InvalidArgument("l2 must be positive")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    y = np.where(a @ w + 0.5 * rng.standard_normal(n) >= 0, 1.0, -1.0)
    return logistic_from_data(a, y, l2, params={"family": "logistic", "n": n, "d": d, "l2": l2, "seed": seed})


# --------------------------------------------------------------------------
# separable non-convex wells


def phi(t):
    return t * t / (1.0 + t * t)


def dphi(t):
    return 2.0 * t / (1.0 + t * t) ** 2


def d2phi(t):
    return (2.0 - 6.0 * t * t) / (1.0 + t * t) ** 3


def nonconvex_from_centers(centers, params=None) -> FiniteSumProblem:
    """f_i(x) = sum_j phi(x_j - c_ij).  phi'' lies in [-1/2, 2], so L = 2."""
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    n, d = C.shape

    def grad(i, x):
        return dphi(x - C[i])

    def value(i, x):
        return float(np.sum(phi(x - C[i])))

    def batch_values(X):
        T = X[:, None, :] - C[None, :, :]
        return phi(T).sum(axis=2).mean(axis=1)

    def batch_gradients(X):
        T = X[:, None, :] - C[None, :, :]
        return dphi(T).mean(axis=1)

    x_star = np.array([_global_min_1d(C[:, j]) for j in range(d)])
    meta = ProblemMetadata(
        smoothness=2.0,
        strong_convexity=0.0,
        minimizer=x_star,
        optimal_value=float(batch_values(x_star[None])[0]),
        component_minimizers=C.copy(),
        radius_B=ProblemMetadata.radius(x_star, C),
        condition_number=None,
    )
    return FiniteSumProblem(
        n_components=n,
        dimension=d,
        component_gradient=grad,
        component_value=value,
        metadata=meta,
        family="nonconvex",
        params=dict(params or {}),
        batch_values=batch_values,
        batch_gradients=batch_gradients,
    )


def _global_min_1d(c):
    # The averaged objective is decreasing left of min(c) and increasing right
    # of max(c), so a dense grid over [min c, max c] brackets the global minimum.
    lo, hi = float(np.min(c)), float(np.max(c))
    if hi - lo == 0.0:
        return lo
    grid = np.linspace(lo, hi, 4001)
    vals = phi(grid[:, None] - c[None, :]).mean(axis=1)
    m = int(np.argmin(vals))
    a, b = grid[max(m - 1, 0)], grid[min(m + 1, grid.size - 1)]
    s = optimize.minimize_scalar(
        lambda s: float(np.mean(phi(s - c))), bounds=(a, b), method="bounded",
        options={"xatol": 1e-12},
    ).x
    for _ in range(20):
        g = np.mean(dphi(s - c))
        h = np.mean(d2phi(s - c))
        if g == 0.0 or h <= 0.0:
            break
        step = g / h
        if abs(step) > (b - a):
            break
        s -= step
    return float(s)


def make_nonconvex(n: int, d: int, seed: int) -> FiniteSumProblem:
    if n < 1 or d < 1:
        raise InvalidArgument("n and d must be positive")
    rng = np.random.default_rng(seed)
    C = rng.uniform(-2.0, 2.0, size=(n, d))
    return nonconvex_from_centers(C, params={"family": "nonconvex", "n": n, "d": d, "seed": seed})


# --------------------------------------------------------------------------


def problem_from_spec(spec: dict) -> FiniteSumProblem:
    """Build a problem from its JSON config block."""
    family = spec["family"]
    if family == "quadratic":
        return make_quadratic(spec["n"], spec["d"], spec.get("kappa", 10.0), spec.get("seed", 0))
    if family == "logistic":
        return make_logistic(spec["n"], spec["d"], spec.get("l2", 0.1), spec.get("seed", 0))
    if family == "nonconvex":
        return make_nonconvex(spec["n"], spec["d"], spec.get("seed", 0))
    if family == "two_well":
        return two_well_quadratic()
    raise InvalidArgument(f"unknown problem family {family!r}")


@dataclass
class GradientCheckReport:
    max_relative_error: float
    worst_component: int
    trials: int
    passed: bool
    tolerance: float = 1e-5


def check_gradients(problem: FiniteSumProblem, trials: int = 20, seed: int = 0,
                    step: float = 1e-6, tolerance: float = 1e-5) -> GradientCheckReport:
    """Compare analytic component gradients with central differences."""
    if trials < 1:
        raise InvalidArgument("trials must be >= 1")
    rng = np.random.default_rng(seed)
    scale = max(1.0, problem.metadata.radius_B)
    d = problem.dimension
    worst, worst_i = 0.0, -1
    for _ in range(trials):
        i = int(rng.integers(problem.n_components))
        x = scale * rng.standard_normal(d)
        g = np.asarray(problem.component_gradient(i, x), dtype=float)
        fd = np.empty(d)
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            fd[j] = (problem.component_value(i, x + e) - problem.component_value(i, x - e)) / (2 * step)
        num = np.linalg.norm(g - fd)
        err = 0.0 if num == 0.0 else num / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
        if err > worst or worst_i < 0:
            worst, worst_i = float(err), i
    return GradientCheckReport(worst, worst_i, trials, worst <= tolerance, tolerance)
