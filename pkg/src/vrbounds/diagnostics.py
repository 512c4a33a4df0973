"""Runtime checks for the delayed-gradient Lyapunov analysis of SAG/SAGA/IAG.

Notation follows the traces produced by :func:`vrbounds.optimizers.run`:
r_k = f(x_k) - f(x*), g_k the applied update direction, e_k = g_k - grad f(x_k),

    U_k = sum_{j=1}^{tau} |g_{k-j}|^2
    W_k = sum_{j=1}^{tau} (tau - j + 1) |g_{k-j}|^2
    V_k = r_k + L alpha^2 W_k

Terms with k - j < 0 are absent.  Every inequality is checked as
``lhs <= rhs + slack * max(1, scale)``; the slack constants live below.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InsufficientTrace, InvalidArgument, InvalidCombination, OutOfWindow

SLACK = 1e-9
CONTRACTION_SLACK = 1e-12
IDENTITY_TOL = 1e-10


# --------------------------------------------------------------------------
# window bookkeeping


class LyapunovState:
    """Streaming U, W, V over a ring buffer of the last tau squared norms.

    ``push`` updates in O(1): W <- W - U + tau*c, then U <- U - dropped + c.
    Subtracting a large dropped value from a small remaining sum loses
    relative accuracy, so the state carries a running bound on the rounding
    error of each sum and recomputes both from the buffer (O(tau)) whenever
    the bound exceeds ``rtol`` relative.  With slowly varying norms that
    never triggers; with norms spanning many orders of magnitude it keeps the
    sums accurate at the cost of occasional refreshes.
    """

    _EPS = np.finfo(float).eps

    def __init__(self, tau: int, alpha: float, L: float, rtol: float = 1e-11):
        if tau < 1:
            raise InvalidArgument("tau must be >= 1")
        self.tau = int(tau)
        self.alpha = float(alpha)
        self.L = float(L)
        self.rtol = float(rtol)
        self.window_norms = deque(maxlen=self.tau)  # oldest first
        self.U = 0.0
        self.W = 0.0
        self.r = 0.0
        self.V = 0.0
        self.refreshes = 0
        self._err_U = 0.0
        self._err_W = 0.0

    def push(self, g_norm_sq: float, r: Optional[float] = None) -> "LyapunovState":
        if not g_norm_sq >= 0:
            raise InvalidArgument(f"squared norm must be nonnegative, got {g_norm_sq}")
        c = float(g_norm_sq)
        dropped = self.window_norms[0] if len(self.window_norms) == self.tau else 0.0
        eps = self._EPS
        self._err_W += self._err_U + 2 * eps * (self.W + self.U + self.tau * c)
        self.W = self.W - self.U + self.tau * c
        self._err_U += 2 * eps * (self.U + dropped + c)
        self.U = self.U - dropped + c
        self.window_norms.append(c)
        if self._err_U > self.rtol * self.U or self._err_W > self.rtol * self.W:
            self.refresh()
        if r is not None:
            self.r = float(r)
        self.V = self.r + self.L * self.alpha ** 2 * self.W
        return self

    def direct_sums(self):
        """(U, W) by direct summation over the buffer."""
        vals = np.array(self.window_norms, dtype=float)
        # newest entry is j = 1 with weight tau
        weights = self.tau - np.arange(vals.size)[::-1]
        return float(vals.sum()), float(vals @ weights)

    def refresh(self):
        self.U, self.W = self.direct_sums()
        self._err_U = self._err_W = 0.0
        self.refreshes += 1


def window_sums(norms_sq, tau: int):
    """U_k and W_k for k = 0..len(norms_sq), computed directly (no running sums)."""
    est = np.asarray(norms_sq, dtype=float)
    K = est.size
    U = np.zeros(K + 1)
    W = np.zeros(K + 1)
    if K == 0:
        return U, W
    U[1:] = np.convolve(est, np.ones(tau))[:K]
    W[1:] = np.convolve(est, np.arange(tau, 0, -1, dtype=float))[:K]
    return U, W


# --------------------------------------------------------------------------
# scalar predicates


def _slack(scale, eps=SLACK):
    return eps * np.maximum(1.0, scale)


def check_gradient_error(err_norm_sq, U, L, alpha, tau, k) -> bool:
    """|e_k|^2 <= 4 alpha^2 L^2 tau U_k, defined for k >= tau on the good event."""
    if k < tau:
        raise OutOfWindow(f"gradient-error bound is only defined for k >= tau ({k} < {tau})")
    return bool(err_norm_sq <= 4 * alpha ** 2 * L ** 2 * tau * U + _slack(U))


def check_contraction(V_prev, V_next, alpha, mu) -> bool:
    return bool(V_next <= (1 - alpha * mu / 4) * V_prev + _slack(V_prev, CONTRACTION_SLACK))


# --------------------------------------------------------------------------
# trace-level checks


@dataclass
class CheckResult:
    name: str
    passed: bool
    first_violation_k: Optional[int]
    margin_min: Optional[float]
    n_evaluated: int
    note: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "first_violation_k": self.first_violation_k,
            "margin_min": self.margin_min,
            "n_evaluated": self.n_evaluated,
            **({"note": self.note} if self.note else {}),
        }


def _predicate(name, ks, lhs, rhs, scale, eps=SLACK, note="") -> CheckResult:
    ks = np.asarray(ks)
    if ks.size == 0:
        return CheckResult(name, True, None, None, 0, note or "no applicable iterations")
    lhs, rhs, scale = np.broadcast_arrays(np.asarray(lhs, float), np.asarray(rhs, float), np.asarray(scale, float))
    scale = np.maximum(1.0, scale)
    margin = (rhs - lhs) / scale
    bad = ~(margin >= -eps)
    first = int(ks[np.argmax(bad)]) if bad.any() else None
    return CheckResult(name, not bad.any(), first, float(np.min(margin)), int(ks.size), note)


def merge_results(results) -> CheckResult:
    """Combine one check across replications."""
    results = list(results)
    name = results[0].name
    evaluated = [r for r in results if r.n_evaluated]
    firsts = [r.first_violation_k for r in results if r.first_violation_k is not None]
    margins = [r.margin_min for r in evaluated]
    notes = sorted({r.note for r in results if r.note})
    return CheckResult(
        name,
        all(r.passed for r in results),
        min(firsts) if firsts else None,
        min(margins) if margins else None,
        sum(r.n_evaluated for r in results),
        "; ".join(notes),
    )


def good_window(trace, conditioning: bool = True):
    """Iterations k in [tau, end) at which window-level checks apply.

    With conditioning, ``end`` is the first iteration whose max staleness
    exceeds tau (the good event holds on [0, end)).
    """
    end = trace.good_prefix_end if conditioning else trace.iterations
    return np.arange(trace.tau, end)


def check_descent(trace) -> CheckResult:
    """r_{k+1} <= r_k - (alpha/4)|grad f(x_k)|^2 + alpha |e_k|^2 for every k."""
    a = trace.alpha
    K = trace.iterations
    ks = np.arange(K)
    note = "" if a <= 1 / (4 * trace.L) * (1 + 1e-12) else "step size above 1/(4L): bound not guaranteed"
    rhs = trace.r[:K] - a / 4 * trace.grad_norm_sq[:K] + a * trace.err_norm_sq
    return _predicate("descent", ks, trace.r[1:], rhs, trace.r[:K], note=note)


def check_gradient_error_trace(trace, tau: Optional[int] = None, conditioning=True) -> CheckResult:
    """|e_k|^2 <= 4 alpha^2 L^2 tau U_k on the good window.

    Passing a ``tau`` different from the run's recomputes U_k for that window
    length (used as a sensitivity control).
    """
    t = trace.tau if tau is None else int(tau)
    U = trace.U if t == trace.tau else window_sums(trace.est_norm_sq, t)[0]
    end = trace.good_prefix_end if conditioning else trace.iterations
    ks = np.arange(t, end)
    L, a = trace.L, trace.alpha
    rhs = 4 * a ** 2 * L ** 2 * t * U[ks]
    return _predicate("gradient_error", ks, trace.err_norm_sq[ks], rhs, U[ks])


def check_gradient_bound(trace, conditioning=True) -> CheckResult:
    """|g_k|^2 <= 2|grad f(x_k)|^2 + 8 L^2 tau alpha^2 U_k on the good window."""
    ks = good_window(trace, conditioning)
    L, a, t = trace.L, trace.alpha, trace.tau
    rhs = 2 * trace.grad_norm_sq[ks] + 8 * L ** 2 * t * a ** 2 * trace.U[ks]
    return _predicate("estimator_bound", ks, trace.est_norm_sq[ks], rhs, rhs)


def check_contraction_trace(trace, mu: float, conditioning=True) -> CheckResult:
    """V_{k+1} <= (1 - alpha mu / 4) V_k on the good window."""
    ks = good_window(trace, conditioning)
    rhs = (1 - trace.alpha * mu / 4) * trace.V[ks]
    return _predicate("lyapunov_contraction", ks, trace.V[ks + 1], rhs, trace.V[ks], eps=CONTRACTION_SLACK)


def check_monotone_V(trace, conditioning=True) -> CheckResult:
    ks = good_window(trace, conditioning)
    return _predicate("monotone_V", ks, trace.V[ks + 1], trace.V[ks], trace.V[ks], eps=CONTRACTION_SLACK)


def check_nonconvex_descent(trace, conditioning=True) -> CheckResult:
    """V_{k+1} <= V_k - (alpha/8)|grad f(x_k)|^2 on the good window (smoothness only)."""
    ks = good_window(trace, conditioning)
    rhs = trace.V[ks] - trace.alpha / 8 * trace.grad_norm_sq[ks]
    return _predicate("nonconvex_descent", ks, trace.V[ks + 1], rhs, trace.V[ks])


def check_window_identities(trace) -> CheckResult:
    """W_{k+1} = W_k - U_k + tau |g_k|^2 and W_k <= tau U_k at every k."""
    K, t = trace.iterations, trace.tau
    U, W, c = trace.U, trace.W, trace.est_norm_sq
    ks = np.arange(K)
    identity = W[:K] - U[:K] + t * c
    scale = np.maximum.reduce([np.abs(W[1:]), np.abs(W[:K]), t * np.abs(U[:K]), t * c])
    err = np.abs(W[1:] - identity) / np.maximum(scale, 1e-300)
    recursion = _predicate("window_recursion", ks, err, np.zeros(K), np.ones(K), eps=IDENTITY_TOL)
    kk = np.arange(K + 1)
    domination = _predicate("window_domination", kk, W, t * U, t * U, eps=IDENTITY_TOL)
    ok = recursion.passed and domination.passed
    firsts = [r.first_violation_k for r in (recursion, domination) if r.first_violation_k is not None]
    return CheckResult("window_identities", ok, min(firsts) if firsts else None,
                       min(recursion.margin_min, domination.margin_min), recursion.n_evaluated + domination.n_evaluated)


@dataclass
class BurnInReport:
    bounded_iterates: CheckResult
    bounded_gradients: CheckResult
    lyapunov_at_tau: CheckResult

    @property
    def passed(self) -> bool:
        return self.bounded_iterates.passed and self.bounded_gradients.passed and self.lyapunov_at_tau.passed

    def as_check(self) -> CheckResult:
        parts = (self.bounded_iterates, self.bounded_gradients, self.lyapunov_at_tau)
        firsts = [p.first_violation_k for p in parts if p.first_violation_k is not None]
        return CheckResult("burn_in", self.passed, min(firsts) if firsts else None,
                           min(p.margin_min for p in parts), sum(p.n_evaluated for p in parts))


def check_burn_in(trace, L: float, B: float, alpha: float, tau: int) -> BurnInReport:
    """|x_k| <= B and |g_k| <= 6LB for 0 <= k <= tau, and V_tau <= 3LB^2 (relative slack)."""
    if trace.iterations < tau + 1:
        raise InsufficientTrace(f"need at least tau + 1 = {tau + 1} iterations, trace has {trace.iterations}")
    ks = np.arange(tau + 1)
    rel = lambda name, lhs, rhs: _predicate(name, ks if np.ndim(lhs) else np.array([tau]),
                                            lhs / max(rhs, 1e-300), 1.0, 1.0)
    x_bound = rel("bounded_iterates", trace.x_norm[ks], B)
    g_bound = rel("bounded_gradients", np.sqrt(trace.est_norm_sq[ks]), 6 * L * B)
    U, W = window_sums(trace.est_norm_sq, tau)
    V_tau = trace.r[tau] + L * alpha ** 2 * W[tau]
    v_bound = rel("lyapunov_at_tau", np.float64(V_tau), 3 * L * B ** 2)
    return BurnInReport(x_bound, g_bound, v_bound)


# --------------------------------------------------------------------------
# rate envelopes


def theory_exponent(kappa: float, tau: int) -> float:
    """Per-iteration exponent 1/(64 tau kappa) of the strongly convex envelope."""
    return 1.0 / (64.0 * tau * kappa)


def prior_iag_exponent(kappa: float, tau: int) -> float:
    """Per-iteration exponent 2 c_tau / (kappa+1)^2 of the earlier IAG bound,
    c_tau = 2 / (25 tau (2 tau + 1)); that bound contracts (1 - c_tau/(kappa+1)^2)^(2K)."""
    c_tau = 2.0 / (25.0 * tau * (2 * tau + 1))
    return 2.0 * c_tau / (kappa + 1) ** 2


def rate_envelope(kind: str, metadata, tau: int, B: Optional[float] = None) -> Callable:
    """Closed-form right-hand side k -> bound.

    ``sc``, ``markov`` and ``iag`` share 6 L B^2 (1 - 1/(64 tau kappa))^k (valid
    for k > tau).  ``nonconvex`` bounds the running average of |grad f|^2 over
    [tau, k) by 768 L^2 B^2 tau / k (valid for k >= 2 tau).
    """
    L = metadata.smoothness
    B = metadata.radius_B if B is None else B
    if kind in ("sc", "markov", "iag"):
        if not metadata.strong_convexity > 0:
            raise InvalidCombination(f"bound {kind!r} needs a strongly convex problem")
        rho = 1.0 - theory_exponent(metadata.condition_number, tau)
        log_rho = math.log(rho)
        return lambda k: 6 * L * B ** 2 * np.exp(np.asarray(k, dtype=float) * log_rho)
    if kind == "nonconvex":
        return lambda k: 768 * L ** 2 * B ** 2 * tau / np.asarray(k, dtype=float)
    raise InvalidArgument(f"unknown bound {kind!r}")


def check_linear_envelope(trace, metadata, B: Optional[float] = None, conditioning=True,
                          name="sc_envelope") -> CheckResult:
    """r_K <= 6LB^2(1 - 1/(64 tau kappa))^K for tau < K <= end of the good prefix."""
    env = rate_envelope("sc", metadata, trace.tau, B)
    end = trace.good_prefix_end if conditioning else trace.iterations
    Ks = np.arange(trace.tau + 1, end + 1)
    rhs = env(Ks)
    return _predicate(name, Ks, trace.r[Ks], rhs, rhs)


def check_nonconvex_envelope(trace, metadata, B: Optional[float] = None, conditioning=True) -> CheckResult:
    """(1/(K-tau)) sum_{k=tau}^{K-1} |grad f(x_k)|^2 <= 768 L^2 B^2 tau / K for 2 tau <= K <= end."""
    t = trace.tau
    env = rate_envelope("nonconvex", metadata, t, B)
    end = trace.good_prefix_end if conditioning else trace.iterations
    Ks = np.arange(2 * t, end + 1)
    if Ks.size == 0:
        return _predicate("nonconvex_envelope", Ks, [], [], [])
    csum = np.concatenate([[0.0], np.cumsum(trace.grad_norm_sq[:trace.iterations])])
    avg = (csum[Ks] - csum[t]) / (Ks - t)
    rhs = env(Ks)
    return _predicate("nonconvex_envelope", Ks, avg, rhs, rhs)


def check_gd_rate(trace, kappa: float) -> CheckResult:
    """r_K <= (1 - 1/kappa)^K r_0 for every K."""
    Ks = np.arange(trace.iterations + 1)
    rhs = (1 - 1 / kappa) ** Ks * trace.r[0]
    return _predicate("gd_rate", Ks, trace.r, rhs, rhs)


def fit_linear_rate(r, start: int = 0, floor: float = 1e-20):
    """Least-squares fit of log r_k = a + k log rho.

    The usable range runs from ``start`` up to the first iteration where r
    drops to ``floor * r[start]`` (the floating-point floor); the fit uses the
    second half of that range.  Returns (rho, (first, last) iteration used).
    """
    r = np.asarray(r, dtype=float)
    ref = r[start]
    below = np.flatnonzero(~(r[start:] > floor * ref))
    stop = start + int(below[0]) if below.size else r.size
    lo = start + (stop - start) // 2
    if stop - lo < 2:
        return float("nan"), (int(lo), int(stop - 1))
    ks = np.arange(lo, stop)
    slope = np.polyfit(ks.astype(float), np.log(r[lo:stop]), 1)[0]
    return float(np.exp(slope)), (int(lo), int(stop - 1))
