"""GD, SGD, SAG, SAGA and IAG on a finite-sum problem, with full run traces.

The memory-based methods keep one stored gradient per component plus their
running sum.  With i = i_k drawn at iteration k,

    SAG / IAG:  g_k = (1/N) (sum_{j != i} stored_j + grad f_i(x_k))
    SAGA:       g_k = grad f_i(x_k) - stored_i + (1/N) sum_j stored_j

and then stored_i <- grad f_i(x_k).  IAG is SAG driven by a deterministic
index sequence.  The update is x_{k+1} = x_k - alpha g_k.

The main loop only records x_k and g_k; suboptimality, true gradients,
gradient errors, window sums and staleness are computed in vectorised form
afterwards (see :class:`RunTrace`).
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .concentration import staleness_bound_iid, staleness_bound_markov
from .diagnostics import window_sums
from .errors import DivergenceError, InvalidArgument, NumericalFault
from .problems import FiniteSumProblem, full_gradient
from .samplers import RNG_ALGORITHM, Sampler, analyze_mixing, staleness_profile

ALGORITHMS = ("gd", "sgd", "sag", "saga", "iag")
MEMORY_ALGORITHMS = ("sag", "saga", "iag")
DIVERGENCE_NORM = 1e12
TRACE_COLUMNS = ("k", "r", "grad_norm_sq", "est_norm_sq", "err_norm_sq",
                 "max_staleness", "U", "W", "V", "sampled_index")


class GradientMemory:
    """Per-component gradient table with a running sum.

    The running sum is updated as ``(S - old) + new`` so that with a single
    component it always equals the stored gradient exactly.
    """

    def __init__(self, n: int, d: int):
        self.stored = np.zeros((n, d))
        self.last_access = np.zeros(n, dtype=np.int64)
        self.ever_sampled = np.zeros(n, dtype=bool)
        self.running_sum = np.zeros(d)

    @property
    def n(self) -> int:
        return self.stored.shape[0]

    def estimate(self, algorithm: str, i: int, grad_i) -> np.ndarray:
        """Estimator for drawing component i with fresh gradient grad_i (no mutation)."""
        if algorithm == "saga":
            return (self.running_sum / self.n - self.stored[i]) + grad_i
        if algorithm in ("sag", "iag"):
            return ((self.running_sum - self.stored[i]) + grad_i) / self.n
        raise InvalidArgument(f"{algorithm!r} has no gradient memory")

    def store(self, i: int, grad_i, k: int):
        self.running_sum = (self.running_sum - self.stored[i]) + grad_i
        self.stored[i] = grad_i
        self.last_access[i] = k
        self.ever_sampled[i] = True

    def step(self, algorithm: str, i: int, grad_i, k: int) -> np.ndarray:
        g = self.estimate(algorithm, i, grad_i)
        self.store(i, grad_i, k)
        return g

    def staleness(self, k: int) -> np.ndarray:
        """k - last access, with never-sampled components counted from -1."""
        return np.where(self.ever_sampled, k - self.last_access, k + 1)

    def check_consistency(self, rtol: float = 1e-10):
        direct = self.stored.sum(axis=0)
        scale = max(1.0, float(np.abs(self.stored).sum()))
        if np.max(np.abs(direct - self.running_sum), initial=0.0) > rtol * scale:
            raise NumericalFault("running gradient sum drifted from the stored table")


def estimate_gradient(algorithm: str, problem: FiniteSumProblem, memory: Optional[GradientMemory],
                      x_k, i_k: int, k: int, freeze: bool = False):
    """One estimator evaluation; returns (g_k, memory) with memory updated in place.

    With ``freeze`` the memory is refreshed but the returned direction is zero
    (used for a frozen burn-in).
    """
    if algorithm == "gd":
        return full_gradient(problem, x_k), memory
    grad_i = np.asarray(problem.component_gradient(int(i_k), x_k), dtype=float)
    if algorithm == "sgd":
        return grad_i, memory
    if memory is None:
        raise InvalidArgument(f"{algorithm} needs a GradientMemory")
    if freeze:
        memory.store(int(i_k), grad_i, k)
        return np.zeros_like(grad_i), memory
    return memory.step(algorithm, int(i_k), grad_i, k), memory


def saga_unbiasedness_oracle(problem: FiniteSumProblem, memory: GradientMemory, x, algorithm: str = "saga"):
    """Average of the estimator over every possible draw i at state (x, memory).

    Memory is not modified.  For SAGA the result equals grad f(x); for SAG it
    equals mean(stored) + (grad f(x) - mean(stored)) / N.
    """
    n = problem.n_components
    total = np.zeros(problem.dimension)
    for i in range(n):
        total += memory.estimate(algorithm, i, np.asarray(problem.component_gradient(i, x), dtype=float))
    return total / n


@dataclass
class RunConfig:
    """Optimizer settings.

    ``step_size_mode``/``tau_mode`` are ``theory`` or ``manual``.  Theory step
    sizes: 1/L (gd), mu/(2 L^2) (sgd), 1/(16 L tau) (memory methods).  Theory
    tau: the iid or Markov staleness bound for random samplers and the
    certified delay for deterministic ones.
    """

    algorithm: str = "saga"
    iterations: int = 1000
    step_size_mode: str = "theory"
    step_size: Optional[float] = None
    tau_mode: str = "theory"
    tau: Optional[int] = None
    delta: float = 0.05
    burn_in_freeze: bool = False
    record_trace: bool = True
    unbiasedness_checkpoints: int = 0
    debug: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgument(f"unknown algorithm {self.algorithm!r}")
        if self.iterations < 0:
            raise InvalidArgument("iterations must be >= 0")
        if self.step_size_mode not in ("theory", "manual") or self.tau_mode not in ("theory", "manual"):
            raise InvalidArgument("step_size_mode and tau_mode must be 'theory' or 'manual'")
        if self.step_size_mode == "manual" and not (self.step_size and self.step_size > 0):
            raise InvalidArgument("manual step size must be positive")
        if self.tau_mode == "manual" and not (self.tau and self.tau >= 1):
            raise InvalidArgument("manual tau must be >= 1")
        if not 0 < self.delta < 1:
            raise InvalidArgument("delta must lie in (0, 1)")


def resolve_parameters(problem: FiniteSumProblem, sampler: Optional[Sampler], config: RunConfig):
    """Return (alpha, tau) for a run."""
    algo = config.algorithm
    md = problem.metadata
    L, mu, n = md.smoothness, md.strong_convexity, problem.n_components
    K = max(1, config.iterations)
    if algo == "iag" and (sampler is None or not sampler.deterministic):
        raise InvalidArgument("iag requires a deterministic (cyclic or custom_pattern) sampler")
    if algo != "gd" and sampler is None:
        raise InvalidArgument(f"{algo} needs a sampler")
    if sampler is not None and sampler.n_components != n:
        raise InvalidArgument("sampler and problem disagree on the number of components")

    if config.tau_mode == "manual":
        tau = int(config.tau)
    elif algo in ("gd", "sgd"):
        tau = 1
    elif sampler.deterministic:
        tau = sampler.certified_delay()
    elif sampler.kind == "markov":
        mix = analyze_mixing(sampler.transition_matrix)
        tau = staleness_bound_markov(mix.t_mix, mix.pi_min, n, K, config.delta)
    else:
        tau = staleness_bound_iid(n, K, config.delta)

    if config.step_size_mode == "manual":
        alpha = float(config.step_size)
    elif algo == "gd":
        alpha = 1.0 / L
    elif algo == "sgd":
        if not mu > 0:
            raise InvalidArgument("theory SGD step size needs strong convexity")
        alpha = mu / (2 * L ** 2)
    else:
        alpha = 1.0 / (16 * L * tau)
    return alpha, tau


@dataclass
class RunTrace:
    """Per-iteration record of a run.

    Arrays indexed by k = 0..K (length K+1): r, grad_norm_sq, U, W, V, x_norm.
    Arrays indexed by k = 0..K-1 (length K): est_norm_sq (|g_k|^2),
    err_norm_sq (|g_k - grad f(x_k)|^2), max_staleness, sampled_index.
    """

    algorithm: str
    alpha: float
    tau: int
    L: float
    mu: float
    B: float
    x_final: np.ndarray
    r: np.ndarray
    grad_norm_sq: np.ndarray
    est_norm_sq: np.ndarray
    err_norm_sq: np.ndarray
    max_staleness: np.ndarray
    U: np.ndarray
    W: np.ndarray
    V: np.ndarray
    x_norm: np.ndarray
    sampled_index: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return int(self.est_norm_sq.size)

    @property
    def good_prefix_end(self) -> int:
        """First k with max staleness above tau (K if none): the good event holds on [0, end)."""
        bad = np.flatnonzero(self.max_staleness > self.tau)
        return int(bad[0]) if bad.size else self.iterations

    @property
    def good_event_held(self) -> bool:
        return self.good_prefix_end == self.iterations

    def rows(self):
        """One row per iteration k = 0..K-1; the final state lives in the metadata."""
        for k in range(self.iterations):
            yield (
                k,
                repr(float(self.r[k])),
                repr(float(self.grad_norm_sq[k])),
                repr(float(self.est_norm_sq[k])),
                repr(float(self.err_norm_sq[k])),
                int(self.max_staleness[k]),
                repr(float(self.U[k])),
                repr(float(self.W[k])),
                repr(float(self.V[k])),
                int(self.sampled_index[k]),
            )

    def write_csv(self, path):
        """Write the trace CSV and a ``<path>.meta.json`` sidecar with run metadata."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            w.writerows(self.rows())
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(self.metadata(), fh, indent=2)

    def metadata(self) -> dict:
        return {
            "schema_version": 1,
            "algorithm": self.algorithm,
            "alpha": self.alpha,
            "tau": self.tau,
            "L": self.L,
            "mu": self.mu,
            "B": self.B,
            "iterations": self.iterations,
            "good_event_held": self.good_event_held,
            "good_prefix_end": self.good_prefix_end,
            "final_r": float(self.r[-1]) if self.r.size else None,
            "final_V": float(self.V[-1]) if self.V.size else None,
            "x_final": [float(v) for v in self.x_final],
            **self.meta,
        }


def run(problem: FiniteSumProblem, sampler: Optional[Sampler], config: RunConfig) -> RunTrace:
    """Run ``config.algorithm`` from x_0 = 0 for ``config.iterations`` steps.

    Raises DivergenceError when |x_k| exceeds 1e12 or becomes non-finite.
    With ``record_trace=False`` only x_final and r_K are filled in.
    """
    alpha, tau = resolve_parameters(problem, sampler, config)
    algo = config.algorithm
    md = problem.metadata
    K, n, d = config.iterations, problem.n_components, problem.dimension
    indices = sampler.draw(K) if algo != "gd" else np.full(K, -1, dtype=np.int64)
    memory = GradientMemory(n, d) if algo in MEMORY_ALGORITHMS else None
    freeze_until = tau if (config.burn_in_freeze and memory is not None) else 0
    keep = config.record_trace
    X = np.empty((K + 1, d)) if keep else None
    G = np.empty((K, d)) if keep else None
    checkpoints = set()
    if config.unbiasedness_checkpoints and memory is not None and K > 0:
        checkpoints = set(np.linspace(0, K - 1, config.unbiasedness_checkpoints).astype(int).tolist())
    unbiased_err = 0.0
    grad_i = problem.component_gradient
    limit = DIVERGENCE_NORM ** 2

    x = np.zeros(d)
    for k in range(K):
        if keep:
            X[k] = x
        i = int(indices[k])
        if algo == "gd":
            g = full_gradient(problem, x)
        else:
            gi = np.asarray(grad_i(i, x), dtype=float)
            if memory is None:
                g = gi
            else:
                if k in checkpoints:
                    unbiased_err = max(unbiased_err, _unbiasedness_error(problem, memory, x, algo))
                if k < freeze_until:
                    memory.store(i, gi, k)
                    g = np.zeros(d)
                else:
                    g = memory.step(algo, i, gi, k)
                if config.debug:
                    memory.check_consistency()
        x = x - alpha * g
        if keep:
            G[k] = g
        s = float(x @ x)
        if not s <= limit:
            raise DivergenceError(f"iterate norm exceeded {DIVERGENCE_NORM:g} at iteration {k + 1}", k + 1)

    meta = {
        "rng": RNG_ALGORITHM,
        "seed": None if sampler is None else sampler.rng_seed,
        "replicate": None if sampler is None else sampler.replicate,
        "sampler": None if sampler is None else sampler.kind,
        "config": asdict(config),
        "problem_family": problem.family,
        "n_components": n,
        "dimension": d,
    }
    if checkpoints:
        meta["unbiasedness_max_rel_error"] = unbiased_err
    B = md.radius_B
    if freeze_until:
        # x_tau = x_0 = 0 with a fresh table and W_tau = 0, so |x*| serves as radius.
        B = float(np.linalg.norm(md.minimizer))

    if not keep:
        empty = np.empty(0)
        r_final = float(problem.suboptimality(x[None, :])[0])
        return RunTrace(algo, alpha, tau, md.smoothness, md.strong_convexity, B, x,
                        np.array([r_final]), empty, empty, empty, np.empty(0, dtype=np.int64),
                        empty, empty, empty, empty, indices, meta)

    X[K] = x
    r = problem.suboptimality(X)
    FG = problem.gradients(X)
    grad_norm_sq = np.einsum("ij,ij->i", FG, FG)
    est_norm_sq = np.einsum("ij,ij->i", G, G)
    E = G - FG[:K]
    err_norm_sq = np.einsum("ij,ij->i", E, E)
    if memory is not None:
        max_staleness = staleness_profile(indices, n)
    else:
        max_staleness = np.zeros(K, dtype=np.int64)
    U, W = window_sums(est_norm_sq, tau)
    V = r + md.smoothness * alpha ** 2 * W
    x_norm = np.sqrt(np.einsum("ij,ij->i", X, X))
    return RunTrace(algo, alpha, tau, md.smoothness, md.strong_convexity, B, x, r, grad_norm_sq,
                    est_norm_sq, err_norm_sq, max_staleness, U, W, V, x_norm, indices, meta)


def _unbiasedness_error(problem, memory, x, algorithm) -> float:
    avg = saga_unbiasedness_oracle(problem, memory, x, algorithm)
    target = full_gradient(problem, x)
    if algorithm != "saga":
        mean_stored = memory.running_sum / memory.n
        target = mean_stored + (target - mean_stored) / memory.n
    comps = problem.component_gradients(x)
    scale = max(np.linalg.norm(target), np.abs(comps).max(initial=0.0), np.abs(memory.stored).max(initial=0.0), 1e-300)
    return float(np.linalg.norm(avg - target) / scale)
