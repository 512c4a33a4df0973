"""Index streams i_0, i_1, ... and finite Markov chain mixing analysis.

Randomness comes from numpy's PCG64 bit generator seeded through a
``SeedSequence``; replicate ``r`` of an experiment with base seed ``s`` uses
``SeedSequence([s, r])``.  Draws are produced in fixed-size chunks so the
stream is identical whether it is consumed one index at a time or in blocks.
"""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import HorizonExceeded, InvalidArgument, InvalidChain, UncoverablePattern

RNG_ALGORITHM = "numpy.random.PCG64 via SeedSequence([base_seed, replicate])"
KINDS = ("iid_uniform", "markov", "cyclic", "custom_pattern")
_CHUNK = 4096


def make_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(replicate)])))


def validate_transition(P, tol: float = 1e-12) -> np.ndarray:
    """Check P is row-stochastic, irreducible and aperiodic; return it as an array."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise InvalidChain("transition matrix must be square and non-empty")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > tol):
        raise InvalidChain("transition matrix rows must be nonnegative and sum to 1")
    if not is_primitive(P):
        raise InvalidChain("chain is reducible or periodic (no power of P is entrywise positive)")
    return P


def is_primitive(P) -> bool:
    # Wielandt: a primitive n x n matrix has P^m > 0 for m = (n-1)^2 + 1.
    n = P.shape[0]
    M = (np.asarray(P) > 0).astype(np.int64)
    target = (n - 1) ** 2 + 1
    R = np.eye(n, dtype=np.int64)
    base = M.copy()
    while target:
        if target & 1:
            R = np.minimum(R @ base, 1)
        base = np.minimum(base @ base, 1)
        target >>= 1
    return bool(np.all(R > 0))


def stationary_distribution(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(A, rhs, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass
class Sampler:
    """Stateful index generator over [0, n_components).

    ``kind`` is one of iid_uniform, markov, cyclic, custom_pattern.  Markov
    chains start from a state drawn from the stationary distribution unless
    ``start_state`` is given (that option falls outside the stationary
    setting the Markov-sampling bounds assume).
    """

    kind: str
    n_components: int
    rng_seed: int = 0
    transition_matrix: Optional[np.ndarray] = None
    pattern: Optional[Sequence[int]] = None
    start_state: Optional[int] = None
    replicate: int = 0
    state: Optional[int] = field(default=None, init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown sampler kind {self.kind!r}")
        if self.n_components < 1:
            raise InvalidArgument("n_components must be positive")
        n = self.n_components
        self._rng = make_rng(self.rng_seed, self.replicate)
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0
        if self.kind == "markov":
            if self.transition_matrix is None:
                raise InvalidArgument("markov sampler needs a transition matrix")
            P = validate_transition(self.transition_matrix)
            if P.shape[0] != n:
                raise InvalidArgument(f"transition matrix is {P.shape[0]}x{P.shape[0]}, expected {n}")
            self.transition_matrix = P
            self._cum = [list(np.cumsum(row)) for row in P]
            for row in self._cum:
                row[-1] = 1.0
            if self.start_state is None:
                pi_cum = list(np.cumsum(stationary_distribution(P)))
                pi_cum[-1] = 1.0
                self.state = bisect.bisect_right(pi_cum, float(self._rng.random()))
            else:
                if not 0 <= self.start_state < n:
                    raise InvalidArgument("start_state out of range")
                self.state = int(self.start_state)
        elif self.kind == "cyclic":
            self.pattern = list(range(n))
            self.state = 0
        elif self.kind == "custom_pattern":
            if not self.pattern:
                raise InvalidArgument("custom_pattern sampler needs a non-empty pattern")
            self.pattern = [int(i) for i in self.pattern]
            if min(self.pattern) < 0 or max(self.pattern) >= n:
                raise InvalidArgument("pattern indices must lie in [0, n)")
            self.state = 0

    @property
    def deterministic(self) -> bool:
        return self.kind in ("cyclic", "custom_pattern")

    def _fill(self):
        if self.kind == "iid_uniform":
            chunk = self._rng.integers(0, self.n_components, size=_CHUNK, dtype=np.int64)
        elif self.kind == "markov":
            u = self._rng.random(_CHUNK)
            cum = self._cum
            s = self.state
            out = []
            # The first emitted index is the (stationary) start state itself.
            for v in u.tolist():
                out.append(s)
                s = bisect.bisect_right(cum[s], v)
            self.state = s
            chunk = np.array(out, dtype=np.int64)
        else:
            p = self.pattern
            start = self.state
            chunk = np.array([p[(start + j) % len(p)] for j in range(_CHUNK)], dtype=np.int64)
            self.state = (start + _CHUNK) % len(p)
        self._buf = chunk
        self._pos = 0

    def next_index(self) -> int:
        if self._pos >= self._buf.size:
            self._fill()
        i = int(self._buf[self._pos])
        self._pos += 1
        return i

    def draw(self, k: int) -> np.ndarray:
        """The next k indices of the stream."""
        out = np.empty(k, dtype=np.int64)
        filled = 0
        while filled < k:
            if self._pos >= self._buf.size:
                self._fill()
            take = min(k - filled, self._buf.size - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
        return out

    def certified_delay(self) -> int:
        if not self.deterministic:
            raise InvalidArgument("only deterministic samplers have a certified delay")
        return certified_delay(self.pattern, self.n_components)


def sampler_from_spec(spec: dict, n: int, seed: Optional[int] = None, replicate: int = 0) -> Sampler:
    """Build a sampler from its JSON config block (``transition_file`` is a JSON list of rows)."""
    P = spec.get("transition")
    if P is None and spec.get("transition_file"):
        P = load_transition(spec["transition_file"])
    return Sampler(
        kind=spec["kind"],
        n_components=n,
        rng_seed=spec.get("seed", 0) if seed is None else seed,
        transition_matrix=None if P is None else np.asarray(P, dtype=float),
        pattern=spec.get("pattern"),
        start_state=spec.get("start_state"),
        replicate=replicate,
    )


def load_transition(path) -> np.ndarray:
    with open(path) as fh:
        rows = json.load(fh)
    if isinstance(rows, dict):
        rows = rows.get("transition", rows.get("rows"))
    return np.asarray(rows, dtype=float)


def certified_delay(pattern: Sequence[int], n: int) -> int:
    """Smallest tau such that every window of tau consecutive draws of the
    periodic pattern contains every index in [0, n).

    Equal to the largest cyclic gap between successive occurrences of any
    index.
    """
    pattern = [int(i) for i in pattern]
    if not pattern:
        raise InvalidArgument("pattern must be non-empty")
    if min(pattern) < 0 or max(pattern) >= n:
        raise InvalidArgument("pattern indices must lie in [0, n)")
    p = len(pattern)
    positions = [[] for _ in range(n)]
    for pos, i in enumerate(pattern):
        positions[i].append(pos)
    missing = [i for i, ps in enumerate(positions) if not ps]
    if missing:
        raise UncoverablePattern(f"components {missing} never appear in the pattern")
    worst = 0
    for ps in positions:
        gaps = [b - a for a, b in zip(ps, ps[1:])]
        gaps.append(ps[0] + p - ps[-1])
        worst = max(worst, max(gaps))
    return worst


@dataclass
class MixingReport:
    stationary: np.ndarray
    pi_min: float
    d_mix: list
    t_mix: int
    gamma_ps_lower: float

    def to_dict(self) -> dict:
        return {
            "stationary": [float(v) for v in self.stationary],
            "pi_min": self.pi_min,
            "d_mix": [float(v) for v in self.d_mix],
            "t_mix": self.t_mix,
            "gamma_ps_lower": self.gamma_ps_lower,
        }


def analyze_mixing(P, k_max: int = 10_000) -> MixingReport:
    """Exact stationary distribution, d_mix(k) for k = 0..t_mix, and t_mix.

    d_mix(k) = max_i 1/2 sum_j |P^k(i, j) - pi_j| is computed from explicit
    matrix powers.  The pseudo spectral gap is not computed; only its lower
    bound 1/(2 t_mix) is reported.
    """
    P = validate_transition(P)
    if k_max < 1:
        raise InvalidArgument("k_max must be >= 1")
    pi = stationary_distribution(P)
    n = P.shape[0]
    Pk = np.eye(n)
    d_mix = [float(0.5 * np.max(np.abs(Pk - pi).sum(axis=1)))]
    for k in range(1, k_max + 1):
        Pk = Pk @ P
        d_mix.append(float(0.5 * np.max(np.abs(Pk - pi).sum(axis=1))))
        if d_mix[-1] <= 0.25:
            return MixingReport(pi, float(pi.min()), d_mix, k, 1.0 / (2 * k))
    raise HorizonExceeded(f"d_mix did not reach 1/4 within k_max={k_max} steps")


def staleness_profile(indices, n: int) -> np.ndarray:
    """Max staleness max_i (k - tau_{i,k}) at every iteration k of an index stream.

    ``tau_{i,k}`` is the last iteration strictly before k at which i was
    drawn.  A component that has never been drawn counts as last seen at
    iteration -1 (staleness k + 1), so ``profile <= tau`` everywhere iff every
    length-tau window of the stream covers all components.  Accepts a 1-d
    stream or a 2-d (replicate, k) array.
    """
    idx = np.asarray(indices)
    squeeze = idx.ndim == 1
    idx = np.atleast_2d(idx)
    R, K = idx.shape
    if K == 0:
        return np.zeros((R, 0), dtype=np.int64)[0 if squeeze else slice(None)]
    ks = np.arange(K, dtype=np.int64)
    oldest = np.full((R, K), np.iinfo(np.int64).max, dtype=np.int64)
    for i in range(n):
        occ = np.where(idx == i, ks, -1)
        last_incl = np.maximum.accumulate(occ, axis=1)
        before = np.empty_like(last_incl)
        before[:, 0] = -1
        before[:, 1:] = last_incl[:, :-1]
        np.minimum(oldest, before, out=oldest)
    prof = ks - oldest
    return prof[0] if squeeze else prof
