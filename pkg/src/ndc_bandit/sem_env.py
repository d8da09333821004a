"""Structural-equation environment for delayed combinatorial semi-bandits.

Every base arm ``i`` draws an instantaneous Bernoulli reward ``b[i]`` each
round.  Selected arms pass their reward in as exogenous input
``z = diag(b) x`` and the overall rewards follow the linear SEM
``y = A y + z``.  ``A`` is strictly upper triangular, so ``(I - A)`` is
unit upper triangular and every solve is a back-substitution.

Arms are 0-based inside the library; 1-based labels only appear in CSV output.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "CausalDag",
    "RewardSchedule",
    "FeedbackPair",
    "DelayBuffer",
    "SemEnvironment",
    "gen_random_dag",
    "longest_path_length",
    "propagate",
    "influence_weights",
    "payoff_coefficients",
    "expected_payoff",
    "top_s",
    "oracle_action",
    "env_step",
    "check_decision",
]


def longest_path_length(weights: np.ndarray) -> int:
    """Number of edges on the longest directed path of a DAG adjacency matrix.

    ``weights[i, j] != 0`` is the edge ``j -> i``.  Vertices are assumed to be
    topologically indexed (strictly upper triangular), which the DP relies on.
    """
    n = weights.shape[0]
    depth = np.zeros(n, dtype=int)
    # Edge j -> i with j > i: process sources from the highest index down.
    for i in range(n - 1, -1, -1):
        parents = np.nonzero(weights[i, i + 1 :])[0] + i + 1
        if parents.size:
            depth[i] = depth[parents].max() + 1
    return int(depth.max()) if n else 0


@dataclass(frozen=True)
class CausalDag:
    """Weighted, strictly upper-triangular adjacency matrix.

    ``weights[i, j]`` is the causal impact of arm ``j``'s overall reward on
    arm ``i``'s.
    """

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise ValueError(f"adjacency must be a non-empty square matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("adjacency contains non-finite entries")
        if np.any(w < 0):
            raise ValueError("adjacency weights must be nonnegative")
        if np.any(np.tril(w) != 0):
            raise ValueError("adjacency must be strictly upper triangular")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def longest_path(self) -> int:
        return longest_path_length(self.weights)

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(self.weights))


def gen_random_dag(
    n: int,
    edge_density: float,
    weight_range: tuple[float, float] = (0.4, 0.7),
    seed: int | np.random.Generator | None = None,
) -> CausalDag:
    """Random DAG: each above-diagonal entry is an edge with prob. ``edge_density``.

    Edge weights are uniform on ``weight_range``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= edge_density <= 1.0:
        raise ValueError(f"edge_density must lie in [0, 1], got {edge_density}")
    lo, hi = weight_range
    if lo < 0 or lo > hi:
        raise ValueError(f"invalid weight range ({lo}, {hi}); need 0 <= lo <= hi")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    mask = rng.random(iu[0].size) < edge_density
    values = rng.uniform(lo, hi, size=iu[0].size)
    w = np.zeros((n, n))
    w[iu] = np.where(mask, values, 0.0)
    return CausalDag(w)


@dataclass(frozen=True)
class RewardSchedule:
    """Piecewise-constant expected instantaneous rewards.

    ``starts[k]`` is the first round (1-based) of segment ``k`` and
    ``means[k]`` its mean vector.  The last segment runs to ``horizon``.
    """

    starts: tuple[int, ...]
    means: np.ndarray
    horizon: int

    def __post_init__(self) -> None:
        starts = tuple(int(s) for s in self.starts)
        means = np.atleast_2d(np.array(self.means, dtype=float))
        if not starts or starts[0] != 1:
            raise ValueError("first segment must start at round 1")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError(f"segment starts must be strictly increasing, got {starts}")
        if starts[-1] > self.horizon:
            raise ValueError(f"segment start {starts[-1]} beyond horizon {self.horizon}")
        if means.shape[0] != len(starts):
            raise ValueError(f"{len(starts)} segment starts but {means.shape[0]} mean vectors")
        if np.any((means < 0) | (means > 1)) or not np.all(np.isfinite(means)):
            raise ValueError("segment means must lie in [0, 1]")
        means.setflags(write=False)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "means", means)

    @classmethod
    def from_change_points(
        cls,
        change_points: Sequence[int],
        means: np.ndarray,
        horizon: int,
    ) -> "RewardSchedule":
        return cls((1, *change_points), means, horizon)

    @classmethod
    def random(
        cls,
        n: int,
        change_points: Sequence[int],
        horizon: int,
        mean_range: tuple[float, float] = (0.1, 0.9),
        seed: int | np.random.Generator | None = None,
    ) -> "RewardSchedule":
        """Fresh uniform means for every segment."""
        rng = np.random.default_rng(seed)
        lo, hi = mean_range
        means = rng.uniform(lo, hi, size=(len(change_points) + 1, n))
        return cls.from_change_points(change_points, means, horizon)

    @property
    def n(self) -> int:
        return self.means.shape[1]

    @property
    def n_segments(self) -> int:
        return len(self.starts)

    @property
    def n_changes(self) -> int:
        return len(self.starts) - 1

    def segment_of(self, t: int) -> int:
        return int(np.searchsorted(self.starts, t, side="right")) - 1

    def segment_bounds(self, k: int) -> tuple[int, int]:
        """Inclusive round range ``(first, last)`` of segment ``k``."""
        if not 0 <= k < self.n_segments:
            raise IndexError(f"segment {k} out of range (have {self.n_segments})")
        last = self.starts[k + 1] - 1 if k + 1 < self.n_segments else self.horizon
        return self.starts[k], last

    def means_at(self, t: int) -> np.ndarray:
        return self.means[self.segment_of(t)]


@dataclass(frozen=True)
class FeedbackPair:
    produced_at: int
    z: np.ndarray
    y: np.ndarray


class DelayBuffer:
    """Holds feedback until its release round.

    With a constant delay this is a plain FIFO.  Variable delays are supported
    by keying on ``(release_round, produced_at)`` so pairs released together
    come out in production order.
    """

    def __init__(self, delay: int = 0) -> None:
        if delay < 0:
            raise ValueError(f"delay must be nonnegative, got {delay}")
        self.delay = delay
        self._heap: list[tuple[int, int, FeedbackPair]] = []

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, pair: FeedbackPair, delay: int | None = None) -> None:
        d = self.delay if delay is None else delay
        if d < 0:
            raise ValueError(f"delay must be nonnegative, got {d}")
        heapq.heappush(self._heap, (pair.produced_at + d, pair.produced_at, pair))

    def pop_ready(self, t: int) -> list[FeedbackPair]:
        out = []
        while self._heap and self._heap[0][0] <= t:
            out.append(heapq.heappop(self._heap)[2])
        out.sort(key=lambda p: p.produced_at)
        return out


def _check_square(a: np.ndarray, n: int) -> None:
    if a.shape != (n, n):
        raise ValueError(f"dimension mismatch: matrix {a.shape} vs vector length {n}")


def propagate(dag: CausalDag | np.ndarray, z: np.ndarray) -> np.ndarray:
    """Solve ``(I - A) y = z`` by back-substitution."""
    a = dag.weights if isinstance(dag, CausalDag) else np.asarray(dag, dtype=float)
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    _check_square(a, n)
    y = np.empty(n)
    for i in range(n - 1, -1, -1):
        y[i] = z[i] + a[i, i + 1 :] @ y[i + 1 :]
    return y


def influence_weights(a: np.ndarray) -> np.ndarray:
    """Column sums of ``(I - A)^{-1}``, i.e. ``w`` with ``w^T = 1^T (I - A)^{-1}``.

    ``w[j]`` is the total overall reward produced by one unit of exogenous
    input at arm ``j``.  Solved as ``(I - A)^T w = 1`` by forward substitution.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    w = np.empty(n)
    for j in range(n):
        w[j] = 1.0 + a[:j, j] @ w[:j]
    return w


def payoff_coefficients(dag: CausalDag | np.ndarray, means: np.ndarray) -> np.ndarray:
    """Coefficients ``c`` of the linear payoff ``mu(x) = c . x``."""
    a = dag.weights if isinstance(dag, CausalDag) else np.asarray(dag, dtype=float)
    means = np.asarray(means, dtype=float)
    _check_square(a, means.shape[0])
    return influence_weights(a) * means


def expected_payoff(dag: CausalDag | np.ndarray, means: np.ndarray, x: np.ndarray) -> float:
    """``1^T (I - A)^{-1} diag(means) x``."""
    means = np.asarray(means, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape != means.shape:
        raise ValueError(f"dimension mismatch: means {means.shape} vs x {x.shape}")
    return float(propagate(dag, means * x).sum())


def top_s(scores: np.ndarray, s: int) -> np.ndarray:
    """0/1 vector marking the ``s`` largest scores, ties to the lowest index.

    ``+inf`` scores compare above every finite one.
    """
    scores = np.asarray(scores, dtype=float)
    if np.any(np.isnan(scores)):
        raise ValueError("scores contain NaN")
    # Stable sort on the negated scores keeps index order within ties.
    order = np.argsort(-scores, kind="stable")
    x = np.zeros(scores.shape[0], dtype=np.int8)
    x[order[: min(s, scores.shape[0])]] = 1
    return x


def oracle_action(dag: CausalDag | np.ndarray, means: np.ndarray, s: int) -> np.ndarray:
    """Exact payoff maximizer over ``{x : ||x||_0 <= s}``."""
    if s < 1:
        raise ValueError(f"s must be >= 1, got {s}")
    return top_s(payoff_coefficients(dag, means), s)


def check_decision(x: np.ndarray, n: int, s: int) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (n,):
        raise ValueError(f"decision vector must have length {n}, got shape {x.shape}")
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("decision vector must be 0/1")
    k = int(np.count_nonzero(x))
    if k > s:
        raise ValueError(f"infeasible decision: {k} arms selected, sparsity limit is {s}")
    return x.astype(np.int8)


DelaySampler = Callable[[np.random.Generator, int], int]


@dataclass
class SemEnvironment:
    """Bernoulli SEM bandit with delayed semi-bandit feedback.

    The full reward vector ``b`` is drawn every round whether or not an arm is
    selected, so the random stream does not depend on the policy.  This makes
    paired comparisons between policies on the same seed meaningful.

    ``max_delay`` switches on per-round random delays drawn uniformly from
    ``[delay, max_delay]``.
    """

    dag: CausalDag
    schedule: RewardSchedule
    s: int
    delay: int = 0
    max_delay: Optional[int] = None
    seed: int | None = None
    rng: np.random.Generator = field(init=False, repr=False)
    buffer: DelayBuffer = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.dag.n != self.schedule.n:
            raise ValueError(f"DAG has {self.dag.n} arms, schedule has {self.schedule.n}")
        if self.s < 1:
            raise ValueError(f"s must be >= 1, got {self.s}")
        if self.max_delay is not None and self.max_delay < self.delay:
            raise ValueError("max_delay must be >= delay")
        self.rng = np.random.default_rng(self.seed)
        self._delay_rng = np.random.default_rng([0 if self.seed is None else self.seed, 7919])
        self.buffer = DelayBuffer(self.delay)

    @property
    def n(self) -> int:
        return self.dag.n

    @property
    def horizon(self) -> int:
        return self.schedule.horizon

    def sample_rewards(self, t: int) -> np.ndarray:
        return (self.rng.random(self.n) < self.schedule.means_at(t)).astype(float)

    def step(self, x: np.ndarray, t: int) -> list[FeedbackPair]:
        """Play ``x`` at round ``t``; return every pair whose release round is ``t``."""
        x = check_decision(x, self.n, self.s)
        if not 1 <= t <= self.horizon:
            raise ValueError(f"round {t} outside horizon 1..{self.horizon}")
        b = self.sample_rewards(t)
        z = b * x
        y = propagate(self.dag, z)
        d = None
        if self.max_delay is not None:
            d = int(self._delay_rng.integers(self.delay, self.max_delay + 1))
        self.buffer.push(FeedbackPair(t, z, y), d)
        return self.buffer.pop_ready(t)


def env_step(env: SemEnvironment, x: np.ndarray, t: int) -> Optional[FeedbackPair]:
    """Single-pair form of :meth:`SemEnvironment.step` for constant delays."""
    released = env.step(x, t)
    if len(released) > 1:
        raise RuntimeError("several pairs released in one round; use SemEnvironment.step")
    return released[0] if released else None
