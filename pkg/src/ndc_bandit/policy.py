"""NDC-SEM decision policy, its ablations and a uniform-random baseline.

A policy object is driven by two calls per round::

    x = policy.select(t)           # decision for round t
    policy.update(t, released)     # feedback released at the end of round t

so when round ``t`` is decided the statistics cover rounds up to ``t - 1``
and the feedback produced up to ``t - 1 - D``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .graph_learner import FeedbackHistory, GraphEstimate, LearnerConfig, fit
from .sem_env import FeedbackPair, influence_weights, top_s

__all__ = [
    "PolicyConfig",
    "DiscountedStats",
    "build_init_matrix",
    "advance_round",
    "absorb_feedback",
    "ucb_indices",
    "select_action",
    "selection_weights",
    "NdcSemPolicy",
    "RandomPolicy",
    "OraclePolicy",
    "ndc_sem_step",
    "random_policy_step",
]


@dataclass(frozen=True)
class PolicyConfig:
    """Settings of the NDC-SEM engine.

    ``use_graph=False`` gives the discounted CUCB-style ablation, ``gamma=1``
    the undiscounted one, and ``delay_aware=False`` weights each released
    observation as if it had been produced in the round it arrived.
    """

    gamma: float = 0.985
    xi: float = 1e-10
    s: int = 4
    use_graph: bool = True
    delay_aware: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"policy.gamma must lie in (0, 1], got {self.gamma}")
        if self.xi <= 0:
            raise ValueError(f"policy.xi must be > 0, got {self.xi}")
        if self.s < 1:
            raise ValueError(f"policy.s must be >= 1, got {self.s}")


def build_init_matrix(n: int, s: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    """Upper-triangular 0/1 matrix whose columns are the first ``n`` decisions.

    Column ``i`` (1-based) has a unit diagonal; if ``i <= s`` every entry above
    the diagonal is 1, otherwise ``s - 1`` of them are picked at random.
    """
    if not 1 <= s <= n:
        raise ValueError(f"need 1 <= s <= n, got s={s}, n={n}")
    rng = np.random.default_rng(seed)
    h = np.eye(n, dtype=np.int8)
    for col in range(n):
        if col < s:
            h[:col, col] = 1
        else:
            h[rng.choice(col, size=s - 1, replace=False), col] = 1
    return h


class DiscountedStats:
    """Discounted per-arm observation mass and reward sums.

    ``m_count[i]`` and ``r_sum[i]`` hold the released-observation sums with
    weight ``gamma**(t - tau)``; ``m_total`` is ``sum_{tau<=t} gamma**(t - tau)``.
    """

    def __init__(self, n: int, gamma: float) -> None:
        self.gamma = gamma
        self.m_count = np.zeros(n)
        self.r_sum = np.zeros(n)
        self.m_total = 0.0
        self.round = 0

    def copy(self) -> "DiscountedStats":
        other = DiscountedStats(self.m_count.shape[0], self.gamma)
        other.m_count = self.m_count.copy()
        other.r_sum = self.r_sum.copy()
        other.m_total = self.m_total
        other.round = self.round
        return other


def advance_round(stats: DiscountedStats) -> DiscountedStats:
    g = stats.gamma
    stats.m_count *= g
    stats.r_sum *= g
    stats.m_total = stats.m_total * g + 1.0
    stats.round += 1
    return stats


def absorb_feedback(
    stats: DiscountedStats,
    pair: FeedbackPair,
    x_of_pair: np.ndarray,
    t: int,
    delay: int | None = None,
    delay_aware: bool = True,
) -> DiscountedStats:
    """Add the observations of ``pair`` (produced under ``x_of_pair``) at round ``t``.

    ``delay`` pins the expected production round to ``t - delay``.
    """
    if delay is not None and pair.produced_at != t - delay:
        raise ValueError(
            f"pair produced at round {pair.produced_at} released at {t}, expected {t - delay}"
        )
    if pair.produced_at > t:
        raise ValueError(f"pair produced at {pair.produced_at} cannot be absorbed at {t}")
    weight = stats.gamma ** (t - pair.produced_at) if delay_aware else 1.0
    sel = np.asarray(x_of_pair) == 1
    stats.m_count[sel] += weight
    stats.r_sum[sel] += weight * np.asarray(pair.z, dtype=float)[sel]
    return stats


def ucb_indices(stats: DiscountedStats, cfg: PolicyConfig) -> np.ndarray:
    """Discounted UCB indices; arms never observed get ``+inf``."""
    observed = stats.m_count > 0
    e = np.full(stats.m_count.shape[0], np.inf)
    log_m = max(math.log(stats.m_total), 0.0) if stats.m_total > 0 else 0.0
    m = stats.m_count[observed]
    beta_hat = stats.r_sum[observed] / m
    e[observed] = beta_hat + 2.0 * np.sqrt(cfg.xi * (cfg.s + 1) * log_m / m)
    return e


def selection_weights(a_hat: np.ndarray, allow_cycles: bool = False) -> np.ndarray:
    """``w`` with ``w^T = 1^T (I - A_hat)^{-1}``, after checking invertibility."""
    a_hat = np.asarray(a_hat, dtype=float)
    n = a_hat.shape[0]
    if a_hat.shape != (n, n):
        raise ValueError(f"a_hat must be square, got {a_hat.shape}")
    if not allow_cycles:
        if np.any(np.tril(a_hat) != 0):
            raise ValueError("a_hat must be strictly upper triangular in DAG mode")
        return influence_weights(a_hat)
    rho = float(np.max(np.abs(np.linalg.eigvals(a_hat)))) if n else 0.0
    if rho >= 1.0:
        raise ValueError(f"spectral radius of a_hat is {rho:.6g} >= 1; (I - A_hat) not usable")
    return np.linalg.solve((np.eye(n) - a_hat).T, np.ones(n))


def select_action(
    a_hat: np.ndarray, e: np.ndarray, s: int, allow_cycles: bool = False
) -> np.ndarray:
    """Maximize ``1^T (I - A_hat)^{-1} diag(E) x`` over ``||x||_0 <= s``.

    The objective is linear in ``x`` with coefficients ``w * E`` and
    ``w >= 1`` for a nonnegative ``A_hat``, so the ``s`` largest coefficients
    are optimal.
    """
    w = selection_weights(a_hat, allow_cycles)
    e = np.asarray(e, dtype=float)
    c = np.where(np.isinf(e), np.inf, w * np.where(np.isinf(e), 0.0, e))
    return top_s(c, s)


class NdcSemPolicy:
    """NDC-SEM with switchable graph learning, discounting and delay awareness."""

    def __init__(
        self,
        n: int,
        cfg: PolicyConfig,
        learner: LearnerConfig = LearnerConfig(),
        seed: int | None = None,
        delay: int | None = None,
    ) -> None:
        if cfg.s > n:
            raise ValueError(f"policy.s={cfg.s} exceeds the number of arms {n}")
        self.n = n
        self.cfg = cfg
        self.learner = learner
        self.delay = delay
        self.h = build_init_matrix(n, cfg.s, np.random.default_rng([0 if seed is None else seed, 1]))
        self.stats = DiscountedStats(n, cfg.gamma)
        self.history = FeedbackHistory(n)
        self.a_hat = np.zeros((n, n))
        self.decisions: dict[int, np.ndarray] = {}
        self.last_estimate: Optional[GraphEstimate] = None
        self.last_iters = 0
        self._solves = 0
        self._new_data = False

    def _maybe_solve(self, t: int) -> None:
        self.last_iters = 0
        if not self.cfg.use_graph or len(self.history) == 0:
            return
        if (t - self.n - 1) % self.learner.solve_period != 0 or not self._new_data:
            return
        est = fit(self.history, self.learner, warm_start=self.a_hat)
        self.last_estimate = est
        self.last_iters = est.iterations_used
        if not est.degenerate:
            self.a_hat = est.a_hat
        self._new_data = False
        self._solves += 1

    def select(self, t: int) -> np.ndarray:
        if t <= self.n:
            self.last_iters = 0
            x = self.h[:, t - 1].copy()
        else:
            self._maybe_solve(t)
            e = ucb_indices(self.stats, self.cfg)
            a = self.a_hat if self.cfg.use_graph else np.zeros((self.n, self.n))
            x = select_action(a, e, self.cfg.s, self.learner.allow_cycles)
        self.decisions[t] = x
        return x

    def update(self, t: int, released: Iterable[FeedbackPair]) -> None:
        advance_round(self.stats)
        for pair in released:
            x_of_pair = self.decisions.pop(pair.produced_at)
            absorb_feedback(
                self.stats, pair, x_of_pair, t, delay=self.delay, delay_aware=self.cfg.delay_aware
            )
            if self.cfg.use_graph:
                self.history.append(pair.y, pair.z, pair.produced_at)
                self._new_data = True

    def weights_for(self, x: np.ndarray) -> np.ndarray:
        """Entries of ``1^T (I - A_hat)^{-1} diag(x)`` under the current estimate."""
        a = self.a_hat if self.cfg.use_graph else np.zeros((self.n, self.n))
        return selection_weights(a, self.learner.allow_cycles) * x


def ndc_sem_step(
    policy: NdcSemPolicy, t: int, released: Sequence[FeedbackPair] = ()
) -> np.ndarray:
    """Fold in the feedback released at the end of round ``t - 1``, then decide round ``t``."""
    if t > 1:
        policy.update(t - 1, released)
    return policy.select(t)


def random_policy_step(n: int, s: int, seed: int, t: int) -> np.ndarray:
    """Uniform random ``s``-subset for round ``t``; a pure function of ``(seed, t)``."""
    rng = np.random.default_rng([seed, t])
    x = np.zeros(n, dtype=np.int8)
    x[rng.choice(n, size=min(s, n), replace=False)] = 1
    return x


class RandomPolicy:
    def __init__(self, n: int, s: int, seed: int = 0) -> None:
        self.n = n
        self.s = s
        self.seed = seed
        self.a_hat = np.zeros((n, n))
        self.last_iters = 0

    def select(self, t: int) -> np.ndarray:
        return random_policy_step(self.n, self.s, self.seed, t)

    def update(self, t: int, released: Iterable[FeedbackPair]) -> None:
        pass

    def weights_for(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)


class OraclePolicy:
    """Replays a precomputed action sequence (normally the true oracle's)."""

    def __init__(self, actions: Sequence[np.ndarray], a_hat: np.ndarray | None = None) -> None:
        self.actions = [np.asarray(a, dtype=np.int8) for a in actions]
        n = self.actions[0].shape[0]
        self.a_hat = np.zeros((n, n)) if a_hat is None else np.asarray(a_hat, dtype=float)
        self.last_iters = 0

    def select(self, t: int) -> np.ndarray:
        return self.actions[t - 1]

    def update(self, t: int, released: Iterable[FeedbackPair]) -> None:
        pass

    def weights_for(self, x: np.ndarray) -> np.ndarray:
        return influence_weights(self.a_hat) * x
