from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndc_bandit.graph_learner import (
    FeedbackHistory,
    LearnerConfig,
    constraint_mask,
    fit,
    graph_mse,
    objective,
)
from ndc_bandit.harness import noise_free_history
from ndc_bandit.sem_env import gen_random_dag, propagate


def _noisy_history(seed: int, rounds: int = 60, n: int = 8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    dag = gen_random_dag(n, 0.3, (0.4, 0.7), rng)
    z = (rng.random((n, rounds)) < 0.5).astype(float)
    y = np.column_stack([propagate(dag, z[:, k]) for k in range(rounds)])
    y += rng.normal(scale=0.05, size=y.shape)
    return dag.weights, y, z


def test_objective_examples():
    dag = gen_random_dag(6, 0.4, (0.4, 0.7), 2)
    hist = noise_free_history(dag, 3, 30, 2)
    assert objective(dag.weights, hist, 0.0) == pytest.approx(0.0, abs=1e-24)
    zero = np.zeros((6, 6))
    assert objective(zero, hist, 5.0) == pytest.approx(np.sum((hist.Y - hist.Z) ** 2), rel=1e-15)
    scalar = FeedbackHistory.from_arrays(np.array([[2.0]]), np.array([[1.0]]))
    assert objective(np.zeros((1, 1)), scalar, 0.3) == 1.0


def test_objective_dimension_mismatch():
    hist = FeedbackHistory.from_arrays(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        objective(np.zeros((3, 3)), hist, 0.0)


def test_gram_statistics_match_direct_products():
    _, y, z = _noisy_history(0)
    hist = FeedbackHistory.from_arrays(y, z)
    assert np.allclose(hist.gram, y @ y.T, rtol=1e-12)
    assert np.allclose(hist.cross, (y - z) @ y.T, rtol=1e-12)
    assert hist.resid_sq == pytest.approx(np.sum((y - z) ** 2), rel=1e-12)


def test_history_rejects_bad_columns():
    hist = FeedbackHistory(2)
    with pytest.raises(ValueError):
        hist.append(np.array([np.nan, 1.0]), np.zeros(2))
    hist.append(np.ones(2), np.ones(2), produced_at=5)
    with pytest.raises(ValueError):
        hist.append(np.ones(2), np.ones(2), produced_at=5)


def test_fit_rejects_empty_history():
    with pytest.raises(ValueError):
        fit(FeedbackHistory(3))


def test_fit_zero_history_is_degenerate():
    hist = FeedbackHistory.from_arrays(np.zeros((3, 4)), np.zeros((3, 4)))
    est = fit(hist)
    assert est.degenerate and np.all(est.a_hat == 0)


def test_fit_recovers_graph():
    for seed in range(5):
        dag = gen_random_dag(10, 0.09, (0.4, 0.7), seed)
        hist = noise_free_history(dag, 4, 200, seed)
        assert graph_mse(dag.weights, fit(hist, LearnerConfig(lam=1e-4)).a_hat) < 1e-4
        est0 = fit(hist, LearnerConfig(lam=0.0, max_iter=5000))
        assert graph_mse(dag.weights, est0.a_hat) < 1e-6


def test_fit_recovers_from_initialization_columns_only():
    dag = gen_random_dag(10, 0.2, (0.4, 0.7), 8)
    hist = noise_free_history(dag, 4, 10, 8)
    est = fit(hist, LearnerConfig(lam=0.0, max_iter=5000))
    assert graph_mse(dag.weights, est.a_hat) < 1e-6


def test_huge_lambda_gives_zero():
    _, y, z = _noisy_history(1)
    est = fit(FeedbackHistory.from_arrays(y, z), LearnerConfig(lam=1e6))
    assert np.all(est.a_hat == 0)


def test_warm_start_not_slower_on_most_seeds():
    wins = 0
    for seed in range(10):
        _, y, z = _noisy_history(seed, rounds=80)
        cfg = LearnerConfig(lam=1e-4, max_iter=2000)
        prev = fit(FeedbackHistory.from_arrays(y[:, :-1], z[:, :-1]), cfg)
        hist = FeedbackHistory.from_arrays(y, z)
        warm = fit(hist, cfg, warm_start=prev.a_hat)
        cold = fit(hist, cfg)
        wins += warm.iterations_used <= cold.iterations_used
    assert wins >= 8


def test_fit_never_worse_than_start_points():
    for seed in range(20):
        _, y, z = _noisy_history(seed, rounds=25)
        hist = FeedbackHistory.from_arrays(y, z)
        rng = np.random.default_rng(seed)
        warm = np.triu(rng.uniform(0, 1, (8, 8)), 1)
        est = fit(hist, LearnerConfig(lam=1e-2, max_iter=50), warm_start=warm)
        f = objective(est.a_hat, hist, 1e-2)
        assert f <= objective(warm, hist, 1e-2) * (1 + 1e-12)
        assert f <= objective(np.zeros((8, 8)), hist, 1e-2) * (1 + 1e-12)


def test_fit_cyclic_mode_keeps_diagonal_zero():
    _, y, z = _noisy_history(5)
    est = fit(FeedbackHistory.from_arrays(y, z), LearnerConfig(allow_cycles=True), record_iterates=True)
    for a in est.iterates:
        assert np.all(np.diag(a) == 0) and np.all(a >= 0)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    n=st.integers(1, 6),
    m=st.integers(1, 20),
    lam=st.sampled_from([0.0, 1e-3, 0.5]),
    cyclic=st.booleans(),
)
def test_iterates_feasible_and_trace_monotone(seed, n, m, lam, cyclic):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(n, m))
    z = rng.normal(size=(n, m))
    est = fit(
        FeedbackHistory.from_arrays(y, z),
        LearnerConfig(lam=lam, max_iter=100, allow_cycles=cyclic),
        record_iterates=True,
    )
    mask = constraint_mask(n, cyclic)
    for a in est.iterates:
        assert np.all(a >= 0) and np.all(a[~mask] == 0)
    assert all(b <= a for a, b in zip(est.objective_trace, est.objective_trace[1:]))


def test_fit_deterministic():
    _, y, z = _noisy_history(3)
    a = fit(FeedbackHistory.from_arrays(y, z)).a_hat
    b = fit(FeedbackHistory.from_arrays(y, z)).a_hat
    assert np.array_equal(a, b)


def test_graph_mse_examples():
    a = np.array([[0.0, 0.5], [0.0, 0.0]])
    assert graph_mse(a, a) == 0.0
    assert graph_mse(a, np.zeros((2, 2))) == 0.0625
    w = gen_random_dag(5, 0.5, (0.4, 0.7), 0).weights
    assert graph_mse(w, np.zeros((5, 5))) == pytest.approx(np.sum(w**2) / 25, rel=1e-15)
    with pytest.raises(ValueError):
        graph_mse(a, np.zeros((3, 3)))
