from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndc_bandit.sem_env import (
    CausalDag,
    DelayBuffer,
    FeedbackPair,
    RewardSchedule,
    SemEnvironment,
    env_step,
    expected_payoff,
    gen_random_dag,
    influence_weights,
    oracle_action,
    payoff_coefficients,
    propagate,
    top_s,
)


def test_gen_random_dag_weights_in_range():
    dag = gen_random_dag(10, 0.09, (0.4, 0.7), 7)
    w = dag.weights
    nz = w[w != 0]
    assert np.all((nz >= 0.4) & (nz <= 0.7))
    assert np.all(np.tril(w) == 0)


def test_gen_random_dag_extremes():
    empty = gen_random_dag(3, 0.0, (0.4, 0.7), 0)
    assert np.all(empty.weights == 0) and empty.longest_path == 0
    full = gen_random_dag(4, 1.0, (0.4, 0.7), 0)
    assert full.edge_count == 6 and full.longest_path == 3


def test_gen_random_dag_rejects_bad_range():
    with pytest.raises(ValueError):
        gen_random_dag(3, 0.5, (0.7, 0.4), 0)


def test_gen_random_dag_deterministic():
    a = gen_random_dag(8, 0.3, (0.1, 0.9), 42).weights
    b = gen_random_dag(8, 0.3, (0.1, 0.9), 42).weights
    assert np.array_equal(a, b)


def test_causal_dag_rejects_lower_entries():
    with pytest.raises(ValueError):
        CausalDag(np.array([[0.0, 0.0], [0.5, 0.0]]))


def test_propagate_examples():
    assert np.array_equal(propagate(np.zeros((2, 2)), np.array([0.3, 0.8])), [0.3, 0.8])
    a = np.array([[0.0, 0.5], [0.0, 0.0]])
    assert np.allclose(propagate(a, np.array([1.0, 1.0])), [1.5, 1.0], rtol=0, atol=0)


def test_propagate_matches_neumann_series():
    rng = np.random.default_rng(3)
    dag = gen_random_dag(6, 0.6, (0.2, 0.9), rng)
    z = rng.uniform(size=6)
    series = np.zeros(6)
    term = z.copy()
    for _ in range(dag.longest_path + 1):
        series += term
        term = dag.weights @ term
    assert np.max(np.abs(propagate(dag, z) - series)) <= 1e-12


def test_propagate_residual_thousand_instances():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        dag = gen_random_dag(n, float(rng.uniform(0, 0.3)), (0.0, 1.0), rng)
        z = rng.uniform(0, 1, n)
        y = propagate(dag, z)
        worst = max(worst, float(np.max(np.abs((np.eye(n) - dag.weights) @ y - z))))
    assert worst <= 1e-12


def test_propagate_dimension_mismatch():
    with pytest.raises(ValueError):
        propagate(np.zeros((3, 3)), np.zeros(2))


def test_influence_weights_are_column_sums_of_inverse():
    dag = gen_random_dag(7, 0.5, (0.2, 0.8), 5)
    inv = np.linalg.inv(np.eye(7) - dag.weights)
    assert np.allclose(influence_weights(dag.weights), inv.sum(axis=0), rtol=1e-13, atol=0)


def test_expected_payoff_examples():
    assert expected_payoff(np.zeros((3, 3)), np.full(3, 0.5), np.array([1, 1, 0])) == 1.0
    a = np.array([[0.0, 0.5], [0.0, 0.0]])
    assert expected_payoff(a, np.array([0.4, 0.6]), np.array([0, 1])) == pytest.approx(0.9, abs=1e-15)
    dag = gen_random_dag(5, 0.5, (0.2, 0.8), 1)
    assert expected_payoff(dag, np.full(5, 0.3), np.zeros(5)) == 0.0


def test_oracle_examples():
    assert list(oracle_action(np.zeros((3, 3)), np.array([0.9, 0.1, 0.5]), 2)) == [1, 0, 1]
    assert list(oracle_action(np.zeros((4, 4)), np.full(4, 0.5), 2)) == [1, 1, 0, 0]


def test_oracle_matches_brute_force():
    rng = np.random.default_rng(21)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        s = int(rng.integers(1, min(5, n) + 1))
        dag = gen_random_dag(n, 0.4, (0.1, 0.9), rng)
        means = rng.uniform(size=n)
        c = payoff_coefficients(dag, means)
        best = max(
            sum(c[list(sub)]) for k in range(1, s + 1) for sub in itertools.combinations(range(n), k)
        )
        x = oracle_action(dag, means, s)
        assert c[x == 1].sum() == pytest.approx(best, rel=1e-14)


def test_top_s_puts_inf_first_and_breaks_ties_by_index():
    x = top_s(np.array([1.0, np.inf, 5.0, np.inf, 5.0]), 3)
    assert list(x) == [0, 1, 1, 1, 0]


def test_delay_buffer_fifo():
    buf = DelayBuffer(3)
    released = []
    for t in range(1, 11):
        buf.push(FeedbackPair(t, np.zeros(1), np.zeros(1)))
        for p in buf.pop_ready(t):
            assert p.produced_at == t - 3
            released.append(p.produced_at)
    assert released == list(range(1, 8))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=30))
def test_delay_buffer_variable_delays_release_in_order(delays):
    buf = DelayBuffer(0)
    seen = []
    horizon = len(delays) + 7
    for t in range(1, horizon + 1):
        if t <= len(delays):
            buf.push(FeedbackPair(t, np.zeros(1), np.zeros(1)), delays[t - 1])
        out = buf.pop_ready(t)
        assert [p.produced_at for p in out] == sorted(p.produced_at for p in out)
        for p in out:
            assert p.produced_at + delays[p.produced_at - 1] == t
        seen += [p.produced_at for p in out]
    assert sorted(seen) == list(range(1, len(delays) + 1))


def _env(delay: int, seed: int = 0, horizon: int = 20) -> SemEnvironment:
    dag = gen_random_dag(4, 0.5, (0.4, 0.7), seed)
    sched = RewardSchedule.from_change_points((), np.array([[0.5, 0.5, 0.5, 0.5]]), horizon)
    return SemEnvironment(dag, sched, s=2, delay=delay, seed=seed)


def test_env_step_examples():
    x = np.array([1, 1, 0, 0])
    env = _env(0)
    pair = env_step(env, x, 1)
    assert pair is not None and pair.produced_at == 1

    env = _env(3)
    assert env_step(env, x, 1) is None
    assert env_step(env, x, 2) is None
    assert env_step(env, x, 3) is None
    assert env_step(env, x, 4).produced_at == 1
    assert env_step(env, x, 5).produced_at == 2


def test_env_step_rejects_infeasible():
    with pytest.raises(ValueError, match="infeasible"):
        _env(0).step(np.array([1, 1, 1, 0]), 1)


def test_env_feedback_follows_model():
    env = _env(0, seed=4, horizon=200)
    released = 0
    rng = np.random.default_rng(0)
    for t in range(1, 201):
        x = np.zeros(4, dtype=int)
        x[rng.choice(4, 2, replace=False)] = 1
        for p in env.step(x, t):
            released += 1
            assert set(np.unique(p.z)) <= {0.0, 1.0}
            assert np.all(p.z[x == 0] == 0)
            assert np.allclose((np.eye(4) - env.dag.weights) @ p.y, p.z, atol=1e-12)
    assert released == 200


def test_env_release_count():
    env = _env(7, horizon=30)
    x = np.array([1, 0, 0, 0])
    count = sum(len(env.step(x, t)) for t in range(1, 31))
    assert count == 30 - 7


def test_env_reproducible():
    x = np.array([0, 1, 1, 0])
    a = [env_step(_env(0, seed=9), x, 1).z for _ in range(2)]
    assert np.array_equal(a[0], a[1])


def test_random_delay_extension_bounded():
    dag = gen_random_dag(3, 0.5, (0.4, 0.7), 0)
    sched = RewardSchedule.from_change_points((), np.array([[0.5, 0.5, 0.5]]), 100)
    env = SemEnvironment(dag, sched, s=1, delay=2, max_delay=6, seed=1)
    for t in range(1, 101):
        for p in env.step(np.array([1, 0, 0]), t):
            assert 2 <= t - p.produced_at <= 6


def test_schedule_segments():
    sched = RewardSchedule.from_change_points((4, 8), np.array([[0.1], [0.2], [0.3]]), 10)
    assert [sched.segment_of(t) for t in range(1, 11)] == [0, 0, 0, 1, 1, 1, 1, 2, 2, 2]
    assert sched.n_changes == 2
    assert sched.segment_bounds(1) == (4, 7)
