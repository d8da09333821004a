from __future__ import annotations

import itertools
import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from ndc_bandit.config import EnvConfig, ExperimentConfig
from ndc_bandit.graph_learner import LearnerConfig
from ndc_bandit.harness import (
    RUN_HEADER,
    RunResult,
    SweepTable,
    TheoremParams,
    bound_terms,
    cumulative_regret,
    gap_extremes,
    optimality_ratio,
    read_run_csv,
    regret_bound,
    run_experiment,
    sweep,
    write_csv,
)
from ndc_bandit.policy import PolicyConfig
from ndc_bandit.sem_env import payoff_coefficients


def small_cfg(**kw) -> ExperimentConfig:
    base = ExperimentConfig(
        env=EnvConfig(n=6, change_points=(150,), delay=5),
        horizon=300,
        policy=PolicyConfig(gamma=0.98, xi=0.05, s=2),
        learner=LearnerConfig(lam=1e-4),
        seeds=(0, 1),
    )
    return replace(base, **kw)


def test_degenerate_instance_has_zero_regret():
    cfg = ExperimentConfig(env=EnvConfig(n=1), horizon=50, policy=PolicyConfig(s=1))
    assert np.all(run_experiment(cfg, 0).regret == 0)


def test_oracle_replay_has_zero_regret_and_full_ratio():
    res = run_experiment(small_cfg(kind="oracle"), 0)
    assert np.all(cumulative_regret(res) == 0)
    assert optimality_ratio(res, 0) == 1.0 and optimality_ratio(res, 1) == 1.0


def test_regret_nonnegative_and_cumulative_consistent():
    res = run_experiment(small_cfg(), 1)
    assert np.all(res.regret >= 0)
    assert res.final_regret == pytest.approx(math.fsum(res.regret), abs=1e-9)
    assert res.horizon == 300 and np.all(res.selected.sum(axis=1) <= 2)


@pytest.mark.slow
def test_paper_protocol_runs_to_completion(synthetic_cfg):
    res = run_experiment(replace(synthetic_cfg, seeds=(0,)), 0)
    assert res.horizon == 5000 and len(res.t) == 5000


@pytest.mark.slow
def test_stationary_ndc_beats_random_on_every_seed():
    cfg = ExperimentConfig(
        env=EnvConfig(n=6, delay=0),
        horizon=3000,
        policy=PolicyConfig(gamma=0.99, xi=1e-10, s=2),
    )
    for sd in range(10):
        ndc = run_experiment(cfg, sd).final_regret
        rnd = run_experiment(replace(cfg, kind="random"), sd).final_regret
        assert ndc < rnd, sd


@pytest.mark.slow
def test_random_policy_regret_slope_matches_mean_gap(synthetic_cfg):
    res = run_experiment(replace(synthetic_cfg, kind="random"), 0)
    expected = 0.0
    for k, means in enumerate(res.schedule.means):
        c = payoff_coefficients(res.dag, means)
        payoffs = [sum(c[list(sub)]) for sub in itertools.combinations(range(10), 4)]
        lo, hi = res.schedule.segment_bounds(k)
        expected += (max(payoffs) - np.mean(payoffs)) * (hi - lo + 1)
    assert res.final_regret == pytest.approx(expected, rel=0.15)


def _manual_result(selected, oracle) -> RunResult:
    T = len(selected)
    return RunResult(
        t=np.arange(1, T + 1),
        selected=np.array(selected, dtype=np.int8),
        payoff=np.zeros(T),
        optimal_payoff=np.zeros(T),
        graph_mse=np.zeros(T),
        solver_iters=np.zeros(T, dtype=int),
        oracle_selected=np.array(oracle, dtype=np.int8),
        segment=np.zeros(T, dtype=int),
    )


def test_optimality_ratio_cases():
    opt = [[1, 1, 0, 0]] * 4
    assert optimality_ratio(_manual_result([[0, 0, 1, 1]] * 4, opt), 0) == 0.0
    half = [[1, 1, 0, 0], [0, 0, 1, 1]] * 2
    assert optimality_ratio(_manual_result(half, opt), 0) == 0.5
    assert optimality_ratio(_manual_result(half, opt), (1, 1)) == 1.0
    with pytest.raises(ValueError):
        optimality_ratio(_manual_result(half, opt), 3)


def test_single_round_gap_curve():
    r = _manual_result([[1, 0]], [[0, 1]])
    r.optimal_payoff[:] = 0.5
    r.payoff[:] = 0.2
    assert cumulative_regret(r) == pytest.approx([0.3])


def test_gap_extremes_against_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 8))
        s = int(rng.integers(1, n + 1))
        c = rng.uniform(0, 1, n)
        vals = [sum(c[list(sub)]) for k in range(0, s + 1) for sub in itertools.combinations(range(n), k)]
        best = max(vals)
        gaps = [best - v for v in vals if best - v > 1e-12]
        lo, hi = gap_extremes(c, s)
        assert lo == pytest.approx(min(gaps), rel=1e-9)
        assert hi == pytest.approx(max(gaps), rel=1e-12)


PARAMS = TheoremParams(
    delta_min=0.05, delta_max=4.0, w_max=1.5, p=2, gamma=0.985, xi=0.1,
    s=5, D=50, upsilon_T=3, T=5000, N=10,
)


def test_bound_precondition_boundary():
    for s in range(1, 12):
        with pytest.raises(ValueError, match=r"Let xi > 1/\(2\(s\+1\)\)"):
            regret_bound(replace(PARAMS, s=s, xi=1 / (2 * (s + 1))))


def test_bound_is_finite_in_valid_regime():
    assert math.isfinite(regret_bound(PARAMS))


def test_bound_upsilon_linearity():
    t0 = bound_terms(replace(PARAMS, upsilon_T=0))
    t3 = bound_terms(replace(PARAMS, upsilon_T=3))
    assert t3["change"] - t0["change"] == 3 * PARAMS.j_gamma
    assert t3["multiplier"] == t0["multiplier"] == PARAMS.N * PARAMS.delta_max


def test_bound_delay_linearity():
    k = 75  # ceil(5000 * 0.015)
    t0 = bound_terms(replace(PARAMS, D=0))
    t50 = bound_terms(replace(PARAMS, D=50))
    assert t50["delay_wait"] - t0["delay_wait"] == k * 50
    assert t50["delay_explore"] == t0["delay_explore"]


def test_bound_delay_term_by_hand():
    p = PARAMS
    k = math.ceil(p.T * (1 - Fraction("0.985")))
    m_T = (1 - p.gamma**p.T) / (1 - p.gamma)
    explore = math.ceil(16 * p.xi * p.s**2 * p.w_max**2 * (p.s + 1) * math.log(m_T) / p.delta_min**2)
    terms = bound_terms(p)
    assert terms["delay"] == pytest.approx(k * (explore * p.gamma ** (-1 / (1 - p.gamma)) + p.D), rel=1e-14)


@pytest.mark.parametrize(
    "field,lo,hi",
    [("D", 0, 400), ("upsilon_T", 0, 7), ("delta_max", 1.0, 9.0), ("w_max", 1.0, 3.0), ("T", 1000, 20000)],
)
def test_bound_monotone(field, lo, hi):
    grid = np.linspace(lo, hi, 9)
    vals = [regret_bound(replace(PARAMS, **{field: type(getattr(PARAMS, field))(v)})) for v in grid]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_bound_rejects_gamma_one():
    with pytest.raises(ValueError):
        regret_bound(replace(PARAMS, gamma=1.0))


def test_csv_header_empty_and_roundtrip(tmp_path):
    write_csv(None, tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == ",".join(RUN_HEADER) + "\n"

    res = run_experiment(small_cfg(), 0)
    path = tmp_path / "run.csv"
    write_csv(res, path)
    rows = read_run_csv(path)
    assert len(rows) == res.horizon
    cum = cumulative_regret(res)
    for k, row in enumerate(rows):
        assert row["t"] == k + 1
        assert row["selected"] == tuple(int(i) + 1 for i in np.flatnonzero(res.selected[k]))
        assert row["regret"] == float(format(res.regret[k], ".12g"))
        assert row["cum_regret"] == float(format(cum[k], ".12g"))
        assert row["solver_iters"] == res.solver_iters[k]
    # A second write of the same result is byte-identical.
    again = tmp_path / "again.csv"
    write_csv(res, again)
    assert again.read_bytes() == path.read_bytes()


def test_csv_write_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        write_csv(None, blocker / "sub" / "out.csv")


def test_sweep_single_cell_equals_run():
    cfg = small_cfg()
    table = sweep(cfg, "delay", [5], seeds=[1])
    assert table.rows == [(5, 1, run_experiment(cfg, 1).final_regret)]


def test_sweep_seed_axis_identical_seeds_zero_std():
    table = sweep(small_cfg(), "seed", [2, 2, 2])
    (value, mean, std), = table.aggregate()
    assert std == 0.0


def test_sweep_delay_axis_summary(tmp_path):
    table = sweep(small_cfg(horizon=160), "delay", [5, 20, 40])
    assert [row[0] for row in table.aggregate()] == [5, 20, 40]
    write_csv(table, tmp_path / "runs.csv", tmp_path / "summary.csv")
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == "axis,value,mean,std" and len(lines) == 4
    assert len((tmp_path / "runs.csv").read_text().splitlines()) == 1 + 3 * 2


def test_sweep_aggregate_population_std():
    table = SweepTable("gamma", [(0.9, 0, 1.0), (0.9, 1, 3.0)])
    assert table.aggregate() == [(0.9, 2.0, 1.0)]


def test_sweep_rejects_unknown_axis():
    with pytest.raises(ValueError):
        sweep(small_cfg(), "lambda", [1.0])


def test_runs_byte_identical(tmp_path):
    for tag in ("a", "b"):
        write_csv(run_experiment(small_cfg(), 0), tmp_path / f"{tag}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_bound_ceilings_use_decimal_gamma():
    # 1 - 0.985 rounds up in binary; the block count must still be 75, not 76.
    t0 = bound_terms(replace(PARAMS, D=0))
    t1 = bound_terms(replace(PARAMS, D=1))
    assert t1["delay_wait"] - t0["delay_wait"] == 75
    assert bound_terms(replace(PARAMS, gamma=0.9, T=100, D=1))["delay_wait"] == 10
