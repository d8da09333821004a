"""Experiment orchestration: run loop, regret accounting, regret bound, sweeps, CSV."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .config import EnvConfig, ExperimentConfig
from .graph_learner import FeedbackHistory, graph_mse
from .policy import NdcSemPolicy, OraclePolicy, RandomPolicy, build_init_matrix
from .sem_env import (
    CausalDag,
    RewardSchedule,
    SemEnvironment,
    gen_random_dag,
    oracle_action,
    payoff_coefficients,
    propagate,
)

log = logging.getLogger(__name__)

__all__ = [
    "RUN_HEADER",
    "SWEEP_HEADER",
    "AGGREGATE_HEADER",
    "RunResult",
    "TheoremParams",
    "SweepTable",
    "build_instance",
    "run_experiment",
    "cumulative_regret",
    "optimality_ratio",
    "gap_extremes",
    "measure_theorem_params",
    "bound_terms",
    "regret_bound",
    "sweep",
    "write_csv",
    "read_run_csv",
    "format_float",
    "noise_free_history",
]

RUN_HEADER = ("t", "selected", "regret", "cum_regret", "graph_mse", "solver_iters")
SWEEP_HEADER = ("axis", "value", "seed", "final_regret")
AGGREGATE_HEADER = ("axis", "value", "mean", "std")
SWEEP_AXES = ("delay", "gamma", "xi", "seed")


def format_float(v: float) -> str:
    return format(float(v), ".12g")


def format_arms(x: np.ndarray) -> str:
    return "-".join(str(i + 1) for i in np.flatnonzero(x))


@dataclass
class RunResult:
    """Per-round trace of one run.  Arms are 0-based in ``selected``."""

    t: np.ndarray
    selected: np.ndarray
    payoff: np.ndarray
    optimal_payoff: np.ndarray
    graph_mse: np.ndarray
    solver_iters: np.ndarray
    oracle_selected: np.ndarray
    segment: np.ndarray
    dag: Optional[CausalDag] = None
    schedule: Optional[RewardSchedule] = None
    w_max: float = float("nan")
    seed: int = 0

    @property
    def regret(self) -> np.ndarray:
        return self.optimal_payoff - self.payoff

    @property
    def final_regret(self) -> float:
        return float(cumulative_regret(self)[-1]) if len(self.t) else 0.0

    @property
    def horizon(self) -> int:
        return len(self.t)


def cumulative_regret(result: RunResult) -> np.ndarray:
    return np.cumsum(result.regret)


def optimality_ratio(result: RunResult, segment: int | tuple[int, int]) -> float:
    """Share of the oracle's selected arms that the policy also selected.

    ``segment`` is either a schedule segment index or an inclusive round range.
    """
    if isinstance(segment, tuple):
        lo, hi = segment
        rows = (result.t >= lo) & (result.t <= hi)
    else:
        rows = result.segment == segment
    if not np.any(rows):
        raise ValueError(f"segment {segment!r} contains no rounds")
    sel = result.selected[rows].astype(bool)
    opt = result.oracle_selected[rows].astype(bool)
    denom = int(opt.sum())
    if denom == 0:
        raise ValueError(f"oracle selects no arms in segment {segment!r}")
    return int((sel & opt).sum()) / denom


def build_instance(env: EnvConfig, horizon: int, seed: int) -> tuple[CausalDag, RewardSchedule]:
    inst = env.instance_seed if env.instance_seed is not None else seed
    dag = gen_random_dag(
        env.n, env.edge_density, env.weight_range, np.random.default_rng([inst, 11])
    )
    if env.means is not None:
        schedule = RewardSchedule.from_change_points(env.change_points, np.array(env.means), horizon)
    else:
        schedule = RewardSchedule.random(
            env.n, env.change_points, horizon, env.mean_range, np.random.default_rng([inst, 13])
        )
    return dag, schedule


def _make_policy(cfg: ExperimentConfig, dag: CausalDag, oracle_actions: list[np.ndarray], seed: int):
    n = cfg.env.n
    if cfg.kind == "random":
        return RandomPolicy(n, cfg.policy.s, seed)
    if cfg.kind == "oracle":
        return OraclePolicy(oracle_actions, dag.weights)
    delay = None if cfg.env.max_delay is not None else cfg.env.delay
    return NdcSemPolicy(n, cfg.policy, cfg.learner, seed=seed, delay=delay)


def run_experiment(cfg: ExperimentConfig, seed: int | None = None) -> RunResult:
    """Play ``cfg.horizon`` rounds of the configured policy against a fresh SEM instance."""
    seed = cfg.seeds[0] if seed is None else seed
    T = cfg.horizon
    dag, schedule = build_instance(cfg.env, T, seed)
    s = cfg.policy.s
    env = SemEnvironment(dag, schedule, s, cfg.env.delay, cfg.env.max_delay, seed=seed)

    coeffs = [payoff_coefficients(dag, m) for m in schedule.means]
    best = [oracle_action(dag, m, s) for m in schedule.means]
    best_val = [math.fsum(c[x == 1]) for c, x in zip(coeffs, best)]
    seg_of_t = np.array([schedule.segment_of(t) for t in range(1, T + 1)])
    policy = _make_policy(cfg, dag, [best[k] for k in seg_of_t], seed)

    n = dag.n
    selected = np.zeros((T, n), dtype=np.int8)
    payoff = np.zeros(T)
    optimal = np.zeros(T)
    mse = np.zeros(T)
    iters = np.zeros(T, dtype=int)
    w_max = 0.0
    for t in range(1, T + 1):
        x = policy.select(t)
        k = seg_of_t[t - 1]
        w_max = max(w_max, float(np.max(policy.weights_for(x))))
        selected[t - 1] = x
        # fsum is correctly rounded, so no subset can beat the oracle's sum.
        payoff[t - 1] = math.fsum(coeffs[k][x == 1])
        optimal[t - 1] = best_val[k]
        mse[t - 1] = graph_mse(dag.weights, policy.a_hat)
        iters[t - 1] = policy.last_iters
        policy.update(t, env.step(x, t))
        if t % 1000 == 0:
            log.info("seed %d round %d/%d cum_regret=%.6g", seed, t, T, float(np.sum(optimal[:t] - payoff[:t])))

    return RunResult(
        t=np.arange(1, T + 1),
        selected=selected,
        payoff=payoff,
        optimal_payoff=optimal,
        graph_mse=mse,
        solver_iters=iters,
        oracle_selected=np.array([best[k] for k in seg_of_t], dtype=np.int8),
        segment=seg_of_t,
        dag=dag,
        schedule=schedule,
        w_max=w_max,
        seed=seed,
    )


def noise_free_history(
    dag: CausalDag, s: int, rounds: int, seed: int = 0, b_prob: float = 0.5
) -> FeedbackHistory:
    """Error-free SEM feedback: initialization-matrix decisions, then random ``s``-subsets.

    During the first ``n`` rounds ``b = 1`` so the inputs are exactly the
    columns of the initialization matrix; afterwards ``b ~ Bernoulli(b_prob)``.
    """
    rng = np.random.default_rng(seed)
    n = dag.n
    h = build_init_matrix(n, s, rng)
    hist = FeedbackHistory(n, capacity=rounds)
    for t in range(rounds):
        if t < n:
            z = h[:, t].astype(float)
        else:
            x = np.zeros(n)
            x[rng.choice(n, size=s, replace=False)] = 1.0
            z = x * (rng.random(n) < b_prob)
        hist.append(propagate(dag, z), z)
    return hist


# ---------------------------------------------------------------------------
# regret bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoremParams:
    delta_min: float
    delta_max: float
    w_max: float
    p: int
    gamma: float
    xi: float
    s: int
    D: int
    upsilon_T: int
    T: int
    N: int

    @property
    def eta(self) -> float:
        inner = 1.0 - 1.0 / (2.0 * self.xi * (self.s + 1))
        if inner <= 0:
            raise ValueError(
                f"precondition violated: Let xi > 1/(2(s+1)) "
                f"(xi={self.xi:g}, 1/(2(s+1))={1.0 / (2 * (self.s + 1)):g})"
            )
        return 4.0 * math.sqrt(inner)

    @property
    def m_T_gamma(self) -> float:
        return (1.0 - self.gamma**self.T) / (1.0 - self.gamma)

    @property
    def m_N_gamma(self) -> float:
        return (1.0 - self.gamma**self.N) / (1.0 - self.gamma)

    @property
    def j_gamma(self) -> float:
        arg = (1.0 - self.gamma) * self.xi * (self.s + 1) * math.log(self.m_N_gamma)
        if arg <= 0:
            raise ValueError(f"J(gamma) undefined: log argument {arg:g} <= 0")
        return math.log(arg) / math.log(self.gamma)


def gap_extremes(coeffs: np.ndarray, s: int) -> tuple[float, float]:
    """Smallest positive and largest suboptimality gap of ``x -> coeffs . x`` over ``||x||_0 <= s``.

    For nonnegative coefficients the worst decision is ``x = 0`` and every
    positive gap is a sum of nonnegative single moves (drop a top arm, or swap
    a top arm for an outside one), so the smallest positive single move is the
    smallest positive gap.
    """
    c = np.asarray(coeffs, dtype=float)
    order = np.argsort(-c, kind="stable")
    top, rest = c[order[:s]], c[order[s:]]
    largest = math.fsum(top)
    moves = [top]
    if rest.size:
        moves.append((top[:, None] - rest[None, :]).ravel())
    cand = np.concatenate(moves)
    cand = cand[cand > 0]
    smallest = float(cand.min()) if cand.size else float("nan")
    return smallest, largest


def measure_theorem_params(result: RunResult, cfg: ExperimentConfig) -> TheoremParams:
    """Instance and run quantities the bound depends on, measured on a finished run."""
    if result.dag is None or result.schedule is None:
        raise ValueError("run result carries no instance")
    gaps = [gap_extremes(payoff_coefficients(result.dag, m), cfg.policy.s) for m in result.schedule.means]
    positive = [g[0] for g in gaps if not math.isnan(g[0])]
    if not positive:
        raise ValueError("every decision is optimal in every segment; delta_min undefined")
    return TheoremParams(
        delta_min=min(positive),
        delta_max=max(g[1] for g in gaps),
        w_max=result.w_max,
        p=result.dag.longest_path,
        gamma=cfg.policy.gamma,
        xi=cfg.policy.xi,
        s=cfg.policy.s,
        D=cfg.env.max_delay if cfg.env.max_delay is not None else cfg.env.delay,
        upsilon_T=result.schedule.n_changes,
        T=result.horizon,
        N=result.dag.n,
    )


def bound_terms(params: TheoremParams) -> dict[str, float]:
    """Bracketed sub-terms of the bound and the ``N * delta_max`` multiplier.

    ``bound = (base + change + delay + tail) * multiplier`` where
    ``delay = delay_explore + delay_wait`` and ``delay_wait = ceil(T(1-gamma)) * D``.
    """
    g = params.gamma
    if not 0.0 < g < 1.0:
        raise ValueError(f"gamma must lie in (0, 1) for the bound, got {g}")
    eta = params.eta
    if params.delta_min <= 0:
        raise ValueError("delta_min must be positive")
    s, p, T = params.s, params.p, params.T
    one_m = 1.0 - g
    # Ceilings on the decimal value of gamma: in binary 1 - 0.985 is slightly
    # above 0.015, which would turn ceil(5000 * 0.015) into 76.
    one_m_exact = 1 - Fraction(repr(g))
    k_blocks = math.ceil(T * one_m_exact)
    horizon_blocks = math.ceil(1 / one_m_exact)
    explore = math.ceil(
        16.0 * params.xi * s**2 * params.w_max**2 * (s + 1) * math.log(params.m_T_gamma)
        / params.delta_min**2
    )
    inflate = g ** (-1.0 / one_m)
    # Split so the D-dependent part stays an exact integer.
    delay_explore = k_blocks * explore * inflate
    delay_wait = float(k_blocks * params.D)
    log_ratio = math.ceil(math.log(1.0 / one_m) / math.log1p(eta))
    tail_inner = 1.0 / one_m + float(log_ratio) ** p * T * one_m**p / (1.0 - g ** (1.0 / one_m)) ** p
    tail = 2.0 * float(s) ** p * float(horizon_blocks) ** (2 * s) * tail_inner
    return {
        "base": 1.0,
        "change": params.j_gamma * params.upsilon_T,
        "delay": delay_explore + delay_wait,
        "delay_explore": delay_explore,
        "delay_wait": delay_wait,
        "tail": tail,
        "multiplier": params.N * params.delta_max,
    }


def regret_bound(params: TheoremParams) -> float:
    terms = bound_terms(params)
    inner = math.fsum(terms[k] for k in ("base", "change", "delay_explore", "delay_wait", "tail"))
    return inner * terms["multiplier"]


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepTable:
    axis: str
    rows: list[tuple[Any, int, float]]

    def aggregate(self) -> list[tuple[Any, float, float]]:
        out = []
        values: list[Any] = []
        for v, _, _ in self.rows:
            if v not in values:
                values.append(v)
        for v in values:
            finals = np.array([r for vv, _, r in self.rows if vv == v])
            out.append((v, float(finals.mean()), float(finals.std())))
        return out


def with_axis_value(cfg: ExperimentConfig, axis: str, value: Any) -> ExperimentConfig:
    if axis == "delay":
        return replace(cfg, env=replace(cfg.env, delay=int(value)))
    if axis == "gamma":
        return replace(cfg, policy=replace(cfg.policy, gamma=float(value)))
    if axis == "xi":
        return replace(cfg, policy=replace(cfg.policy, xi=float(value)))
    if axis == "seed":
        return replace(cfg, seeds=(int(value),))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")


def _final_regret(job: tuple[ExperimentConfig, int]) -> float:
    cfg, seed = job
    return run_experiment(cfg, seed).final_regret


def sweep(
    cfg: ExperimentConfig,
    axis: str,
    values: Sequence[Any],
    seeds: Sequence[int] | None = None,
    jobs: int = 1,
) -> SweepTable:
    """Final cumulative regret for every (value, seed) cell, in deterministic order."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    cells: list[tuple[Any, int, ExperimentConfig]] = []
    for v in values:
        c = with_axis_value(cfg, axis, v)
        run_seeds = c.seeds if axis == "seed" else (seeds if seeds is not None else cfg.seeds)
        for sd in run_seeds:
            cells.append((v, int(sd), c))
    work = [(c, sd) for _, sd, c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            finals = list(pool.map(_final_regret, work))
    else:
        finals = [_final_regret(w) for w in work]
    return SweepTable(axis, [(v, sd, f) for (v, sd, _), f in zip(cells, finals)])


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _run_rows(result: RunResult) -> Iterable[list[str]]:
    cum = cumulative_regret(result)
    regret = result.regret
    for k in range(result.horizon):
        yield [
            str(int(result.t[k])),
            format_arms(result.selected[k]),
            format_float(regret[k]),
            format_float(cum[k]),
            format_float(result.graph_mse[k]),
            str(int(result.solver_iters[k])),
        ]


def _open_for_write(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_csv(obj: RunResult | SweepTable | None, path: str | Path, aggregate_path: str | Path | None = None) -> None:
    """Write a run trace or a sweep table.

    ``None`` writes a header-only run file.  For sweeps ``aggregate_path``
    additionally receives the per-value mean/std table.
    """
    path = Path(path)
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(obj, SweepTable):
            w.writerow(SWEEP_HEADER)
            for v, sd, final in obj.rows:
                w.writerow([obj.axis, _fmt_value(v), sd, format_float(final)])
        else:
            w.writerow(RUN_HEADER)
            if obj is not None:
                w.writerows(_run_rows(obj))
    if isinstance(obj, SweepTable) and aggregate_path is not None:
        with _open_for_write(Path(aggregate_path)) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGGREGATE_HEADER)
            for v, mean, std in obj.aggregate():
                w.writerow([obj.axis, _fmt_value(v), format_float(mean), format_float(std)])


def _fmt_value(v: Any) -> str:
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def read_run_csv(path: str | Path) -> list[dict[str, Any]]:
    """Parse a per-round CSV back into typed rows."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RUN_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for rec in reader:
            rows.append(
                {
                    "t": int(rec["t"]),
                    "selected": tuple(int(a) for a in rec["selected"].split("-")) if rec["selected"] else (),
                    "regret": float(rec["regret"]),
                    "cum_regret": float(rec["cum_regret"]),
                    "graph_mse": float(rec["graph_mse"]),
                    "solver_iters": int(rec["solver_iters"]),
                }
            )
        return rows
