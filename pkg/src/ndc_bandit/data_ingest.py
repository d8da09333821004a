"""Replay of regional daily case counts as a delayed, non-stationary SEM bandit.

Pipeline: load a ``region,d1,...,dT`` CSV of overall daily cases, fit a
Gaussian KDE per region on a stationary window, draw region-specific daily
cases from it, smooth everything with a centered 7-day average, relabel the
regions cyclically from the change day on, and play NDC-SEM against the result
with a cyclic search space and online lambda selection on held-out days.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph_learner import FeedbackHistory, LearnerConfig, fit
from .harness import RUN_HEADER, format_arms, format_float
from .policy import (
    DiscountedStats,
    PolicyConfig,
    absorb_feedback,
    advance_round,
    build_init_matrix,
    select_action,
    selection_weights,
    ucb_indices,
)
from .sem_env import DelayBuffer, FeedbackPair, check_decision, top_s

__all__ = [
    "REGION_ABBREVIATIONS",
    "RegionSeries",
    "ReplayConfig",
    "KdeModel",
    "ReplayEnvironment",
    "ReplayResult",
    "load_region_csv",
    "sample_csv_path",
    "fit_kde",
    "smooth_7day",
    "build_replay_env",
    "prediction_error",
    "select_lambda",
    "run_replay",
    "write_selections_csv",
    "write_replay_csv",
]

REGION_ABBREVIATIONS = {
    "ABR": "Abruzzo",
    "BAS": "Basilicata",
    "CAL": "Calabria",
    "CAM": "Campania",
    "EMR": "Emilia-Romagna",
    "FVG": "Friuli Venezia Giulia",
    "LAZ": "Lazio",
    "LIG": "Liguria",
    "LOM": "Lombardia",
    "MAR": "Marche",
    "MOL": "Molise",
    "PAB": "Provincia Autonoma di Bolzano",
    "PAT": "Provincia Autonoma di Trento",
    "PIE": "Piemonte",
    "PUG": "Puglia",
    "SAR": "Sardegna / Sardigna",
    "SIC": "Sicilia",
    "TOS": "Toscana",
    "UMB": "Umbria",
    "VDA": "Valle d'Aosta / Vallée d'Aoste",
    "VEN": "Veneto",
}

BANDWIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class RegionSeries:
    names: tuple[str, ...]
    overall: np.ndarray

    def __post_init__(self) -> None:
        overall = np.array(self.overall, dtype=float)
        if overall.ndim != 2 or overall.shape[0] != len(self.names):
            raise ValueError("overall must be a regions x days matrix matching the names")
        if overall.shape[0] < 2:
            raise ValueError("need at least two regions")
        if np.any(~np.isfinite(overall)) or np.any(overall < 0):
            raise ValueError("case counts must be finite and nonnegative")
        overall.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "overall", overall)

    @property
    def n(self) -> int:
        return self.overall.shape[0]

    @property
    def n_days(self) -> int:
        return self.overall.shape[1]


def sample_csv_path() -> Path:
    """Location of the bundled 21-region x 80-day sample."""
    return Path(str(resources.files("ndc_bandit") / "data" / "italy_regions_sample.csv"))


def load_region_csv(path: str | Path) -> RegionSeries:
    """Parse ``region,d1,...,dT``; row numbers in errors count the header as row 1."""
    path = Path(path)
    names: list[str] = []
    rows: list[list[float]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise ValueError(f"{path}: missing header row")
        width = len(header)
        for rowno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise ValueError(f"{path}: row {rowno} has {len(rec)} fields, header has {width}")
            name = rec[0].strip()
            if name in names:
                raise ValueError(f"{path}: row {rowno} duplicates region {name!r}")
            vals = []
            for col, cell in enumerate(rec[1:], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: row {rowno}, column {header[col]}: {cell!r} is not a number"
                    ) from None
                if not math.isfinite(v) or v < 0:
                    raise ValueError(f"{path}: row {rowno}, column {header[col]}: negative or invalid value {cell}")
                vals.append(v)
            names.append(name)
            rows.append(vals)
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two regions, found {len(rows)}")
    return RegionSeries(tuple(names), np.array(rows))


@dataclass(frozen=True)
class KdeModel:
    samples: np.ndarray
    bandwidth: float

    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        idx = rng.integers(0, self.samples.shape[0], size=size)
        return self.samples[idx] + self.bandwidth * rng.standard_normal(size)

    @property
    def mean(self) -> float:
        return float(self.samples.mean())


def fit_kde(samples: Sequence[float]) -> KdeModel:
    """Gaussian KDE with Silverman's bandwidth ``1.06 * sd * m^(-1/5)``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.shape[0] < 2:
        raise ValueError(f"need at least two samples, got {x.shape[0]}")
    bw = 1.06 * float(np.std(x, ddof=1)) * x.shape[0] ** (-0.2)
    return KdeModel(x.copy(), max(bw, BANDWIDTH_FLOOR))


def smooth_7day(series: np.ndarray) -> np.ndarray:
    """Centered 7-day moving average along the last axis; the window shrinks at the edges."""
    x = np.asarray(series, dtype=float)
    if x.shape[-1] < 1:
        raise ValueError("series must have at least one value")
    n = x.shape[-1]
    csum = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1)
    idx = np.arange(n)
    lo = np.maximum(idx - 3, 0)
    hi = np.minimum(idx + 4, n)
    return (csum[..., hi] - csum[..., lo]) / (hi - lo)


@dataclass(frozen=True)
class ReplayConfig:
    horizon: int = 80
    s: int = 5
    delay_days: int = 3
    change_day: int = 40
    kde_window: tuple[int, int] = (0, 20)
    shift_k: Optional[int] = None
    block_length: int = 10
    n_blocks: int = 8
    lambda_grid: tuple[float, ...] = tuple(10.0**k for k in range(-2, 8))
    gamma: float = 0.85
    xi: float = 0.1
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError(f"replay.horizon must be >= 1, got {self.horizon}")
        if not 1 <= self.change_day <= self.horizon:
            raise ValueError(f"replay.change_day {self.change_day} outside 1..{self.horizon}")
        lo, hi = self.kde_window
        if not 0 <= lo < hi or hi - lo < 2:
            raise ValueError(f"replay.kde_window must span at least two days, got {self.kde_window}")
        if self.delay_days < 0:
            raise ValueError("replay.delay_days must be >= 0")
        if self.block_length < 1 or self.n_blocks < 0:
            raise ValueError("replay validation blocks must be positive")
        if not self.lambda_grid or any(l < 0 for l in self.lambda_grid):
            raise ValueError("replay.lambda_grid must be a non-empty list of nonnegative values")

    @property
    def validation_days(self) -> tuple[int, ...]:
        """Last day of each block (1-based), clipped to the horizon."""
        days = [(b + 1) * self.block_length for b in range(self.n_blocks)]
        return tuple(d for d in days if d <= self.horizon)


class ReplayEnvironment:
    """Environment with the same ``step(x, t)`` contract as :class:`SemEnvironment`.

    ``instantaneous[t-1]`` and ``overall[t-1]`` are the per-region values of day
    ``t`` after smoothing and relabelling.
    """

    def __init__(
        self,
        names: Sequence[str],
        instantaneous: np.ndarray,
        overall: np.ndarray,
        expected: np.ndarray,
        s: int,
        delay: int,
        shift_k: int,
        change_day: int,
        norm_range: tuple[float, float],
    ) -> None:
        self.names = tuple(names)
        self.instantaneous = instantaneous
        self.overall = overall
        self.expected = expected
        self.s = s
        self.delay = delay
        self.shift_k = shift_k
        self.change_day = change_day
        self.norm_range = norm_range
        self.buffer = DelayBuffer(delay)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def horizon(self) -> int:
        return self.instantaneous.shape[0]

    def means_at(self, t: int) -> np.ndarray:
        return self.expected[t - 1]

    def normalize(self, v: np.ndarray) -> np.ndarray:
        lo, hi = self.norm_range
        return np.clip((np.asarray(v, dtype=float) - lo) / (hi - lo), 0.0, 1.0)

    def step(self, x: np.ndarray, t: int) -> list[FeedbackPair]:
        x = check_decision(x, self.n, self.s)
        if not 1 <= t <= self.horizon:
            raise ValueError(f"day {t} outside 1..{self.horizon}")
        z = self.instantaneous[t - 1] * x
        self.buffer.push(FeedbackPair(t, z, self.overall[t - 1].copy()))
        return self.buffer.pop_ready(t)


def _relabel(values: np.ndarray, shift_k: int, change_day: int) -> np.ndarray:
    """Rows are days; from ``change_day`` on region ``i`` takes region ``(i + k) mod N``'s column."""
    out = values.copy()
    n = values.shape[1]
    perm = (np.arange(n) + shift_k) % n
    out[change_day - 1 :] = values[change_day - 1 :][:, perm]
    return out


def build_replay_env(series: RegionSeries, cfg: ReplayConfig, seed: int = 0) -> ReplayEnvironment:
    if cfg.horizon > series.n_days:
        raise ValueError(f"horizon {cfg.horizon} exceeds the {series.n_days} recorded days")
    if not 1 <= cfg.change_day <= cfg.horizon:
        raise ValueError(f"change_day {cfg.change_day} outside 1..{cfg.horizon}")
    lo, hi = cfg.kde_window
    if hi > series.n_days:
        raise ValueError(f"kde_window {cfg.kde_window} exceeds the recorded days")
    if cfg.s > series.n:
        raise ValueError(f"s={cfg.s} exceeds the {series.n} regions")
    rng = np.random.default_rng(seed)
    n, T = series.n, cfg.horizon
    shift_k = cfg.shift_k if cfg.shift_k is not None else int(rng.integers(1, n))

    window = series.overall[:, lo:hi]
    kdes = [fit_kde(row) for row in window]
    draws = np.column_stack([np.maximum(k.sample(rng, T), 0.0) for k in kdes])
    instantaneous = smooth_7day(draws.T).T
    overall = smooth_7day(series.overall[:, :T]).T
    expected = np.tile([k.mean for k in kdes], (T, 1))

    norm = (float(window.min()), float(window.max()))
    if norm[1] <= norm[0]:
        norm = (norm[0], norm[0] + 1.0)
    return ReplayEnvironment(
        series.names,
        _relabel(instantaneous, shift_k, cfg.change_day),
        _relabel(overall, shift_k, cfg.change_day),
        _relabel(expected, shift_k, cfg.change_day),
        cfg.s,
        cfg.delay_days,
        shift_k,
        cfg.change_day,
        norm,
    )


def _predict(a_hat: np.ndarray, z: np.ndarray) -> np.ndarray:
    n = a_hat.shape[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(a_hat)))) if n else 0.0
    if rho >= 1.0:
        raise ValueError(f"spectral radius of a_hat is {rho:.6g} >= 1; (I - A_hat) not usable")
    return np.linalg.solve(np.eye(n) - a_hat, z)


def prediction_error(
    validation_days: Sequence[int],
    y_true: np.ndarray,
    a_hat: np.ndarray,
    z: np.ndarray,
) -> float:
    """Mean absolute error per region and day of ``(I - A_hat)^{-1} z`` against ``y``.

    ``y_true`` and ``z`` hold one column per validation day.
    """
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    k = len(validation_days)
    if k == 0:
        raise ValueError("validation set is empty")
    if y_true.shape != z.shape or y_true.shape[1] != k:
        raise ValueError(f"need {k} columns of y and z, got {y_true.shape} and {z.shape}")
    y_hat = _predict(np.asarray(a_hat, dtype=float), z)
    return float(np.abs(y_true - y_hat).sum() / (y_true.shape[0] * k))


def select_lambda(errors: Sequence[float], grid: Sequence[float]) -> int:
    """Index of the smallest error; ties go to the smaller lambda."""
    order = sorted(range(len(grid)), key=lambda i: grid[i])
    best = order[0]
    for i in order[1:]:
        if errors[i] < errors[best]:
            best = i
    return best


@dataclass
class ReplayResult:
    names: tuple[str, ...]
    selected: np.ndarray
    lambdas: np.ndarray
    errors: np.ndarray
    solver_iters: np.ndarray
    a_hat: np.ndarray
    shift_k: int
    change_day: int
    expected: np.ndarray
    fallbacks: int = 0
    regret: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def horizon(self) -> int:
        return self.selected.shape[0]

    def modal_set(self, first_day: int, last_day: int) -> frozenset[int]:
        counts = Counter(
            frozenset(np.flatnonzero(self.selected[d - 1]).tolist()) for d in range(first_day, last_day + 1)
        )
        return counts.most_common(1)[0][0]


def run_replay(series: RegionSeries, cfg: ReplayConfig = ReplayConfig(), seed: int = 0) -> ReplayResult:
    """Play NDC-SEM on the replay environment for ``cfg.horizon`` days."""
    env = build_replay_env(series, cfg, seed)
    n, T = env.n, env.horizon
    pcfg = PolicyConfig(gamma=cfg.gamma, xi=cfg.xi, s=cfg.s)
    h = build_init_matrix(n, cfg.s, np.random.default_rng([seed, 1]))
    stats = DiscountedStats(n, cfg.gamma)
    train = FeedbackHistory(n)
    val_days: list[int] = []
    val_y: list[np.ndarray] = []
    val_z: list[np.ndarray] = []
    validation = set(cfg.validation_days)
    grid = list(cfg.lambda_grid)
    learners = [LearnerConfig(lam=l, tol=cfg.tol, max_iter=cfg.max_iter, allow_cycles=True) for l in grid]
    estimates = [np.zeros((n, n)) for _ in grid]
    a_hat = np.zeros((n, n))
    decisions: dict[int, np.ndarray] = {}

    selected = np.zeros((T, n), dtype=np.int8)
    lambdas = np.full(T, np.nan)
    errors = np.full(T, np.nan)
    iters = np.zeros(T, dtype=int)
    fallbacks = 0
    fresh = False
    lam_now = math.nan

    for t in range(1, T + 1):
        if t <= n:
            x = h[:, t - 1].copy()
        else:
            if fresh and len(train):
                iters_by = []
                for j, lc in enumerate(learners):
                    est = fit(train, lc, warm_start=estimates[j])
                    estimates[j] = est.a_hat
                    iters_by.append(est.iterations_used)
                fresh = False
                if val_days:
                    errs = []
                    for est in estimates:
                        try:
                            errs.append(
                                prediction_error(val_days, np.column_stack(val_y), est, np.column_stack(val_z))
                            )
                        except ValueError:
                            errs.append(math.inf)
                    j = select_lambda(errs, grid)
                    errors[t - 1] = errs[j]
                else:
                    j = 0
                lam_now = grid[j]
                iters[t - 1] = iters_by[j]
                try:
                    selection_weights(estimates[j], allow_cycles=True)
                    a_hat = estimates[j]
                except ValueError:
                    # Keep the last usable estimate when (I - A_hat) has no
                    # nonnegative Neumann expansion.
                    fallbacks += 1
            e = ucb_indices(stats, pcfg)
            x = select_action(a_hat, e, cfg.s, allow_cycles=True)
            lambdas[t - 1] = lam_now
        selected[t - 1] = x
        decisions[t] = x
        released = env.step(x, t)
        advance_round(stats)
        for pair in released:
            xp = decisions.pop(pair.produced_at)
            scaled = FeedbackPair(pair.produced_at, env.normalize(pair.z) * xp, pair.y)
            absorb_feedback(stats, scaled, xp, t, delay=cfg.delay_days)
            if pair.produced_at in validation:
                val_days.append(pair.produced_at)
                val_y.append(pair.y)
                val_z.append(pair.z)
            else:
                train.append(pair.y, pair.z, pair.produced_at)
                fresh = True

    # Regret against the best decision under the final estimate and the true
    # expected region-specific cases.
    w = selection_weights(a_hat, allow_cycles=True)
    regret = np.zeros(T)
    for t in range(1, T + 1):
        c = w * env.means_at(t)
        best = top_s(c, cfg.s)
        regret[t - 1] = math.fsum(c[best == 1]) - math.fsum(c[selected[t - 1] == 1])

    return ReplayResult(
        names=env.names,
        selected=selected,
        lambdas=lambdas,
        errors=errors,
        solver_iters=iters,
        a_hat=a_hat,
        shift_k=env.shift_k,
        change_day=cfg.change_day,
        expected=env.expected,
        fallbacks=fallbacks,
        regret=regret,
    )


def write_selections_csv(result: ReplayResult, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("day", "selected_regions"))
        for d in range(result.horizon):
            regions = [result.names[i] for i in np.flatnonzero(result.selected[d])]
            w.writerow((d + 1, "-".join(regions)))


def write_replay_csv(result: ReplayResult, path: str | Path) -> None:
    """Per-day trace in the run CSV schema; ``graph_mse`` is ``nan`` (no ground-truth graph)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cum = np.cumsum(result.regret)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_HEADER)
        for d in range(result.horizon):
            w.writerow(
                (
                    d + 1,
                    format_arms(result.selected[d]),
                    format_float(result.regret[d]),
                    format_float(cum[d]),
                    "nan",
                    int(result.solver_iters[d]),
                )
            )
