"""TOML experiment configuration.

Layout (every key optional unless noted)::

    horizon = 5000            # required, T > env.n
    seeds = [0, 1, 2]
    output = "runs/synthetic"

    [env]
    n = 10                    # required
    edge_density = 0.09
    weight_range = [0.4, 0.7]
    change_points = [1000, 2500, 4000]
    mean_range = [0.1, 0.9]   # per-segment means drawn uniformly from here
    means = [[...], ...]      # explicit segment means, overrides mean_range
    delay = 50
    max_delay = 60            # enables random delays in [delay, max_delay]
    instance_seed = 0         # fixes DAG + means across run seeds

    [policy]
    kind = "ndc-sem"          # ndc-sem | random | oracle
    gamma = 0.985
    xi = 1e-10
    s = 4
    use_graph = true
    delay_aware = true

    [learner]
    lambda = 1e-4
    tol = 1e-8
    max_iter = 500
    solve_period = 1
    allow_cycles = false

    [bound]                   # bound command: explicit overrides of measured values
    delta_min = 0.05          # also delta_max, w_max, p, gamma, xi, s, D,
                              # upsilon_T, T, N

    [sweep]                   # sweep command
    axis = "delay"            # delay | gamma | xi | seed
    values = [50, 200, 400]

    [learn_graph]             # learn-graph command
    rounds = 200

A replay file instead holds a single ``[replay]`` table, see
:func:`parse_replay_config`.

Validation failures raise :class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .graph_learner import LearnerConfig
from .policy import PolicyConfig

__all__ = [
    "ConfigError",
    "EnvConfig",
    "ExperimentConfig",
    "POLICY_KINDS",
    "load_config",
    "parse_config",
    "read_toml",
    "parse_replay_config",
]

POLICY_KINDS = ("ndc-sem", "random", "oracle")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the key path."""


@dataclass(frozen=True)
class EnvConfig:
    n: int
    edge_density: float = 0.09
    weight_range: tuple[float, float] = (0.4, 0.7)
    change_points: tuple[int, ...] = ()
    mean_range: tuple[float, float] = (0.1, 0.9)
    means: Optional[tuple[tuple[float, ...], ...]] = None
    delay: int = 0
    max_delay: Optional[int] = None
    instance_seed: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig
    horizon: int
    policy: PolicyConfig = PolicyConfig()
    learner: LearnerConfig = LearnerConfig()
    kind: str = "ndc-sem"
    seeds: tuple[int, ...] = (0,)
    output: Optional[str] = None
    bound: Mapping[str, Any] = field(default_factory=dict)
    sweep: Mapping[str, Any] = field(default_factory=dict)
    learn_graph: Mapping[str, Any] = field(default_factory=dict)


_ENV_KEYS = {f.name for f in fields(EnvConfig)}
_POLICY_KEYS = {"kind", "gamma", "xi", "s", "use_graph", "delay_aware"}
_LEARNER_KEYS = {"lambda", "tol", "max_iter", "solve_period", "allow_cycles"}
_TOP_KEYS = {"horizon", "seeds", "output", "env", "policy", "learner", "bound", "sweep", "learn_graph"}


def _unknown(section: str, got: Mapping[str, Any], allowed: set[str]) -> None:
    extra = sorted(set(got) - allowed)
    if extra:
        prefix = f"{section}." if section else ""
        raise ConfigError(f"{prefix}{extra[0]}: unknown key")


def _num(path: str, value: Any, kind: type = float) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _pair(path: str, value: Any) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path}: expected a two-element list")
    return _num(f"{path}[0]", value[0]), _num(f"{path}[1]", value[1])


def _bool(path: str, value: Any) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    return value


def _parse_env(raw: Mapping[str, Any]) -> EnvConfig:
    _unknown("env", raw, _ENV_KEYS)
    if "n" not in raw:
        raise ConfigError("env.n: required")
    n = _num("env.n", raw["n"], int)
    if n < 1:
        raise ConfigError(f"env.n: must be >= 1, got {n}")
    kw: dict[str, Any] = {"n": n}
    if "edge_density" in raw:
        d = _num("env.edge_density", raw["edge_density"])
        if not 0 <= d <= 1:
            raise ConfigError(f"env.edge_density: must lie in [0, 1], got {d}")
        kw["edge_density"] = d
    if "weight_range" in raw:
        lo, hi = _pair("env.weight_range", raw["weight_range"])
        if lo < 0 or lo > hi:
            raise ConfigError(f"env.weight_range: need 0 <= lo <= hi, got [{lo}, {hi}]")
        kw["weight_range"] = (lo, hi)
    if "mean_range" in raw:
        lo, hi = _pair("env.mean_range", raw["mean_range"])
        if not 0 <= lo <= hi <= 1:
            raise ConfigError(f"env.mean_range: need 0 <= lo <= hi <= 1, got [{lo}, {hi}]")
        kw["mean_range"] = (lo, hi)
    if "change_points" in raw:
        cps = tuple(_num(f"env.change_points[{i}]", v, int) for i, v in enumerate(raw["change_points"]))
        if any(c <= 1 for c in cps) or any(b <= a for a, b in zip(cps, cps[1:])):
            raise ConfigError("env.change_points: must be strictly increasing rounds > 1")
        kw["change_points"] = cps
    if "means" in raw:
        rows = raw["means"]
        if not isinstance(rows, list) or not rows:
            raise ConfigError("env.means: expected a non-empty list of mean vectors")
        parsed = []
        for k, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != n:
                raise ConfigError(f"env.means[{k}]: expected {n} values")
            vals = tuple(_num(f"env.means[{k}][{i}]", v) for i, v in enumerate(row))
            if any(not 0 <= v <= 1 for v in vals):
                raise ConfigError(f"env.means[{k}]: values must lie in [0, 1]")
            parsed.append(vals)
        kw["means"] = tuple(parsed)
    for key in ("delay", "max_delay", "instance_seed"):
        if key in raw:
            v = _num(f"env.{key}", raw[key], int)
            if v < 0:
                raise ConfigError(f"env.{key}: must be >= 0, got {v}")
            kw[key] = v
    env = EnvConfig(**kw)
    if env.means is not None and len(env.means) != len(env.change_points) + 1:
        raise ConfigError(
            f"env.means: {len(env.means)} segments given but "
            f"{len(env.change_points)} change points imply {len(env.change_points) + 1}"
        )
    if env.max_delay is not None and env.max_delay < env.delay:
        raise ConfigError("env.max_delay: must be >= env.delay")
    return env


def _parse_policy(raw: Mapping[str, Any]) -> tuple[str, PolicyConfig]:
    _unknown("policy", raw, _POLICY_KEYS)
    kind = raw.get("kind", "ndc-sem")
    if kind not in POLICY_KINDS:
        raise ConfigError(f"policy.kind: must be one of {', '.join(POLICY_KINDS)}, got {kind!r}")
    kw: dict[str, Any] = {}
    for key in ("gamma", "xi"):
        if key in raw:
            kw[key] = _num(f"policy.{key}", raw[key])
    if "s" in raw:
        kw["s"] = _num("policy.s", raw["s"], int)
    for key in ("use_graph", "delay_aware"):
        if key in raw:
            kw[key] = _bool(f"policy.{key}", raw[key])
    try:
        return kind, PolicyConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_learner(raw: Mapping[str, Any]) -> LearnerConfig:
    _unknown("learner", raw, _LEARNER_KEYS)
    kw: dict[str, Any] = {}
    if "lambda" in raw:
        kw["lam"] = _num("learner.lambda", raw["lambda"])
    if "tol" in raw:
        kw["tol"] = _num("learner.tol", raw["tol"])
    for key in ("max_iter", "solve_period"):
        if key in raw:
            kw[key] = _num(f"learner.{key}", raw[key], int)
    if "allow_cycles" in raw:
        kw["allow_cycles"] = _bool("learner.allow_cycles", raw["allow_cycles"])
    try:
        return LearnerConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    _unknown("", raw, _TOP_KEYS)
    if "env" not in raw:
        raise ConfigError("env: required section missing")
    env = _parse_env(raw["env"])
    if "horizon" not in raw:
        raise ConfigError("horizon: required")
    horizon = _num("horizon", raw["horizon"], int)
    if horizon <= env.n:
        raise ConfigError(f"horizon: must exceed env.n={env.n}, got {horizon}")
    if env.change_points and env.change_points[-1] > horizon:
        raise ConfigError(f"env.change_points: {env.change_points[-1]} lies beyond the horizon")
    kind, policy = _parse_policy(raw.get("policy", {}))
    if policy.s > env.n:
        raise ConfigError(f"policy.s: must be <= env.n={env.n}, got {policy.s}")
    learner = _parse_learner(raw.get("learner", {}))
    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds: expected a non-empty list of integers")
    seeds_t = tuple(_num(f"seeds[{i}]", s, int) for i, s in enumerate(seeds))
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output: expected a path string")
    tables = {}
    for key in ("bound", "sweep", "learn_graph"):
        tables[key] = raw.get(key, {})
        if not isinstance(tables[key], dict):
            raise ConfigError(f"{key}: expected a table")
    return ExperimentConfig(
        env=env,
        horizon=horizon,
        policy=policy,
        learner=learner,
        kind=kind,
        seeds=seeds_t,
        output=output,
        **tables,
    )


def read_toml(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    try:
        with p.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{p}: config file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(read_toml(path))


_REPLAY_KEYS = {
    "data", "horizon", "s", "delay_days", "change_day", "kde_window", "shift_k",
    "block_length", "n_blocks", "lambda_grid", "gamma", "xi", "tol", "max_iter", "seed",
}


def parse_replay_config(raw: Mapping[str, Any]):
    """Returns ``(ReplayConfig, data_path_or_None, seed)`` from a ``[replay]`` table."""
    from .data_ingest import ReplayConfig

    _unknown("", raw, {"replay", "output"})
    table = raw.get("replay", {})
    if not isinstance(table, dict):
        raise ConfigError("replay: expected a table")
    _unknown("replay", table, _REPLAY_KEYS)
    kw: dict[str, Any] = {}
    for key in ("horizon", "s", "delay_days", "change_day", "shift_k", "block_length", "n_blocks", "max_iter"):
        if key in table:
            kw[key] = _num(f"replay.{key}", table[key], int)
    for key in ("gamma", "xi", "tol"):
        if key in table:
            kw[key] = _num(f"replay.{key}", table[key])
    if "kde_window" in table:
        lo, hi = _pair("replay.kde_window", table["kde_window"])
        kw["kde_window"] = (int(lo), int(hi))
    if "lambda_grid" in table:
        grid = table["lambda_grid"]
        if not isinstance(grid, list) or not grid:
            raise ConfigError("replay.lambda_grid: expected a non-empty list")
        kw["lambda_grid"] = tuple(_num(f"replay.lambda_grid[{i}]", v) for i, v in enumerate(grid))
    data = table.get("data")
    if data is not None and not isinstance(data, str):
        raise ConfigError("replay.data: expected a path string")
    seed = _num("replay.seed", table.get("seed", 0), int)
    try:
        cfg = ReplayConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, data, seed
