"""``ndc-bandit`` command line: simulate, sweep, learn-graph, bound, replay.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime error.
Every file is written below the output directory, chosen from ``--out``,
then ``$NDC_BANDIT_OUT``, then the config's ``output`` key, then ``./ndc_out``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_config, parse_replay_config, read_toml
from .graph_learner import fit, graph_mse
from .harness import (
    TheoremParams,
    bound_terms,
    build_instance,
    format_float,
    measure_theorem_params,
    noise_free_history,
    regret_bound,
    run_experiment,
    sweep,
    write_csv,
)

log = logging.getLogger("ndc_bandit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

_EXPERIMENT_KEYS = """\
top level : horizon, seeds, output
[env]     : n, edge_density, weight_range, change_points, mean_range, means,
            delay, max_delay, instance_seed
[policy]  : kind, gamma, xi, s, use_graph, delay_aware
[learner] : lambda, tol, max_iter, solve_period, allow_cycles"""

KEYS_HELP = {
    "simulate": _EXPERIMENT_KEYS,
    "sweep": _EXPERIMENT_KEYS + "\n[sweep]   : axis (delay|gamma|xi|seed), values",
    "learn-graph": """\
top level     : output
[env]         : n, edge_density, weight_range, instance_seed
[policy]      : s
[learner]     : lambda, tol, max_iter, allow_cycles
[learn_graph] : rounds""",
    "bound": _EXPERIMENT_KEYS
    + """
[bound]   : delta_min, delta_max, w_max, p, gamma, xi, s, D, upsilon_T, T, N
            (any key left out is measured from a simulate run)""",
    "replay": """\
top level : output
[replay]  : data, horizon, s, delay_days, change_day, kde_window, shift_k,
            block_length, n_blocks, lambda_grid, gamma, xi, tol, max_iter, seed""",
}

_THEOREM_INT_KEYS = {"p", "s", "D", "upsilon_T", "T", "N"}


def _out_dir(args: argparse.Namespace, configured: Optional[str]) -> Path:
    out = args.out or os.environ.get("NDC_BANDIT_OUT") or configured or "ndc_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = parse_config(read_toml(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg.output)
    seed = cfg.seeds[0]
    result = run_experiment(cfg, seed)
    path = out / f"run_seed{seed}.csv"
    write_csv(result, path)
    print(
        f"seed={seed} rounds={result.horizon} final_regret={format_float(result.final_regret)} "
        f"final_mse={format_float(result.graph_mse[-1])} csv={path}"
    )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load(args)
    axis = cfg.sweep.get("axis")
    values = cfg.sweep.get("values")
    if axis is None or not isinstance(values, list) or not values:
        raise ConfigError("sweep.axis / sweep.values: both are required for the sweep command")
    if axis not in ("delay", "gamma", "xi", "seed"):
        raise ConfigError(f"sweep.axis: must be delay, gamma, xi or seed, got {axis!r}")
    out = _out_dir(args, cfg.output)
    table = sweep(cfg, axis, values, jobs=args.jobs)
    write_csv(table, out / "sweep_runs.csv", out / "sweep_summary.csv")
    for v, mean, std in table.aggregate():
        print(f"{axis}={v} mean_final_regret={format_float(mean)} std={format_float(std)}")
    return EXIT_OK


def cmd_learn_graph(args: argparse.Namespace) -> int:
    cfg = _load(args)
    rounds = cfg.learn_graph.get("rounds", 200)
    if not isinstance(rounds, int) or rounds < cfg.env.n:
        raise ConfigError(f"learn_graph.rounds: must be an integer >= env.n={cfg.env.n}")
    out = _out_dir(args, cfg.output)
    seed = cfg.seeds[0]
    dag, _ = build_instance(cfg.env, cfg.horizon, seed)
    hist = noise_free_history(dag, cfg.policy.s, rounds, seed)
    est = fit(hist, cfg.learner)
    mse = graph_mse(dag.weights, est.a_hat)
    np.savetxt(out / "a_hat.csv", est.a_hat, delimiter=",", fmt="%.12g")
    print(f"rounds={rounds} iterations={est.iterations_used} objective={format_float(est.objective_value)} mse={format_float(mse)}")
    return EXIT_OK


def _theorem_params(cfg: ExperimentConfig) -> TheoremParams:
    fields = set(TheoremParams.__dataclass_fields__)
    unknown = sorted(set(cfg.bound) - fields)
    if unknown:
        raise ConfigError(f"bound.{unknown[0]}: unknown key")
    explicit: dict[str, Any] = {}
    for key, val in cfg.bound.items():
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"bound.{key}: expected a number")
        explicit[key] = int(val) if key in _THEOREM_INT_KEYS else float(val)
    xi = explicit.get("xi", cfg.policy.xi)
    s = explicit.get("s", cfg.policy.s)
    if xi <= 1.0 / (2.0 * (s + 1)):
        raise ConfigError(
            f"bound.xi: precondition violated: Let xi > 1/(2(s+1)) (xi={xi:g}, s={s})"
        )
    if fields <= set(explicit):
        return TheoremParams(**explicit)
    policy = replace(cfg.policy, **{k: explicit[k] for k in ("gamma", "xi", "s") if k in explicit})
    if policy.s > cfg.env.n:
        raise ConfigError(f"bound.s: must be <= env.n={cfg.env.n}")
    run_cfg = replace(cfg, policy=policy)
    measured = measure_theorem_params(run_experiment(run_cfg, cfg.seeds[0]), run_cfg)
    return replace(measured, **explicit)


def cmd_bound(args: argparse.Namespace) -> int:
    cfg = _load(args)
    params = _theorem_params(cfg)
    try:
        terms = bound_terms(params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    total = regret_bound(params)
    print(f"J(gamma)*Upsilon_T term   : {format_float(terms['change'])}")
    print(f"delay term                : {format_float(terms['delay'])}")
    print(f"tail term                 : {format_float(terms['tail'])}")
    print(f"N*Delta_max multiplier    : {format_float(terms['multiplier'])}")
    print(f"regret bound              : {format_float(total)}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    from .data_ingest import (
        load_region_csv,
        run_replay,
        sample_csv_path,
        write_replay_csv,
        write_selections_csv,
    )

    raw = read_toml(args.config)
    rcfg, data, seed = parse_replay_config(raw)
    if args.seed is not None:
        seed = args.seed
    data_path = Path(data) if data else sample_csv_path()
    if data and not data_path.is_absolute():
        data_path = Path(args.config).parent / data_path
    try:
        series = load_region_csv(data_path)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(args, raw.get("output"))
    result = run_replay(series, rcfg, seed)
    write_selections_csv(result, out / "selections.csv")
    write_replay_csv(result, out / "replay_run.csv")
    pre = sorted(result.names[i] for i in result.modal_set(1, rcfg.change_day - 1))
    post = sorted(result.names[i] for i in result.modal_set(rcfg.change_day, result.horizon))
    print(f"shift_k={result.shift_k} pre_change_modal={'-'.join(pre)} post_change_modal={'-'.join(post)}")
    return EXIT_OK


COMMANDS: dict[str, tuple[Callable[[argparse.Namespace], int], str]] = {
    "simulate": (cmd_simulate, "run one experiment and write the per-round CSV"),
    "sweep": (cmd_sweep, "run a parameter sweep over seeds and write summary CSVs"),
    "learn-graph": (cmd_learn_graph, "recover a random DAG from noise-free feedback"),
    "bound": (cmd_bound, "evaluate the regret upper bound and its sub-terms"),
    "replay": (cmd_replay, "replay a regional case-count CSV as a bandit problem"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ndc-bandit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(
            name,
            help=help_text,
            description=help_text,
            epilog="config keys read:\n" + KEYS_HELP[name],
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--out", help="output directory (default: $NDC_BANDIT_OUT, config output, ./ndc_out)")
        p.add_argument("--seed", type=int, help="override the config seed(s) with a single seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--verbose", action="store_true", help="log progress every 1000 rounds")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - uniform exit-code contract
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
