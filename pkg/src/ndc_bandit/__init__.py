"""Non-stationary delayed combinatorial semi-bandits with causally related rewards."""

from .config import ConfigError, EnvConfig, ExperimentConfig, load_config, parse_config
from .graph_learner import FeedbackHistory, GraphEstimate, LearnerConfig, fit, graph_mse, objective
from .harness import (
    RunResult,
    TheoremParams,
    cumulative_regret,
    measure_theorem_params,
    optimality_ratio,
    regret_bound,
    run_experiment,
    sweep,
    write_csv,
)
from .policy import NdcSemPolicy, PolicyConfig, RandomPolicy, select_action, ucb_indices
from .sem_env import (
    CausalDag,
    FeedbackPair,
    RewardSchedule,
    SemEnvironment,
    expected_payoff,
    gen_random_dag,
    oracle_action,
    propagate,
)

__version__ = "0.1.0"
