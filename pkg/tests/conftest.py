from __future__ import annotations

from dataclasses import replace

import pytest

from ndc_bandit.config import EnvConfig, ExperimentConfig
from ndc_bandit.graph_learner import LearnerConfig
from ndc_bandit.policy import PolicyConfig

SEEDS = tuple(range(10))


def synthetic_config(delay: int = 50, **policy_overrides) -> ExperimentConfig:
    """N=10, s=4, T=5000, three change points, gamma=0.985."""
    return ExperimentConfig(
        env=EnvConfig(
            n=10,
            edge_density=0.09,
            weight_range=(0.4, 0.7),
            change_points=(1000, 2500, 4000),
            delay=delay,
        ),
        horizon=5000,
        policy=replace(PolicyConfig(gamma=0.985, xi=1e-10, s=4), **policy_overrides),
        learner=LearnerConfig(lam=1e-4),
        seeds=SEEDS,
    )


@pytest.fixture(scope="session")
def synthetic_cfg() -> ExperimentConfig:
    return synthetic_config()


# Criterion number -> (passed, detail), filled by test_acceptance.py.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
