"""
Evaluating the regret upper bound
=================================

The bound depends on instance quantities (gaps, influence weights, longest
path) that we measure from a finished run, and on the policy settings.
"""

from dataclasses import replace

from ndc_bandit import EnvConfig, ExperimentConfig, PolicyConfig, measure_theorem_params, regret_bound, run_experiment
from ndc_bandit.harness import bound_terms

cfg = ExperimentConfig(
    env=EnvConfig(n=10, change_points=(1000, 2500, 4000), delay=50),
    horizon=5000,
    policy=PolicyConfig(gamma=0.985, xi=0.1, s=5),
)
run = run_experiment(cfg, 0)
params = measure_theorem_params(run, cfg)
print(params)

terms = bound_terms(params)
for key in ("change", "delay", "tail", "multiplier"):
    print(f"{key:10s} {terms[key]:.6g}")
print(f"bound {regret_bound(params):.6g} vs empirical regret {run.final_regret:.1f}")

###############################################################################
# Each extra round of delay adds ceil(T(1 - gamma)) to the bracket.

one_more = bound_terms(replace(params, D=params.D + 1))
print("delay step:", one_more["delay_wait"] - terms["delay_wait"])

###############################################################################
# With a tiny exploration constant the bound is undefined.

try:
    regret_bound(replace(params, xi=1e-10))
except ValueError as exc:
    print("error:", exc)
