"""Desk-scale experiment settings per environment.

These are the settings the acceptance runs and the CLI start from; any field
can still be overridden.  Values come from pilot runs on one CPU core.
"""

from __future__ import annotations

from .expert import ExpertConfig
from .imitation import ImitationConfig

_EXPERT = {
    "pendulum": dict(reward_scale=0.1, max_env_steps=400_000, min_cycles=10**9, eval_episodes=50),
    "cartpole": dict(max_env_steps=150_000, eval_episodes=50),
}

_IMITATION = {
    "pendulum": dict(total_env_steps=600_000, init_log_std=1.0, disc_minibatch=128, spectral_norm=True,
                     input_norm=False),
    "cartpole": dict(total_env_steps=150_000, init_log_std=1.0, disc_minibatch=128, spectral_norm=True),
}

# number of expert trajectories exported for imitation
_N_TRAJ = {"pendulum": 100}


def expert_config(env: str) -> ExpertConfig:
    return ExpertConfig(env=env, **_EXPERT.get(env, {}))


def imitation_config(env: str) -> ImitationConfig:
    return ImitationConfig(env=env, **_IMITATION.get(env, {}))


def n_expert_trajectories(env: str) -> int:
    return _N_TRAJ.get(env, 20)
