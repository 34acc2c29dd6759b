"""Episodic control tasks built on the Euler-Lagrange catalog.

A :class:`Task` fixes the reward, termination rule, start distribution,
action limit and the observation features fed to networks.  States stay in
raw ``(q, q')`` form everywhere else; features only exist at network inputs.
:class:`VecEnv` steps several independent copies of a task in lock step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import ELModel, forward_step, make_model


def wrap_angle(x):
    return (np.asarray(x, float) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Task:
    name: str
    model: ELModel
    horizon: int
    action_limit: float
    init_low: np.ndarray
    init_high: np.ndarray
    reward: Callable = field(repr=False)     # (s, u, s_next) -> r
    failed: Callable = field(repr=False)     # s_next -> bool, early termination
    features: Callable = field(repr=False)   # s -> network observation

    @property
    def state_dim(self) -> int:
        return self.model.state_dim

    @property
    def act_dim(self) -> int:
        return self.model.act_dim

    @property
    def obs_dim(self) -> int:
        return self.features(np.zeros(self.state_dim)).shape[-1]

    def sample_init(self, rng, n):
        return rng.uniform(self.init_low, self.init_high, size=(n, self.state_dim))


def _angle_features(s, n_angles):
    q = s[..., :n_angles]
    return np.concatenate([np.cos(q), np.sin(q), s[..., n_angles:]], -1)


def _never(s):
    return np.zeros(s.shape[:-1], bool)


def _pendulum_task(model, horizon):
    def reward(s, u, s_next):
        up = wrap_angle(s[..., 0] - np.pi)
        return -(up**2 + 0.1 * s[..., 1] ** 2 + 0.001 * np.sum(u * u, -1))

    return dict(
        action_limit=20.0,
        init_low=np.array([-np.pi, -1.0]), init_high=np.array([np.pi, 1.0]),
        reward=reward, failed=_never, features=lambda s: _angle_features(s, 1),
    )


REACHER_GOAL = np.array([0.6, 0.3])


def fingertip(model, q):
    l1, l2 = model.params["l1"], model.params["l2"]
    a, b = q[..., 0], q[..., 0] + q[..., 1]
    return np.stack([l1 * np.cos(a) + l2 * np.cos(b), l1 * np.sin(a) + l2 * np.sin(b)], -1)


def _reacher_task(model, horizon):
    def reward(s, u, s_next):
        d = fingertip(model, s[..., :2]) - REACHER_GOAL
        return -(np.sum(d * d, -1) + 0.001 * np.sum(u * u, -1))

    return dict(
        action_limit=2.0,
        init_low=np.array([-np.pi, -np.pi, -0.1, -0.1]), init_high=np.array([np.pi, np.pi, 0.1, 0.1]),
        reward=reward, failed=_never, features=lambda s: _angle_features(s, 2),
    )


def _cartpole_task(model, horizon):
    def reward(s, u, s_next):
        return np.ones(s.shape[:-1])

    def failed(s):
        return (np.abs(s[..., 1]) >= 0.4) | (np.abs(s[..., 0]) >= 2.4)

    return dict(
        action_limit=10.0,
        init_low=np.full(4, -0.05), init_high=np.full(4, 0.05),
        reward=reward, failed=failed, features=lambda s: s,
    )


def _acrobot_task(model, horizon):
    l1, l2 = model.params["l1"], model.params["l2"]

    def failed(s):
        # "failure" here means success: the episode ends once the tip is high enough
        height = -l1 * np.cos(s[..., 0]) - l2 * np.cos(s[..., 0] + s[..., 1])
        return height > l1

    def reward(s, u, s_next):
        return -np.ones(s.shape[:-1])

    return dict(
        action_limit=5.0,
        init_low=np.full(4, -0.1), init_high=np.full(4, 0.1),
        reward=reward, failed=failed, features=lambda s: _angle_features(s, 2),
    )


_TASKS = {"pendulum": _pendulum_task, "reacher2": _reacher_task,
          "cartpole": _cartpole_task, "acrobot": _acrobot_task}
TASK_IDS = tuple(_TASKS)


def make_task(name: str, horizon: int = 200, **model_params) -> Task:
    model = make_model(name, **model_params)
    return Task(name=name, model=model, horizon=horizon, **_TASKS[name](model, horizon))


@dataclass
class StepResult:
    state: np.ndarray        # state the action was taken in
    action: np.ndarray       # control actually applied (after clipping)
    next_state: np.ndarray   # successor, before any reset
    reward: np.ndarray       # true task reward
    terminal: np.ndarray     # early termination: no bootstrapping past it
    boundary: np.ndarray     # episode ended (terminal or time limit)


class VecEnv:
    """``n`` independent copies of a task sharing one noise generator.

    Finished copies reset automatically; the returned :class:`StepResult`
    still carries the true successor state.
    """

    def __init__(self, task: Task, n: int, noise_bound: float = 0.0, seed=None):
        self.task, self.n, self.noise_bound = task, n, float(noise_bound)
        self.rng = np.random.default_rng(seed)
        self.state = task.sample_init(self.rng, n)
        self.t = np.zeros(n, int)

    def step(self, u) -> StepResult:
        task = self.task
        u = np.clip(np.asarray(u, float), -task.action_limit, task.action_limit)
        s = self.state
        s_next = forward_step(task.model, s, u, self.noise_bound, self.rng)
        r = task.reward(s, u, s_next)
        terminal = task.failed(s_next)
        self.t += 1
        boundary = terminal | (self.t >= task.horizon)
        self.state = s_next.copy()
        if boundary.any():
            idx = np.flatnonzero(boundary)
            self.state[idx] = task.sample_init(self.rng, idx.size)
            self.t[idx] = 0
        return StepResult(s, u, s_next, r, terminal, boundary)


def run_episodes(task: Task, act: Callable, n_episodes: int, seed=None, noise_bound: float = 0.0):
    """Roll out ``n_episodes`` full episodes in parallel with ``act(states) -> u``.

    Returns ``(returns, trajectories)`` where each trajectory is a tuple of
    ``(states (T+1, d), actions (T, k))``.
    """
    rng = np.random.default_rng(seed)
    s = task.sample_init(rng, n_episodes)
    alive = np.ones(n_episodes, bool)
    returns = np.zeros(n_episodes)
    states, actions = [s], []
    lengths = np.full(n_episodes, task.horizon)
    for t in range(task.horizon):
        u = np.clip(np.asarray(act(s), float), -task.action_limit, task.action_limit)
        s_next = forward_step(task.model, s, u, noise_bound, rng)
        returns += np.where(alive, task.reward(s, u, s_next), 0.0)
        done = alive & task.failed(s_next)
        lengths[done] = t + 1
        alive &= ~done
        actions.append(u)
        states.append(s_next)
        s = s_next
        if not alive.any():
            break
    S, U = np.stack(states, 1), np.stack(actions, 1)
    trajs = [(S[i, : lengths[i] + 1], U[i, : lengths[i]]) for i in range(n_episodes)]
    return returns, trajs
