"""Expert policies trained on the true task reward, and their datasets.

Experts reuse the imitation stack (rollouts, GAE, trust-region step, value
fitting); the only difference is that the true reward feeds the advantages.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .datasets import IoFailure, Trajectory, TrajectoryDataset, save_dataset
from .envs import Task, VecEnv, make_task, run_episodes, wrap_angle
from .imitation import (
    ImitationConfig,
    collect_rollouts,
    evaluate,
    gae_advantages,
    trpo_step,
    value_update,
)
from .neural import Adam, GaussianPolicy, Mlp


class BudgetExhausted(RuntimeError):
    """Raised (when requested) if training hits its step budget before the
    evaluation return plateaus; ``best`` holds the best policy found."""

    def __init__(self, best: "ExpertResult"):
        super().__init__(f"step budget exhausted; best return {best.eval_return:.3f}")
        self.best = best


@dataclass(frozen=True)
class ExpertConfig:
    env: str = "pendulum"
    batch_size: int = 1024
    gamma: float = 0.99
    lam: float = 0.97
    max_kl: float = 0.02
    value_lr: float = 1e-3
    value_iters: int = 5
    value_minibatch: int = 128
    input_norm: bool = True
    hidden: tuple = (100, 100)
    activation: str = "tanh"
    init_log_std: float = 0.0
    reward_scale: float = 1.0
    n_envs: int = 8
    horizon: int = 200
    max_env_steps: int = 1_000_000
    min_cycles: int = 60
    plateau_cycles: int = 20
    plateau_tol: float = 0.01
    eval_every: int = 5
    eval_episodes: int = 10
    seed: int = 0
    model_params: tuple = ()

    def replace(self, **changes) -> "ExpertConfig":
        return dataclasses.replace(self, **changes)

    def as_imitation(self) -> ImitationConfig:
        return ImitationConfig(
            env=self.env, batch_size=self.batch_size, gamma=self.gamma, lam=self.lam, max_kl=self.max_kl,
            value_lr=self.value_lr, value_iters=self.value_iters, value_minibatch=self.value_minibatch,
            input_norm=self.input_norm, hidden=self.hidden, activation=self.activation,
            init_log_std=self.init_log_std, n_envs=self.n_envs, horizon=self.horizon, seed=self.seed,
            model_params=self.model_params,
        )


@dataclass
class ExpertResult:
    policy: GaussianPolicy
    eval_return: float
    curve: list = field(default_factory=list)   # (env_steps, deterministic eval return)
    plateaued: bool = False

    @property
    def running_max(self) -> np.ndarray:
        return np.maximum.accumulate([r for _, r in self.curve])


def _plateaued(curve, cfg: ExpertConfig, cycle: int) -> bool:
    if cycle + 1 < cfg.min_cycles:
        return False
    window = cfg.plateau_cycles * cfg.batch_size
    now = curve[-1][0]
    before = [r for s, r in curve if s <= now - window]
    recent = [r for s, r in curve if s > now - window]
    if not before or not recent:
        return False
    old, new = max(before), max(recent)
    return new - old < cfg.plateau_tol * max(abs(old), 1e-8)


def train_expert(cfg: ExpertConfig, task: Task | None = None, raise_on_budget: bool = False,
                 progress=None) -> ExpertResult:
    """Trust-region training on the true reward until the deterministic
    evaluation return plateaus or ``max_env_steps`` is spent.  Returns the
    best evaluated snapshot."""
    task = task or make_task(cfg.env, cfg.horizon, **dict(cfg.model_params))
    icfg = cfg.as_imitation()
    init_seq, env_seq, act_seq, eval_seq, val_seq = np.random.SeedSequence(cfg.seed).spawn(5)
    init_rng = np.random.default_rng(init_seq)
    act_rng = np.random.default_rng(act_seq)
    val_rng = np.random.default_rng(val_seq)
    eval_seed = int(eval_seq.generate_state(1)[0])

    policy = GaussianPolicy.create(task.obs_dim, task.act_dim, cfg.hidden, cfg.activation, init_rng,
                                   cfg.init_log_std, cfg.input_norm)
    value_net = Mlp((task.obs_dim, *cfg.hidden, 1), cfg.activation, init_rng)
    v_opt = Adam(value_net.get_flat().size, cfg.value_lr)
    env = VecEnv(task, cfg.n_envs, 0.0, env_seq)

    best = ExpertResult(policy.copy(), -np.inf)
    n_cycles = cfg.max_env_steps // cfg.batch_size
    for cycle in range(n_cycles):
        batch = collect_rollouts(env, policy, icfg, value_net, act_rng)
        batch.rewards = cfg.reward_scale * batch.true_rewards
        adv, targets = gae_advantages(batch, cfg.gamma, cfg.lam)
        policy, _ = trpo_step(policy, batch.x, batch.actions, adv, cfg.max_kl)
        value_update(value_net, v_opt, batch.x, targets, icfg, val_rng)
        if (cycle + 1) % cfg.eval_every:
            continue
        ret = float(evaluate(task, policy, cfg.eval_episodes, eval_seed).mean())
        best.curve.append(((cycle + 1) * cfg.batch_size, ret))
        if progress is not None:
            progress(best.curve[-1])
        if ret > best.eval_return:
            best.policy, best.eval_return = policy.copy(), ret
        if _plateaued(best.curve, cfg, cycle):
            best.plateaued = True
            return best
    if raise_on_budget:
        raise BudgetExhausted(best)
    return best


# ---------------------------------------------------------------------------

def reference_controller(task: Task):
    """Hand-written stabilizing controller used as an oracle for the expert.

    pendulum: energy pumping far from upright, computed-torque PD near it.
    cartpole: linear state feedback on (x, theta, x', theta').
    """
    model = task.model
    if task.name == "pendulum":
        m, l, g = (model.params[k] for k in ("m", "l", "g"))

        def act(s):
            err = wrap_angle(s[..., 0] - np.pi)
            u = m * g * l * np.sin(s[..., 0]) - m * l * l * (25.0 * err + 8.0 * s[..., 1])
            return u[..., None]
        return act
    if task.name == "cartpole":
        gains = np.array([1.0, 30.0, 2.0, 6.0])

        def act(s):
            return (s @ gains)[..., None]
        return act
    raise ValueError(f"no reference controller for {task.name!r}")


def rollout_dataset(task: Task, act, n_trajectories: int, seed=None) -> TrajectoryDataset:
    returns, trajs = run_episodes(task, act, n_trajectories, seed)
    items = tuple(Trajectory(s, u, float(r)) for (s, u), r in zip(trajs, returns))
    return TrajectoryDataset(task.name, task.model.dt, task.horizon, task.state_dim, task.act_dim, items)


def export_dataset(task: Task, expert: GaussianPolicy, n_trajectories: int, seed=None, path=None) -> TrajectoryDataset:
    """Roll out the deterministic expert without noise; write ``path`` if given."""
    if expert.act_dim != task.act_dim:
        raise ValueError("expert and task action dimensions differ")

    def act(s):
        return expert.act(task.features(s), deterministic=True)

    ds = rollout_dataset(task, act, n_trajectories, seed)
    if path is not None:
        try:
            save_dataset(ds, path)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    return ds
