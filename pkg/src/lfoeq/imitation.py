"""Adversarial imitation (GAIL and GAIfO) with a trust-region generator.

The two modes share every code path except :func:`disc_inputs`: GAIL feeds
the discriminator ``(f(s), a)`` while GAIfO feeds ``(f(s), f(s'))``, where
``f`` is the task's observation map.  The discriminator is trained to be
high on agent data and the generator maximizes ``-log D``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import TrajectoryDataset
from .envs import Task, VecEnv, make_task, run_episodes
from .neural import (
    Adam,
    Discriminator,
    GaussianPolicy,
    Mlp,
    flatten,
    policy_logprob,
    unflatten,
)

MODES = ("gail", "gaifo")


class DatasetModeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ImitationConfig:
    mode: str = "gail"
    env: str = "pendulum"
    batch_size: int = 1024
    gen_updates_per_cycle: int = 3
    disc_updates_per_cycle: int = 1
    gamma: float = 0.995
    lam: float = 0.97
    max_kl: float = 0.01
    value_lr: float = 1e-3
    value_iters: int = 5
    disc_lr: float = 3e-4
    disc_entropy_coef: float = 1e-3
    policy_entropy_coef: float = 0.0
    input_norm: bool = True
    spectral_norm: bool = False
    disc_input_clip: float = 0.0   # clip standardized discriminator inputs to +-this; 0 disables
    noise_bound: float = 0.0
    total_env_steps: int = 300_000
    seed: int = 0
    hidden: tuple = (100, 100)
    activation: str = "tanh"
    init_log_std: float = 0.0
    n_envs: int = 8
    horizon: int = 200
    value_minibatch: int = 128
    disc_minibatch: int = 1024
    cg_iters: int = 10
    cg_damping: float = 0.1
    eval_every: int = 10
    eval_episodes: int = 10
    model_params: tuple = ()   # ((name, value), ...) physical parameter overrides

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("max_kl", "value_lr", "disc_lr", "batch_size", "value_iters", "n_envs",
                     "gen_updates_per_cycle", "disc_updates_per_cycle", "horizon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("gamma", "lam"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.batch_size % self.n_envs:
            raise ValueError("batch_size must be a multiple of n_envs")
        if self.noise_bound < 0 or self.disc_entropy_coef < 0 or self.policy_entropy_coef < 0:
            raise ValueError("noise bound and entropy coefficients must be nonnegative")
        if self.disc_input_clip < 0:
            raise ValueError("disc_input_clip must be nonnegative")

    def replace(self, **changes) -> "ImitationConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RolloutBatch:
    """One collection cycle, ordered environment-major so that consecutive
    rows are consecutive steps of the same copy unless ``boundary`` is set."""

    states: np.ndarray
    actions: np.ndarray       # sampled actions (log-probs refer to these)
    applied: np.ndarray       # controls actually applied after clipping
    next_states: np.ndarray
    logp: np.ndarray          # under the behavior policy at sampling time
    values: np.ndarray
    next_values: np.ndarray
    rewards: np.ndarray       # imitation reward, filled in after collection
    true_rewards: np.ndarray  # logging only
    terminal: np.ndarray
    boundary: np.ndarray
    x: np.ndarray             # normalized network inputs for ``states``
    next_x: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


# ---------------------------------------------------------------------------
# rollouts

def collect_rollouts(env: VecEnv, policy: GaussianPolicy, config: ImitationConfig,
                     value_net: Mlp | None = None, rng=None) -> RolloutBatch:
    """Step ``env`` with stochastic policy samples for ``batch_size`` steps.

    The input normalizer is frozen while acting and updated once with the
    whole batch afterwards; ``x``/``next_x`` and the value estimates use the
    updated statistics.
    """
    task = env.task
    if policy.act_dim != task.act_dim:
        raise ValueError("policy and environment action dimensions differ")
    rng = np.random.default_rng(rng)
    T = config.batch_size // env.n
    recs = []
    for _ in range(T):
        obs = task.features(env.state)
        x = policy.features(obs)
        mu = policy.mean(x)
        a = mu + policy.std * rng.standard_normal(mu.shape)
        logp = policy.log_prob(x, a)
        res = env.step(a)
        recs.append((res.state, a, res.action, res.next_state, logp, res.reward, res.terminal, res.boundary))

    def stack(i):
        # (T, n, ...) -> (n * T, ...), environment major
        arr = np.stack([r[i] for r in recs], 1)
        return arr.reshape(env.n * T, *arr.shape[2:])

    states, actions, applied, next_states, logp, true_r, terminal, boundary = map(stack, range(8))
    boundary = boundary.reshape(env.n, T)
    boundary[:, -1] = True  # the batch end cuts every copy's recursion
    boundary = boundary.ravel()
    if policy.obs_norm is not None:
        policy.obs_norm.update(task.features(states))
    x = policy.features(task.features(states))
    next_x = policy.features(task.features(next_states))
    if value_net is None:
        values = next_values = np.zeros(len(states))
    else:
        values = value_net(x)[:, 0]
        next_values = value_net(next_x)[:, 0]
    return RolloutBatch(states, actions, applied, next_states, logp, values, next_values,
                        np.zeros(len(states)), true_r, terminal, boundary, x, next_x)


def disc_inputs(task: Task, mode: str, states, actions, next_states) -> np.ndarray:
    """Discriminator input rows: ``(f(s), a)`` for gail, ``(f(s), f(s') - f(s))``
    for gaifo.  The difference form is an invertible linear map of
    ``(f(s), f(s'))``; it keeps the small per-step change from being swamped
    by the state scale after standardization."""
    f = task.features(np.asarray(states, float))
    if mode == "gail":
        return np.concatenate([f, np.asarray(actions, float)], -1)
    if mode == "gaifo":
        return np.concatenate([f, task.features(np.asarray(next_states, float)) - f], -1)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# discriminator and reward

def discriminator_update(D: Discriminator, agent_x, expert_x, config: ImitationConfig, opt: Adam) -> float:
    """One Adam step on the regularized logistic loss; returns the loss."""
    D.power_iterate()
    loss, grad, _ = D.loss_and_grad(agent_x, expert_x, config.disc_entropy_coef)
    D.set_flat(opt.step(D.get_flat(), grad))
    return loss


def imitation_reward(D: Discriminator, x) -> np.ndarray:
    p = D.prob(x)
    return -np.log(np.clip(p, 1e-8, 1 - 1e-8))


# ---------------------------------------------------------------------------
# advantages

def gae_raw(rewards, values, next_values, terminal, boundary, gamma, lam) -> np.ndarray:
    """Unnormalized GAE; ``terminal`` drops the bootstrap value and
    ``boundary`` stops the recursion (the last row is always treated as one)."""
    delta = rewards + gamma * (1.0 - terminal) * next_values - values
    cont = gamma * lam * (1.0 - np.asarray(boundary, float))
    adv = np.empty_like(delta)
    last = 0.0
    for t in range(len(delta) - 1, -1, -1):
        last = delta[t] + (cont[t] * last if t < len(delta) - 1 else 0.0)
        adv[t] = last
    return adv


def gae_advantages(batch: RolloutBatch, gamma: float, lam: float):
    """Return ``(normalized advantages, value targets)``."""
    adv = gae_raw(batch.rewards, batch.values, batch.next_values,
                  batch.terminal.astype(float), batch.boundary, gamma, lam)
    targets = adv + batch.values
    return (adv - adv.mean()) / (adv.std() + 1e-8), targets


# ---------------------------------------------------------------------------
# trust-region step

@dataclass
class TrpoInfo:
    accepted: bool
    kl: float
    improvement: float
    backtracks: int


def conjugate_gradient(mvp, b, iters=10, tol=1e-10) -> np.ndarray:
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = r @ r
    for _ in range(iters):
        if rr < tol:
            break
        Ap = mvp(p)
        alpha = rr / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def gaussian_kl(mu0, std0, mu1, std1) -> np.ndarray:
    """Per-sample KL(N0 || N1) for diagonal Gaussians."""
    return np.sum(np.log(std1 / std0) + (std0**2 + (mu0 - mu1) ** 2) / (2 * std1**2) - 0.5, -1)


def trpo_step(policy: GaussianPolicy, x, actions, advantages, max_kl: float, cg_iters: int = 10,
              damping: float = 0.1, entropy_coef: float = 0.0, logp_old=None):
    """Maximize ``mean(ratio * advantage)`` under ``mean KL(old || new) <= max_kl``.

    Returns ``(new_policy, TrpoInfo)``; on a failed line search the returned
    policy has the old parameters.
    """
    old = policy.copy()
    x = np.asarray(x, float)
    adv = np.asarray(advantages, float)
    n, k = len(x), old.act_dim
    mu_old, cache = old.mean_net.forward(x)
    std_old = old.std
    if logp_old is None:
        logp_old = old.log_prob(x, actions)

    def surrogate(p):
        ratio = np.exp(p.log_prob(x, actions) - logp_old)
        return np.mean(ratio * adv) + entropy_coef * np.sum(p.log_std)

    _, g = policy_logprob(old, x, actions, weights=adv / n)
    g[-k:] += entropy_coef
    if not np.any(g):
        return old, TrpoInfo(False, 0.0, 0.0, 0)

    like = old.mean_net.params

    def fvp(v):
        jv = old.mean_net.jvp(cache, unflatten(v[:-k], like))
        gm, _ = old.mean_net.backward(cache, jv / (std_old**2 * n))
        return np.concatenate([flatten(gm), 2.0 * v[-k:]]) + damping * v

    direction = conjugate_gradient(fvp, g, cg_iters)
    quad = direction @ fvp(direction)
    if not quad > 0:
        return old, TrpoInfo(False, 0.0, 0.0, 0)
    full = direction * np.sqrt(2 * max_kl / quad)
    theta0 = old.get_flat()
    f0 = surrogate(old)
    new = old.copy()
    for i in range(10):
        new.set_flat(theta0 + 0.5**i * full)
        kl = float(np.mean(gaussian_kl(mu_old, std_old, new.mean(x), new.std)))
        improve = surrogate(new) - f0
        if np.isfinite(kl) and kl <= 1.5 * max_kl and improve > 0:
            return new, TrpoInfo(True, kl, float(improve), i)
    return old, TrpoInfo(False, 0.0, 0.0, 10)


# ---------------------------------------------------------------------------
# value function

def value_update(value_net: Mlp, opt: Adam, x, targets, config: ImitationConfig, rng=None,
                 history: list | None = None) -> float:
    """``value_iters`` epochs of minibatch Adam on the squared error.

    Returns the full-batch loss after training; ``history`` (if given)
    receives the loss before training and after every epoch.
    """
    rng = np.random.default_rng(rng)
    x = np.asarray(x, float)
    t = np.asarray(targets, float)[:, None]

    def full_loss():
        return float(np.mean((value_net(x) - t) ** 2))

    if history is not None:
        history.append(full_loss())
    mb = min(config.value_minibatch, len(x))
    for _ in range(config.value_iters):
        perm = rng.permutation(len(x))
        for start in range(0, len(x) - mb + 1, mb):
            idx = perm[start : start + mb]
            pred, cache = value_net.forward(x[idx])
            grads, _ = value_net.backward(cache, 2.0 * (pred - t[idx]) / len(idx))
            value_net.set_flat(opt.step(value_net.get_flat(), flatten(grads)))
        if history is not None:
            history.append(full_loss())
    return history[-1] if history else full_loss()


# ---------------------------------------------------------------------------
# evaluation and learning curves

def evaluate(task: Task, policy: GaussianPolicy, n_episodes: int, seed=None, noise_bound: float = 0.0):
    """Deterministic-policy returns on the true task reward."""
    def act(s):
        return policy.act(task.features(s), deterministic=True)

    returns, _ = run_episodes(task, act, n_episodes, seed, noise_bound)
    return returns


CURVE_COLUMNS = ("env_steps", "eval_return_mean", "eval_return_std", "disc_loss", "policy_kl")


@dataclass
class LearningCurve:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def means(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def stds(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    @property
    def final_return(self) -> float:
        return float(self.rows[-1][1])

    def to_csv(self, path) -> None:
        lines = [f"# {k}={v}" for k, v in self.metadata.items()]
        lines.append(",".join(CURVE_COLUMNS))
        for r in self.rows:
            lines.append(",".join([str(int(r[0]))] + [repr(float(v)) for v in r[1:]]))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "LearningCurve":
        meta, rows = {}, []
        for line in Path(path).read_text().splitlines():
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
            elif line and not line.startswith(CURVE_COLUMNS[0]):
                vals = line.split(",")
                rows.append((int(vals[0]), *map(float, vals[1:])))
        return cls(rows, meta)


@dataclass
class TrainResult:
    curve: LearningCurve
    policy: GaussianPolicy
    discriminator: Discriminator
    n_generator_updates: int = 0
    n_disc_updates: int = 0
    kls: list = field(default_factory=list)          # mean KL of each accepted step
    rejected_steps: int = 0
    value_histories: list = field(default_factory=list)
    max_effective_sigma: float = 0.0


def _stable_scale(x) -> np.ndarray:
    sd = x.std(0)
    return np.where(sd > 1e-6, sd, 1.0)


def train(expert_dataset: TrajectoryDataset, config: ImitationConfig, task: Task | None = None,
          progress=None) -> TrainResult:
    """Alternate rollouts, trust-region generator steps and discriminator
    steps; evaluate the deterministic policy on the true reward every
    ``eval_every`` cycles and after the last one.

    ``task`` overrides the catalog task (e.g. to audit that the true reward
    never reaches a gradient); ``progress`` is called with each curve row.
    """
    task = task or make_task(config.env, config.horizon, **dict(config.model_params))
    if expert_dataset.env_id != task.name:
        raise ValueError(f"dataset is for {expert_dataset.env_id!r}, not {task.name!r}")
    if config.mode == "gail" and not expert_dataset.has_actions:
        raise DatasetModeMismatch("gail needs expert actions; the dataset is action-stripped")

    init_seq, env_seq, act_seq, disc_seq, eval_seq, val_seq = np.random.SeedSequence(config.seed).spawn(6)
    init_rng = np.random.default_rng(init_seq)
    act_rng = np.random.default_rng(act_seq)
    disc_rng = np.random.default_rng(disc_seq)
    val_rng = np.random.default_rng(val_seq)
    eval_seed = int(eval_seq.generate_state(1)[0])

    s, a, s1 = expert_dataset.transitions()
    expert_x = disc_inputs(task, config.mode, s, a, s1)

    policy = GaussianPolicy.create(task.obs_dim, task.act_dim, config.hidden, config.activation, init_rng,
                                   config.init_log_std, config.input_norm)
    value_net = Mlp((task.obs_dim, *config.hidden, 1), config.activation, init_rng)
    D = Discriminator(expert_x.shape[1], config.hidden, config.activation, init_rng, config.spectral_norm,
                      shift=expert_x.mean(0), scale=_stable_scale(expert_x), clip=config.disc_input_clip or None)
    v_opt = Adam(value_net.get_flat().size, config.value_lr)
    d_opt = Adam(D.get_flat().size, config.disc_lr)
    env = VecEnv(task, config.n_envs, config.noise_bound, env_seq)

    curve = LearningCurve(metadata=dict(env=task.name, mode=config.mode, seed=config.seed,
                                        noise_bound=config.noise_bound, n_expert_traj=len(expert_dataset),
                                        input_norm=config.input_norm, spectral_norm=config.spectral_norm))
    result = TrainResult(curve, policy, D)
    disc_loss, last_kl = float("nan"), 0.0
    n_cycles = config.total_env_steps // config.batch_size

    def record(cycle):
        rets = evaluate(task, result.policy, config.eval_episodes, eval_seed, config.noise_bound)
        row = ((cycle + 1) * config.batch_size, float(rets.mean()), float(rets.std()), disc_loss, last_kl)
        curve.rows.append(row)
        if progress is not None:
            progress(row)

    for cycle in range(n_cycles):
        batch = collect_rollouts(env, result.policy, config, value_net, act_rng)
        agent_x = disc_inputs(task, config.mode, batch.states, batch.applied, batch.next_states)
        batch.rewards = imitation_reward(D, agent_x)
        adv, targets = gae_advantages(batch, config.gamma, config.lam)
        result.policy, info = trpo_step(result.policy, batch.x, batch.actions, adv, config.max_kl,
                                        config.cg_iters, config.cg_damping, config.policy_entropy_coef)
        result.n_generator_updates += 1
        if info.accepted:
            result.kls.append(info.kl)
            last_kl = info.kl
        else:
            result.rejected_steps += 1
        hist = []
        value_update(value_net, v_opt, batch.x, targets, config, val_rng, hist)
        result.value_histories.append(hist)
        if (cycle + 1) % config.gen_updates_per_cycle == 0:
            for _ in range(config.disc_updates_per_cycle):
                idx = disc_rng.integers(0, len(expert_x), size=len(agent_x))
                perm = disc_rng.permutation(len(agent_x))
                mb = min(config.disc_minibatch, len(agent_x))
                losses = []
                for start in range(0, len(perm) - mb + 1, mb):
                    part = perm[start : start + mb]
                    losses.append(discriminator_update(D, agent_x[part], expert_x[idx[part]], config, d_opt))
                disc_loss = float(np.mean(losses))
                result.n_disc_updates += 1
            if D.spectral:
                sig = max(np.linalg.norm(W, 2) for W in D.effective_weights())
                result.max_effective_sigma = max(result.max_effective_sigma, sig)
        if (cycle + 1) % config.eval_every == 0 or cycle == n_cycles - 1:
            record(cycle)
    return result
