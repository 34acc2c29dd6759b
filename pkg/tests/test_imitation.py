import dataclasses

import numpy as np
import pytest

from lfoeq.envs import VecEnv, make_task
from lfoeq.expert import reference_controller, rollout_dataset
from lfoeq.imitation import (
    DatasetModeMismatch,
    ImitationConfig,
    LearningCurve,
    collect_rollouts,
    disc_inputs,
    discriminator_update,
    gae_advantages,
    gae_raw,
    imitation_reward,
    train,
    trpo_step,
    value_update,
)
from lfoeq.neural import Adam, Discriminator, GaussianPolicy, Mlp

SMALL = ImitationConfig(env="cartpole", batch_size=512, hidden=(32, 32), total_env_steps=512 * 12,
                        eval_every=4, eval_episodes=3, disc_minibatch=128)


@pytest.fixture(scope="module")
def cart_data():
    task = make_task("cartpole")
    return rollout_dataset(task, reference_controller(task), 5, seed=0)


def test_config_validation():
    with pytest.raises(ValueError):
        ImitationConfig(mode="bc")
    with pytest.raises(ValueError):
        ImitationConfig(gamma=1.0)
    with pytest.raises(ValueError):
        ImitationConfig(max_kl=0.0)
    with pytest.raises(ValueError):
        ImitationConfig(batch_size=1001, n_envs=8)


def test_rollout_boundaries_and_consistency():
    task = make_task("pendulum", horizon=2)
    cfg = ImitationConfig(batch_size=4, n_envs=1)
    pol = GaussianPolicy.create(task.obs_dim, 1, hidden=(8,), rng=0)
    batch = collect_rollouts(VecEnv(task, 1, seed=0), pol, cfg, rng=1)
    assert len(batch) == 4 and batch.boundary.sum() == 2
    for t in range(len(batch) - 1):
        if not batch.boundary[t]:
            np.testing.assert_array_equal(batch.next_states[t], batch.states[t + 1])


def test_rollout_consistency_vectorized():
    task = make_task("cartpole")
    cfg = ImitationConfig(env="cartpole", batch_size=256, n_envs=4)
    pol = GaussianPolicy.create(task.obs_dim, 1, hidden=(8,), rng=0)
    batch = collect_rollouts(VecEnv(task, 4, seed=0), pol, cfg, rng=1)
    idx = np.flatnonzero(~batch.boundary[:-1])
    np.testing.assert_array_equal(batch.next_states[idx], batch.states[idx + 1])
    assert batch.boundary.reshape(4, -1)[:, -1].all()
    assert np.all(batch.terminal <= batch.boundary)


def test_rollout_determinism():
    task = make_task("cartpole")
    cfg = ImitationConfig(env="cartpole", batch_size=64, n_envs=4)

    def once():
        pol = GaussianPolicy.create(task.obs_dim, 1, hidden=(8,), rng=0)
        return collect_rollouts(VecEnv(task, 4, seed=3), pol, cfg, rng=5)

    a, b = once(), once()
    for f in dataclasses.fields(a):
        np.testing.assert_array_equal(getattr(a, f.name), getattr(b, f.name))


def test_disc_input_dimensions():
    task = make_task("cartpole")
    s = np.zeros((3, 4))
    assert disc_inputs(task, "gail", s, np.zeros((3, 1)), s).shape == (3, 5)
    assert disc_inputs(task, "gaifo", s, None, s).shape == (3, 8)


def test_half_discriminator_loss():
    D = Discriminator(3, hidden=(8,), rng=0)
    D.net.params = [p * 0 for p in D.net.params]
    x = np.ones((5, 3))
    loss = discriminator_update(D, x, x, ImitationConfig(disc_entropy_coef=0.0), Adam(D.get_flat().size, 1e-3))
    assert loss == pytest.approx(2 * np.log(2))


def test_identical_batches_pull_toward_half():
    D = Discriminator(2, hidden=(8,), rng=0)
    D.net.params[-1] = np.array([1.5])
    x = np.random.default_rng(0).standard_normal((64, 2))
    opt = Adam(D.get_flat().size, 1e-2)
    start = np.abs(D.prob(x) - 0.5).mean()
    for _ in range(50):
        discriminator_update(D, x, x, ImitationConfig(), opt)
    assert np.abs(D.prob(x) - 0.5).mean() < 0.2 * start


def _perceptron_separable(X, y, epochs=1000):
    # brute-force oracle: the perceptron converges iff the data are separable
    Xb = np.hstack([X, np.ones((len(X), 1))])
    w = np.zeros(Xb.shape[1])
    sgn = 2 * y - 1
    for _ in range(epochs):
        wrong = sgn * (Xb @ w) <= 0
        if not wrong.any():
            return True
        w += (sgn[wrong, None] * Xb[wrong]).sum(0)
    return False


def test_separable_toy_problem():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, size=(2000, 2))
    margin = X @ np.array([1.0, -2.0]) + 0.3
    X, margin = X[np.abs(margin) > 0.05], margin[np.abs(margin) > 0.05]
    y = (margin > 0).astype(int)
    assert _perceptron_separable(X, y)
    D = Discriminator(2, hidden=(32, 32), rng=2)
    cfg = ImitationConfig(disc_lr=3e-3)
    opt = Adam(D.get_flat().size, cfg.disc_lr)
    for _ in range(500):
        discriminator_update(D, X[y == 1], X[y == 0], cfg, opt)
    acc = np.mean((D.prob(X) > 0.5) == (y == 1))
    assert acc > 0.99


def test_imitation_reward_examples():
    D = Discriminator(1, hidden=(4,), rng=0)
    D.net.params = [p * 0 for p in D.net.params]
    assert imitation_reward(D, np.zeros((1, 1)))[0] == pytest.approx(np.log(2))
    D.net.params[-1] = np.array([-1e4])
    assert imitation_reward(D, np.zeros((1, 1)))[0] == pytest.approx(-np.log(1e-8))
    D.net.params[-1] = np.array([30.0])
    assert imitation_reward(D, np.zeros((1, 1)))[0] == pytest.approx(-np.log1p(-1e-8), rel=1e-6)


def gae_oracle(r, v, v1, term, bound, gamma, lam):
    n = len(r)
    delta = r + gamma * (1 - term) * v1 - v
    adv = np.zeros(n)
    for t in range(n):
        coef = 1.0
        for k in range(t, n):
            adv[t] += coef * delta[k]
            if bound[k] or k == n - 1:
                break
            coef *= gamma * lam
    return adv


def test_gae_examples_and_oracle():
    rng = np.random.default_rng(0)
    n = 50
    r = np.full(n, 0.7)
    v = np.full(n, 2.0)
    zeros = np.zeros(n)
    np.testing.assert_allclose(gae_raw(r, v, v, zeros, zeros, 0.9, 0.0), 0.7 + 0.9 * 2.0 - 2.0)
    # lambda = 1 and no bootstrapping at the end: discounted return-to-go minus value
    term = zeros.copy()
    term[-1] = 1
    r = rng.standard_normal(n)
    v = rng.standard_normal(n)
    rtg = np.array([sum(0.9 ** (k - t) * r[k] for k in range(t, n)) for t in range(n)])
    np.testing.assert_allclose(gae_raw(r, v, np.roll(v, -1), term, zeros, 0.9, 1.0), rtg - v, atol=1e-12)
    for _ in range(20):
        r, v, v1 = rng.standard_normal((3, n))
        term = rng.uniform(size=n) < 0.05
        bound = term | (rng.uniform(size=n) < 0.1)
        np.testing.assert_allclose(gae_raw(r, v, v1, term.astype(float), bound, 0.99, 0.95),
                                   gae_oracle(r, v, v1, term, bound, 0.99, 0.95), atol=1e-12)


def test_gae_normalized():
    task = make_task("cartpole")
    cfg = ImitationConfig(env="cartpole", batch_size=256)
    pol = GaussianPolicy.create(task.obs_dim, 1, hidden=(8,), rng=0)
    batch = collect_rollouts(VecEnv(task, 8, seed=0), pol, cfg, Mlp((4, 8, 1), rng=1), rng=1)
    batch.rewards = np.random.default_rng(0).standard_normal(len(batch))
    adv, targets = gae_advantages(batch, 0.99, 0.97)
    assert abs(adv.mean()) < 1e-12 and adv.std() == pytest.approx(1.0, abs=1e-6)
    raw = gae_raw(batch.rewards, batch.values, batch.next_values, batch.terminal.astype(float),
                  batch.boundary, 0.99, 0.97)
    np.testing.assert_allclose(targets, raw + batch.values)


def test_trpo_zero_advantage_is_noop():
    pol = GaussianPolicy.create(3, 2, hidden=(8,), rng=0)
    x = np.random.default_rng(0).standard_normal((100, 3))
    a = pol.act(x, rng=1)
    new, info = trpo_step(pol, x, a, np.zeros(100), 0.01)
    assert not info.accepted
    np.testing.assert_array_equal(new.get_flat(), pol.get_flat())


def test_trpo_bandit_converges():
    rng = np.random.default_rng(0)
    pol = GaussianPolicy.create(1, 1, hidden=(8,), rng=1, input_norm=False)
    x = np.zeros((256, 1))
    for _ in range(200):
        a = pol.act(x, rng=rng)
        adv = -((a[:, 0] - 2.0) ** 2)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        pol, info = trpo_step(pol, x, a, adv, 0.01)
        if info.accepted:
            assert info.kl <= 1.5 * 0.01
    assert pol.mean(x[:1])[0, 0] == pytest.approx(2.0, abs=0.1)


def test_value_update_examples():
    cfg = ImitationConfig(value_iters=5)
    net = Mlp((3, 16, 1), rng=0)
    x = np.random.default_rng(0).standard_normal((256, 3))
    before = net.get_flat()
    loss = value_update(net, Adam(before.size, 1e-3), x, net(x)[:, 0], cfg, rng=0)
    assert loss == 0.0
    np.testing.assert_allclose(net.get_flat(), before, atol=1e-12)
    # a bias-only model converges to the least-squares constant, the mean
    bias = Mlp((1, 1), rng=0)
    bias.params[0][:] = 0.0
    targets = np.random.default_rng(1).normal(3.0, 0.5, 512)
    opt = Adam(bias.get_flat().size, 1e-2)
    for _ in range(100):
        value_update(bias, opt, np.zeros((512, 1)), targets, cfg, rng=1)
    assert bias.params[1][0] == pytest.approx(targets.mean(), abs=1e-2)


def test_train_requires_actions_for_gail(cart_data):
    with pytest.raises(DatasetModeMismatch):
        train(cart_data.strip_actions(), SMALL)


@pytest.fixture(scope="module")
def small_run(cart_data):
    return train(cart_data, SMALL.replace(spectral_norm=True))


def test_train_bookkeeping(small_run):
    cycles = SMALL.total_env_steps // SMALL.batch_size
    assert small_run.n_generator_updates == cycles
    assert abs(small_run.n_disc_updates - cycles / 3) <= 1
    assert all(kl <= 1.5 * SMALL.max_kl for kl in small_run.kls)
    assert small_run.max_effective_sigma <= 1.05
    assert small_run.curve.steps[-1] == cycles * SMALL.batch_size
    hist = small_run.value_histories
    monotone = np.mean([np.all(np.diff(h) <= 1e-12) for h in hist])
    assert monotone >= 0.9


def test_true_reward_never_trains(cart_data):
    import lfoeq.envs as envs

    task = envs.make_task("cartpole")
    altered = dataclasses.replace(task, reward=lambda s, u, s1: 1e3 * np.cos(s[..., 0]))
    cfg = SMALL.replace(mode="gaifo", total_env_steps=512 * 4)
    a = train(cart_data.strip_actions(), cfg)
    b = train(cart_data.strip_actions(), cfg, task=altered)
    np.testing.assert_array_equal(a.policy.get_flat(), b.policy.get_flat())
    np.testing.assert_array_equal(a.discriminator.get_flat(), b.discriminator.get_flat())
    assert a.curve.means[-1] != b.curve.means[-1]


def test_curve_csv_deterministic(tmp_path, cart_data):
    cfg = SMALL.replace(total_env_steps=512 * 4)
    train(cart_data, cfg).curve.to_csv(tmp_path / "a.csv")
    train(cart_data, cfg).curve.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = LearningCurve.from_csv(tmp_path / "a.csv")
    assert back.metadata["mode"] == "gail"
    assert back.rows == LearningCurve.from_csv(tmp_path / "b.csv").rows
