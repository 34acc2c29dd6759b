import numpy as np
import pytest

from lfoeq.datasets import (
    BadSubsample,
    CorruptFile,
    IoFailure,
    Trajectory,
    TrajectoryDataset,
    encode,
    export_csv,
    load_dataset,
    save_dataset,
)
from lfoeq.dynamics import StateTransition, forward_step, inverse_dynamics, is_feasible
from lfoeq.envs import TASK_IDS, VecEnv, make_task, run_episodes, wrap_angle
from lfoeq.expert import reference_controller, rollout_dataset


def test_wrap_angle():
    np.testing.assert_allclose(wrap_angle([0.0, 2 * np.pi, 3 * np.pi / 2, -3 * np.pi / 2]),
                               [0.0, 0.0, -np.pi / 2, np.pi / 2], atol=1e-12)


@pytest.mark.parametrize("name", TASK_IDS)
def test_task_shapes(name):
    task = make_task(name)
    s = task.sample_init(np.random.default_rng(0), 5)
    assert s.shape == (5, task.state_dim)
    assert task.features(s).shape == (5, task.obs_dim)
    assert task.reward(s, np.zeros((5, task.act_dim)), s).shape == (5,)


def test_vecenv_horizon_and_reset():
    task = make_task("pendulum", horizon=3)
    env = VecEnv(task, 2, seed=0)
    flags = []
    for _ in range(6):
        res = env.step(np.zeros((2, 1)))
        flags.append(res.boundary.copy())
        np.testing.assert_array_equal(res.next_state, forward_step(task.model, res.state, res.action))
    flags = np.array(flags)
    assert flags.sum(0).tolist() == [2, 2]
    assert flags[2].all() and flags[5].all()
    assert not env.step(np.zeros((2, 1))).terminal.any()


def test_vecenv_clips_actions():
    task = make_task("pendulum")
    env = VecEnv(task, 1, seed=0)
    res = env.step(np.array([[1e6]]))
    assert res.action[0, 0] == task.action_limit


def test_cartpole_termination():
    task = make_task("cartpole")
    returns, trajs = run_episodes(task, lambda s: np.full((len(s), 1), 10.0), 4, seed=1)
    for r, (s, u) in zip(returns, trajs):
        assert len(s) == len(u) + 1 < task.horizon
        assert r == len(u)
        assert task.failed(s[-1]) and not task.failed(s[:-1]).any()


def test_noise_is_seeded():
    task = make_task("cartpole")
    a = run_episodes(task, reference_controller(task), 3, seed=4, noise_bound=0.01)
    b = run_episodes(task, reference_controller(task), 3, seed=4, noise_bound=0.01)
    assert a[0].tobytes() == b[0].tobytes()


@pytest.fixture(scope="module")
def pend_data():
    task = make_task("pendulum")
    return task, rollout_dataset(task, reference_controller(task), 20, seed=3)


def test_dataset_physical_validity(pend_data):
    task, ds = pend_data
    assert len(ds) == 20 and ds.horizon == 200
    s, a, s1 = ds.transitions()
    assert len(s) == 20 * 200
    np.testing.assert_allclose(forward_step(task.model, s, a), s1, rtol=0, atol=1e-12)
    u = inverse_dynamics(task.model, StateTransition(s, s1))
    assert np.abs(u - a).max() <= 1e-9
    assert all(is_feasible(task.model, StateTransition(x, y)) for x, y in zip(s[:500], s1[:500]))
    # interior consistency: the successor of step t is the state of step t + 1
    interior = np.ones(len(s), bool)
    interior[np.cumsum([tr.n_steps for tr in ds.trajectories]) - 1] = False
    np.testing.assert_array_equal(s1[:-1][interior[:-1]], s[1:][interior[:-1]])


def test_round_trip_bytes(tmp_path, pend_data):
    _, ds = pend_data
    save_dataset(ds, tmp_path / "a.lfoeq")
    back = load_dataset(tmp_path / "a.lfoeq")
    save_dataset(back, tmp_path / "b.lfoeq")
    assert (tmp_path / "a.lfoeq").read_bytes() == (tmp_path / "b.lfoeq").read_bytes()
    np.testing.assert_array_equal(back.returns, ds.returns)


def test_views_and_subsample(tmp_path, pend_data):
    _, ds = pend_data
    save_dataset(ds, tmp_path / "a.lfoeq")
    lfd = load_dataset(tmp_path / "a.lfoeq", "lfd")
    lfo = load_dataset(tmp_path / "a.lfoeq", "lfo")
    assert lfo.action_dim == 0 and not lfo.has_actions
    assert all(tr.actions.shape == (tr.n_steps, 0) for tr in lfo.trajectories)
    np.testing.assert_array_equal(lfd.transitions()[0], lfo.transitions()[0])
    full = load_dataset(tmp_path / "a.lfoeq", subsample_n=20, seed=1)
    assert sorted(full.returns) == sorted(ds.returns)
    a = load_dataset(tmp_path / "a.lfoeq", subsample_n=5, seed=9)
    b = load_dataset(tmp_path / "a.lfoeq", subsample_n=5, seed=9)
    np.testing.assert_array_equal(a.returns, b.returns)
    with pytest.raises(BadSubsample):
        load_dataset(tmp_path / "a.lfoeq", subsample_n=21)


def test_corruption_detected(tmp_path, pend_data):
    _, ds = pend_data
    buf = bytearray(encode(ds))
    buf[100] ^= 1
    (tmp_path / "bad").write_bytes(bytes(buf))
    with pytest.raises(CorruptFile):
        load_dataset(tmp_path / "bad")
    (tmp_path / "short").write_bytes(encode(ds)[:50])
    with pytest.raises(CorruptFile):
        load_dataset(tmp_path / "short")
    with pytest.raises(IoFailure):
        load_dataset(tmp_path / "missing")
    with pytest.raises(IoFailure):
        save_dataset(ds, tmp_path / "no" / "such" / "dir" / "x")


def test_header_invariants():
    tr = Trajectory(np.zeros((3, 2)), np.zeros((2, 1)), 0.0)
    with pytest.raises(CorruptFile):
        TrajectoryDataset("pendulum", 0.05, 200, 4, 1, (tr,))
    with pytest.raises(CorruptFile):
        TrajectoryDataset("pendulum", 0.05, 1, 2, 1, (tr,))


def test_empty_dataset_round_trip():
    ds = TrajectoryDataset("cartpole", 0.02, 200, 4, 1, ())
    from lfoeq.datasets import decode
    back = decode(encode(ds))
    assert len(back) == 0 and back.transitions()[0].shape == (0, 4)


def test_csv_export(tmp_path, pend_data):
    _, ds = pend_data
    paths = export_csv(ds.subsample(2, seed=0), tmp_path / "csv")
    assert len(paths) == 2
    rows = np.loadtxt(paths[0], delimiter=",")
    assert rows.shape == (201, 1 + 2 + 1)
    assert np.isnan(rows[-1, -1])
