"""Expert trajectory datasets and their binary file format.

File layout (little endian)::

    b"LFOEQ1"
    uint16 len, env_id (utf-8)
    float64 dt
    uint32 horizon, state_dim, action_dim (0 = actions stripped), n_trajectories
    per trajectory:
        uint32 n_steps, float64 episode_return
        float64 states[n_steps + 1][state_dim]
        float64 actions[n_steps][action_dim]
    blake2b-64 digest of every preceding byte
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MAGIC = b"LFOEQ1"


class CorruptFile(ValueError):
    pass


class BadSubsample(ValueError):
    pass


class IoFailure(OSError):
    pass


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray       # (n_steps + 1, state_dim)
    actions: np.ndarray      # (n_steps, action_dim); action_dim may be 0
    episode_return: float

    @property
    def n_steps(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class TrajectoryDataset:
    env_id: str
    dt: float
    horizon: int
    state_dim: int
    action_dim: int
    trajectories: tuple

    def __post_init__(self):
        for tr in self.trajectories:
            if tr.states.shape != (tr.n_steps + 1, self.state_dim) or tr.actions.shape[1] != self.action_dim:
                raise CorruptFile("trajectory dimensions disagree with the header")
            if tr.n_steps > self.horizon:
                raise CorruptFile("trajectory longer than the horizon")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def has_actions(self) -> bool:
        return self.action_dim > 0

    @property
    def n_transitions(self) -> int:
        return sum(tr.n_steps for tr in self.trajectories)

    @property
    def returns(self) -> np.ndarray:
        return np.array([tr.episode_return for tr in self.trajectories])

    def transitions(self):
        """Stacked ``(s, a, s_next)`` arrays over every trajectory."""
        if not self.trajectories:
            empty = np.zeros((0, self.state_dim))
            return empty, np.zeros((0, self.action_dim)), empty
        s = np.concatenate([tr.states[:-1] for tr in self.trajectories])
        a = np.concatenate([tr.actions for tr in self.trajectories])
        s1 = np.concatenate([tr.states[1:] for tr in self.trajectories])
        return s, a, s1

    def strip_actions(self) -> "TrajectoryDataset":
        trajs = tuple(replace(tr, actions=np.zeros((tr.n_steps, 0))) for tr in self.trajectories)
        return replace(self, action_dim=0, trajectories=trajs)

    def subsample(self, n: int, seed=None) -> "TrajectoryDataset":
        if not 0 <= n <= len(self):
            raise BadSubsample(f"cannot draw {n} of {len(self)} trajectories")
        idx = np.random.default_rng(seed).choice(len(self), size=n, replace=False)
        return replace(self, trajectories=tuple(self.trajectories[i] for i in idx))


def encode(ds: TrajectoryDataset) -> bytes:
    name = ds.env_id.encode()
    parts = [MAGIC, struct.pack("<H", len(name)), name,
             struct.pack("<dIIII", ds.dt, ds.horizon, ds.state_dim, ds.action_dim, len(ds))]
    for tr in ds.trajectories:
        parts.append(struct.pack("<Id", tr.n_steps, tr.episode_return))
        parts.append(np.ascontiguousarray(tr.states, "<f8").tobytes())
        parts.append(np.ascontiguousarray(tr.actions, "<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.blake2b(body, digest_size=8).digest()


def decode(buf: bytes) -> TrajectoryDataset:
    if len(buf) < len(MAGIC) + 8 or buf[: len(MAGIC)] != MAGIC:
        raise CorruptFile("bad magic")
    body, digest = buf[:-8], buf[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CorruptFile("checksum mismatch")
    try:
        pos = len(MAGIC)
        (n,) = struct.unpack_from("<H", body, pos)
        env_id = body[pos + 2 : pos + 2 + n].decode()
        pos += 2 + n
        dt, horizon, sd, ad, n_traj = struct.unpack_from("<dIIII", body, pos)
        pos += struct.calcsize("<dIIII")
        trajs = []
        for _ in range(n_traj):
            steps, ret = struct.unpack_from("<Id", body, pos)
            pos += struct.calcsize("<Id")
            states = np.frombuffer(body, "<f8", (steps + 1) * sd, pos).reshape(steps + 1, sd)
            pos += 8 * (steps + 1) * sd
            actions = np.frombuffer(body, "<f8", steps * ad, pos).reshape(steps, ad)
            pos += 8 * steps * ad
            trajs.append(Trajectory(states.astype(float), actions.astype(float), ret))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"truncated or malformed payload: {exc}") from exc
    if pos != len(body):
        raise CorruptFile("trailing bytes after the last trajectory")
    return TrajectoryDataset(env_id, dt, horizon, sd, ad, tuple(trajs))


def save_dataset(ds: TrajectoryDataset, path) -> None:
    try:
        Path(path).write_bytes(encode(ds))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_dataset(path, view: str = "lfd", subsample_n: int | None = None, seed=None) -> TrajectoryDataset:
    """Read a dataset file; ``view="lfo"`` drops the actions."""
    if view not in ("lfd", "lfo"):
        raise ValueError(f"view must be 'lfd' or 'lfo', got {view!r}")
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    ds = decode(buf)
    if subsample_n is not None:
        ds = ds.subsample(subsample_n, seed)
    return ds.strip_actions() if view == "lfo" else ds


def export_csv(ds: TrajectoryDataset, directory) -> list:
    """Write one CSV per trajectory (step, state columns, action columns)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    cols = [f"s{i}" for i in range(ds.state_dim)] + [f"a{i}" for i in range(ds.action_dim)]
    paths = []
    for k, tr in enumerate(ds.trajectories):
        acts = np.vstack([tr.actions, np.full((1, ds.action_dim), np.nan)])
        rows = np.hstack([np.arange(tr.n_steps + 1)[:, None], tr.states, acts])
        p = out / f"traj_{k:04d}.csv"
        header = f"env_id={ds.env_id}\ndt={ds.dt!r}\nreturn={tr.episode_return!r}\nstep," + ",".join(cols)
        np.savetxt(p, rows, delimiter=",", header=header, fmt="%.17g")
        paths.append(p)
    return paths
