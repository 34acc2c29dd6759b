"""Small numpy networks with hand-written reverse-mode gradients.

Contains the fixed-graph MLP used for policies, value functions and
discriminators, a diagonal Gaussian policy head, a streaming input
normalizer, spectral normalization by power iteration, and Adam.

Checkpoint layout (little-endian) written by :func:`save_policy`::

    8 bytes   magic  b"LFOEQNN1"
    uint8     activation (0 = tanh, 1 = relu)
    uint32    n, followed by n uint32 layer sizes
    float64   per layer: W (in x out, row-major) then b (out)
    uint32    k, followed by k float64 log-std entries
    uint8     has_normalizer; if 1: float64 count, clip, mean[in], m2[in]
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_2PI = np.log(2 * np.pi)
_ACTS = ("tanh", "relu")


class ShapeMismatch(ValueError):
    pass


def orthogonal(rng, shape, gain=1.0):
    a = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


class Mlp:
    """Fully connected network; activation on hidden layers only."""

    def __init__(self, sizes, activation="tanh", rng=None, hidden_gain=1.0, out_gain=1.0):
        if activation not in _ACTS:
            raise ValueError(f"activation must be one of {_ACTS}")
        rng = np.random.default_rng(rng)
        self.sizes = tuple(int(n) for n in sizes)
        self.activation = activation
        self.params = []
        n_layers = len(self.sizes) - 1
        for i, (n_in, n_out) in enumerate(zip(self.sizes, self.sizes[1:])):
            gain = out_gain if i == n_layers - 1 else hidden_gain
            self.params += [orthogonal(rng, (n_in, n_out), gain), np.zeros(n_out)]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def weights(self):
        return self.params[0::2]

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _dact(self, z, h):
        return 1.0 - h * h if self.activation == "tanh" else (z > 0).astype(float)

    def forward(self, x, weights=None):
        """Returns ``(y, cache)``; ``weights`` overrides the weight matrices."""
        x = np.asarray(x, float)
        if x.shape[-1] != self.sizes[0]:
            raise ShapeMismatch(f"input width {x.shape[-1]} != {self.sizes[0]}")
        Ws = self.weights if weights is None else weights
        hs, zs = [x], []
        h = x
        for i, (W, b) in enumerate(zip(Ws, self.params[1::2])):
            z = h @ W + b
            zs.append(z)
            h = z if i == self.n_layers - 1 else self._act(z)
            hs.append(h)
        return h, (hs, zs, Ws)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Reverse pass. Returns ``(param_grads, input_grad)`` with grads w.r.t.
        the weights actually used in the forward pass."""
        hs, zs, Ws = cache
        g = np.asarray(grad_out, float)
        if g.shape != hs[-1].shape:
            raise ShapeMismatch(f"output grad {g.shape} != output {hs[-1].shape}")
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * self._dact(zs[i], hs[i + 1])
            h_in = hs[i]
            grads[2 * i] = h_in.reshape(-1, h_in.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[2 * i + 1] = g.reshape(-1, g.shape[-1]).sum(0)
            g = g @ Ws[i].T
        return grads, g

    def jvp(self, cache, dparams):
        """Forward-mode derivative of the output along a parameter direction."""
        hs, zs, Ws = cache
        dh = np.zeros_like(hs[0])
        for i in range(self.n_layers):
            dz = dh @ Ws[i] + hs[i] @ dparams[2 * i] + dparams[2 * i + 1]
            dh = dz if i == self.n_layers - 1 else dz * self._dact(zs[i], hs[i + 1])
        return dh

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        self.params = unflatten(flat, self.params)

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.sizes, new.activation = self.sizes, self.activation
        new.params = [p.copy() for p in self.params]
        return new


def unflatten(flat, like):
    out, i = [], 0
    for p in like:
        out.append(np.asarray(flat[i : i + p.size], float).reshape(p.shape).copy())
        i += p.size
    if i != len(flat):
        raise ShapeMismatch(f"flat vector has {len(flat)} entries, expected {i}")
    return out


def flatten(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])


def forward_backward(net: Mlp, inputs, output_grad):
    """Outputs, parameter gradients and input gradients of ``sum(output * output_grad)``."""
    y, cache = net.forward(inputs)
    grads, g_in = net.backward(cache, output_grad)
    return y, grads, g_in


# ---------------------------------------------------------------------------

@dataclass
class RunningNormalizer:
    """Streaming per-dimension standardizer (Chan et al. pairwise merge)."""

    dim: int
    clip: float = 5.0
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros(self.dim)

    @property
    def var(self) -> np.ndarray:
        return self.m2 / self.count if self.count > 0 else np.ones(self.dim)

    def update(self, batch) -> None:
        batch = np.asarray(batch, float).reshape(-1, self.dim)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(0)
        b_m2 = ((batch - b_mean) ** 2).sum(0)
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + b_m2 + delta**2 * (self.count * n / total)
        self.count = total

    def apply(self, x) -> np.ndarray:
        return np.clip((np.asarray(x, float) - self.mean) / np.sqrt(self.var + 1e-8), -self.clip, self.clip)

    def copy(self) -> "RunningNormalizer":
        return RunningNormalizer(self.dim, self.clip, self.count, self.mean.copy(), self.m2.copy())


def normalizer_update_apply(norm: RunningNormalizer, batch) -> np.ndarray:
    batch = np.asarray(batch, float)
    if batch.size == 0:
        raise ValueError("empty batch")
    norm.update(batch)
    return norm.apply(batch)


# ---------------------------------------------------------------------------

@dataclass
class GaussianPolicy:
    """Diagonal Gaussian with an MLP mean and state-independent log std."""

    mean_net: Mlp
    log_std: np.ndarray
    obs_norm: RunningNormalizer | None = None

    @classmethod
    def create(cls, obs_dim, act_dim, hidden=(100, 100), activation="tanh", rng=None,
               init_log_std=0.0, input_norm=True, clip=5.0):
        net = Mlp((obs_dim, *hidden, act_dim), activation, rng, hidden_gain=1.0, out_gain=0.01)
        norm = RunningNormalizer(obs_dim, clip) if input_norm else None
        return cls(net, np.full(act_dim, float(init_log_std)), norm)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @property
    def act_dim(self) -> int:
        return self.log_std.size

    def features(self, obs) -> np.ndarray:
        """Network input for raw observations (frozen normalization)."""
        return obs if self.obs_norm is None else self.obs_norm.apply(obs)

    def mean(self, x) -> np.ndarray:
        return self.mean_net(x)

    def log_prob(self, x, a) -> np.ndarray:
        mu = self.mean_net(x)
        z = (np.asarray(a, float) - mu) / self.std
        return -0.5 * np.sum(z * z, -1) - np.sum(self.log_std) - 0.5 * self.act_dim * LOG_2PI

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.mean_net.get_flat(), self.log_std])

    def set_flat(self, flat) -> None:
        n = flat.size - self.act_dim
        self.mean_net.set_flat(flat[:n])
        self.log_std = np.array(flat[n:], float)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy(),
                              None if self.obs_norm is None else self.obs_norm.copy())

    def act(self, obs, rng=None, deterministic=False) -> np.ndarray:
        return policy_sample(self, self.features(obs), rng, deterministic)


def policy_logprob(policy: GaussianPolicy, s, a, weights=None):
    """Log density of ``a`` under ``policy`` at network input ``s`` and the
    gradient of its (optionally weighted) sum w.r.t. the flat parameters
    (mean net, then log std)."""
    s = np.asarray(s, float)
    a = np.asarray(a, float)
    mu, cache = policy.mean_net.forward(s)
    std = policy.std
    z = (a - mu) / std
    logp = -0.5 * np.sum(z * z, -1) - np.sum(policy.log_std) - 0.5 * policy.act_dim * LOG_2PI
    w = np.ones(logp.shape) if weights is None else np.asarray(weights, float)
    dmu = w[..., None] * z / std
    grads, _ = policy.mean_net.backward(cache, dmu)
    dlog_std = (w[..., None] * (z * z - 1.0)).reshape(-1, policy.act_dim).sum(0)
    return logp, np.concatenate([flatten(grads), dlog_std])


def policy_sample(policy: GaussianPolicy, s, rng=None, deterministic=False) -> np.ndarray:
    mu = policy.mean_net(np.asarray(s, float))
    if deterministic:
        return mu
    rng = np.random.default_rng(rng)
    return mu + policy.std * rng.standard_normal(mu.shape)


# ---------------------------------------------------------------------------

@dataclass
class SpectralState:
    """Left/right singular vector estimates, one pair per layer."""

    u: list
    v: list

    @classmethod
    def init(cls, weights, rng, warmup=50):
        rng = np.random.default_rng(rng)
        us, vs = [], []
        for W in weights:
            u = rng.standard_normal(W.shape[0])
            v = rng.standard_normal(W.shape[1])
            us.append(u / np.linalg.norm(u))
            vs.append(v / np.linalg.norm(v))
        state = cls(us, vs)
        for _ in range(warmup):
            for i, W in enumerate(weights):
                spectral_step(W, state, i)
        return state

    def sigma(self, W, i=0) -> float:
        return float(self.u[i] @ W @ self.v[i])


def _unit(x):
    return x / max(np.linalg.norm(x), 1e-12)


def spectral_step(W, state: SpectralState, layer: int = 0):
    """One power iteration for layer ``layer``; returns ``(W / sigma, sigma)``."""
    u = state.u[layer]
    v = _unit(W.T @ u)
    u = _unit(W @ v)
    state.u[layer], state.v[layer] = u, v
    sigma = float(u @ W @ v)
    return W / sigma, sigma


def spectral_backward(W, grad_wbar, u, v):
    """Gradient w.r.t. raw W of a loss with gradient ``grad_wbar`` w.r.t. W/sigma,
    sigma = u^T W v with u, v held fixed."""
    sigma = float(u @ W @ v)
    wbar = W / sigma
    return grad_wbar / sigma - (np.sum(grad_wbar * wbar) / sigma) * np.outer(u, v)


# ---------------------------------------------------------------------------

def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Discriminator:
    """Binary classifier ``D(x) = sigmoid(mlp(x))`` with optional spectral
    normalization of every layer.  Inputs are standardized with fixed
    statistics supplied at construction and, if ``clip`` is set, clipped to
    ``[-clip, clip]`` so that far-away inputs all land on the boundary the
    classifier is trained on."""

    def __init__(self, in_dim, hidden=(100, 100), activation="tanh", rng=None, spectral=False,
                 shift=None, scale=None, warmup=50, clip=None):
        rng = np.random.default_rng(rng)
        self.net = Mlp((in_dim, *hidden, 1), activation, rng)
        self.shift = np.zeros(in_dim) if shift is None else np.asarray(shift, float)
        self.scale = np.ones(in_dim) if scale is None else np.asarray(scale, float)
        self.sn = SpectralState.init(self.net.weights, rng, warmup) if spectral else None
        self.clip = clip

    @property
    def spectral(self) -> bool:
        return self.sn is not None

    def effective_weights(self):
        if self.sn is None:
            return self.net.weights
        return [W / self.sn.sigma(W, i) for i, W in enumerate(self.net.weights)]

    def power_iterate(self) -> None:
        if self.sn is not None:
            for i, W in enumerate(self.net.weights):
                spectral_step(W, self.sn, i)

    def logits(self, x):
        x = (np.asarray(x, float) - self.shift) / self.scale
        if self.clip:
            x = np.clip(x, -self.clip, self.clip)
        z, cache = self.net.forward(x, self.effective_weights())
        return z[..., 0], cache

    def prob(self, x) -> np.ndarray:
        return sigmoid(self.logits(x)[0])

    def loss_and_grad(self, agent_x, expert_x, entropy_coef=0.0):
        """Logistic loss pushing D up on agent inputs and down on expert inputs,
        minus ``entropy_coef`` times the mean Bernoulli entropy of D.

        Returns ``(loss, flat_grad, cross_entropy)``.
        """
        na, ne = len(agent_x), len(expert_x)
        if na == 0 or ne == 0:
            raise ShapeMismatch("both batches must be nonempty")
        z, cache = self.logits(np.concatenate([agent_x, expert_x]))
        za, ze = z[:na], z[na:]
        ce = np.mean(softplus(-za)) + np.mean(softplus(ze))
        p = sigmoid(z)
        ent = np.mean(softplus(z) - p * z)
        dz = np.concatenate([(p[:na] - 1.0) / na, p[na:] / ne])
        dz += entropy_coef * z * p * (1.0 - p) / z.size
        grads, _ = self.net.backward(cache, dz[:, None])
        if self.sn is not None:
            for i, W in enumerate(self.net.weights):
                grads[2 * i] = spectral_backward(W, grads[2 * i], self.sn.u[i], self.sn.v[i])
        return float(ce - entropy_coef * ent), flatten(grads), float(ce)

    def get_flat(self) -> np.ndarray:
        return self.net.get_flat()

    def set_flat(self, flat) -> None:
        self.net.set_flat(flat)


# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, n_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params, grads) -> np.ndarray:
        """Descent step on ``params`` given the loss gradient ``grads``."""
        if params.shape != grads.shape or params.shape != self.m.shape:
            raise ShapeMismatch("parameter/gradient/state shapes differ")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads * grads
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params, grads, opt: Adam, lr=None) -> np.ndarray:
    if lr is not None:
        opt.lr = lr
    return opt.step(np.asarray(params, float), np.asarray(grads, float))


# ---------------------------------------------------------------------------

MAGIC = b"LFOEQNN1"


def save_policy(path, policy: GaussianPolicy) -> None:
    net = policy.mean_net
    out = [MAGIC, struct.pack("<B", _ACTS.index(net.activation))]
    out.append(struct.pack(f"<I{len(net.sizes)}I", len(net.sizes), *net.sizes))
    out.append(net.get_flat().astype("<f8").tobytes())
    out.append(struct.pack("<I", policy.act_dim) + policy.log_std.astype("<f8").tobytes())
    norm = policy.obs_norm
    if norm is None:
        out.append(struct.pack("<B", 0))
    else:
        out.append(struct.pack("<Bdd", 1, float(norm.count), norm.clip))
        out.append(norm.mean.astype("<f8").tobytes() + norm.m2.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_policy(path) -> GaussianPolicy:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint")
    pos = 8
    (act,) = struct.unpack_from("<B", buf, pos)
    pos += 1
    (n,) = struct.unpack_from("<I", buf, pos)
    sizes = struct.unpack_from(f"<{n}I", buf, pos + 4)
    pos += 4 + 4 * n
    net = Mlp(sizes, _ACTS[act], rng=0)
    n_par = sum(p.size for p in net.params)
    net.set_flat(np.frombuffer(buf, "<f8", n_par, pos).astype(float))
    pos += 8 * n_par
    (k,) = struct.unpack_from("<I", buf, pos)
    log_std = np.frombuffer(buf, "<f8", k, pos + 4).astype(float)
    pos += 4 + 8 * k
    (has_norm,) = struct.unpack_from("<B", buf, pos)
    norm = None
    if has_norm:
        count, clip = struct.unpack_from("<dd", buf, pos + 1)
        arr = np.frombuffer(buf, "<f8", 2 * sizes[0], pos + 17).astype(float)
        norm = RunningNormalizer(sizes[0], clip, int(count), arr[: sizes[0]].copy(), arr[sizes[0] :].copy())
    return GaussianPolicy(net, log_std, norm)
