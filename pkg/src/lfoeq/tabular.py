"""Exact occupancy measures and KL divergences on finite MDPs.

The inverse-dynamics disagreement between a learner and an expert equals the
gap between the state-action and the state-transition occupancy divergences.
Everything here is computed in closed form so the identity, and its collapse
to zero when each transition is induced by a single action, can be checked at
machine precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

SUPPORT_FLOOR = 1e-6


class SingularSystem(ArithmeticError):
    pass


class SupportViolation(ValueError):
    pass


class InfeasibleShape(ValueError):
    pass


@dataclass(frozen=True)
class FiniteMDP:
    T: np.ndarray  # T[s, a, s']
    rho0: np.ndarray
    gamma: float = 0.9

    def __post_init__(self):
        T = np.asarray(self.T, float)
        rho0 = np.asarray(self.rho0, float)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "rho0", rho0)
        if T.ndim != 3 or T.shape[0] != T.shape[2] or rho0.shape != (T.shape[0],):
            raise InfeasibleShape("T must be (S, A, S) and rho0 (S,)")
        if np.any(T < 0) or not np.allclose(T.sum(-1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("transition rows must be probability vectors")
        if np.any(rho0 < 0) or abs(rho0.sum() - 1.0) > 1e-12:
            raise ValueError("rho0 must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def n_states(self) -> int:
        return self.T.shape[0]

    @property
    def n_actions(self) -> int:
        return self.T.shape[1]


def check_policy(pi, mdp: FiniteMDP | None = None) -> np.ndarray:
    pi = np.asarray(pi, float)
    if mdp is not None and pi.shape != (mdp.n_states, mdp.n_actions):
        raise InfeasibleShape(f"policy shape {pi.shape} does not match the MDP")
    if np.any(pi < 0) or not np.allclose(pi.sum(-1), 1.0, rtol=0, atol=1e-12):
        raise ValueError("policy rows must be probability vectors")
    return pi


def full_support(pi, floor: float = SUPPORT_FLOOR) -> np.ndarray:
    """Mix a policy with the uniform one so every entry is at least ``floor``."""
    pi = np.asarray(pi, float)
    n = pi.shape[-1]
    w = floor * n
    out = (1.0 - w) * pi + w / n
    return out / out.sum(-1, keepdims=True)


def random_policy(n_states, n_actions, rng, floor: float = SUPPORT_FLOOR) -> np.ndarray:
    return full_support(rng.dirichlet(np.ones(n_actions), size=n_states), floor)


class OccupancyTriple(NamedTuple):
    rho_sa: np.ndarray
    rho_ss: np.ndarray
    rho_sas: np.ndarray
    stderr_sa: np.ndarray | None = None

    @property
    def state(self) -> np.ndarray:
        return self.rho_sa.sum(1)


def exact_occupancies(mdp: FiniteMDP, pi) -> OccupancyTriple:
    """Discounted occupancies from the flow equation ``(I - gamma P_pi^T) x = rho0``."""
    pi = check_policy(pi, mdp)
    P = np.einsum("sa,sat->st", pi, mdp.T)
    A = np.eye(mdp.n_states) - mdp.gamma * P.T
    try:
        x = np.linalg.solve(A, mdp.rho0)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("discounted flow system is singular") from exc
    rho_sa = x[:, None] * pi
    rho_sas = rho_sa[:, :, None] * mdp.T
    return OccupancyTriple(rho_sa, rho_sas.sum(1), rho_sas)


def inverse_dynamics_density(mdp: FiniteMDP, pi):
    """Return ``(rho[s, s', a], defined[s, s'])``.

    ``rho[s, s', a] = T(s'|s,a) pi(a|s) / sum_b T(s'|s,b) pi(b|s)``; rows whose
    denominator vanishes (s' unreachable from s) are NaN and flagged undefined.
    """
    pi = check_policy(pi, mdp)
    joint = np.einsum("sat,sa->sta", mdp.T, pi)
    denom = joint.sum(-1)
    defined = denom > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = joint / denom[..., None]
    rho[~defined] = np.nan
    return rho, defined


def _kl(p, q) -> float:
    p, q = p.ravel(), q.ravel()
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise SupportViolation("expert occupancy vanishes where the learner's does not")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


class KLReport(NamedTuple):
    kl_sa: float
    kl_ss: float
    idd: float
    residual: float


def kl_report(mdp: FiniteMDP, pi, expert) -> KLReport:
    """KL divergences of normalised occupancies and the inverse-dynamics disagreement.

    ``idd`` is summed directly over (s, a, s') against the learner's joint
    occupancy, independently of ``kl_sa`` and ``kl_ss``; ``residual`` is
    ``idd - (kl_sa - kl_ss)``.
    """
    scale = 1.0 - mdp.gamma
    occ_pi = exact_occupancies(mdp, pi)
    occ_e = exact_occupancies(mdp, expert)
    kl_sa = _kl(scale * occ_pi.rho_sa, scale * occ_e.rho_sa)
    kl_ss = _kl(scale * occ_pi.rho_ss, scale * occ_e.rho_ss)

    inv_pi, _ = inverse_dynamics_density(mdp, pi)
    inv_e, _ = inverse_dynamics_density(mdp, expert)
    w = scale * occ_pi.rho_sas  # (s, a, s')
    mask = w > 0
    num = np.transpose(inv_pi, (0, 2, 1))[mask]
    den = np.transpose(inv_e, (0, 2, 1))[mask]
    if np.any(~(den > 0)):
        raise SupportViolation("expert inverse dynamics vanish on the learner's support")
    idd = float(np.sum(w[mask] * np.log(num / den)))
    return KLReport(kl_sa, kl_ss, idd, idd - (kl_sa - kl_ss))


def _random_rho0(n_states, rng):
    return rng.dirichlet(np.ones(n_states))


def make_mdp(kind: str, n_states: int, n_actions: int, rng_seed=0, gamma: float = 0.9) -> FiniteMDP:
    """Test fixtures.

    * ``unique_action``: deterministic, and each (s, s') is induced by at most one action.
    * ``multi_action``: deterministic, with at least one (s, s') induced by two actions.
    * ``random_stochastic``: dense Dirichlet rows.
    """
    rng = np.random.default_rng(rng_seed)
    S, A = n_states, n_actions
    if S < 1 or A < 1:
        raise InfeasibleShape("need at least one state and one action")
    T = np.zeros((S, A, S))
    if kind == "unique_action":
        if A > S:
            raise InfeasibleShape("unique_action needs n_actions <= n_states")
        for s in range(S):
            T[s, np.arange(A), rng.choice(S, size=A, replace=False)] = 1.0
    elif kind == "multi_action":
        if A < 2:
            raise InfeasibleShape("multi_action needs at least two actions")
        T[np.arange(S)[:, None], np.arange(A)[None, :], rng.integers(0, S, size=(S, A))] = 1.0
        s = rng.integers(S)
        T[s, 1] = T[s, 0]
    elif kind == "random_stochastic":
        T = rng.dirichlet(np.ones(S), size=(S, A))
    else:
        raise ValueError(f"unknown MDP kind {kind!r}")
    return FiniteMDP(T, _random_rho0(S, rng), gamma)


def inducing_actions(mdp: FiniteMDP) -> np.ndarray:
    """Count of actions with positive probability of each (s, s')."""
    return (mdp.T > 0).sum(1)


def monte_carlo_occupancy(
    mdp: FiniteMDP, pi, n_rollouts: int, horizon: int, rng_seed=0, n_batches: int = 100
) -> OccupancyTriple:
    """Discounted visitation counts averaged over truncated rollouts.

    Truncation biases each entry low by at most ``gamma**horizon / (1 - gamma)``.
    ``stderr_sa`` is the standard error of ``rho_sa`` estimated from
    ``n_batches`` equal batches of rollouts.
    """
    pi = check_policy(pi, mdp)
    rng = np.random.default_rng(rng_seed)
    S, A = mdp.n_states, mdp.n_actions
    n_batches = max(2, min(n_batches, n_rollouts))
    n_rollouts -= n_rollouts % n_batches
    # inverse-CDF sampling with one sorted table per row: row r occupies (r, r + 1]
    pi_table = (np.cumsum(pi, 1) + np.arange(S)[:, None]).ravel()
    T_table = (np.cumsum(mdp.T, 2).reshape(S * A, S) + np.arange(S * A)[:, None]).ravel()
    s = np.searchsorted(np.cumsum(mdp.rho0), rng.uniform(size=n_rollouts), side="right").clip(max=S - 1)
    batch = np.arange(n_rollouts) % n_batches * (S * A * S)
    counts = np.zeros(n_batches * S * A * S)
    disc = 1.0
    for _ in range(horizon):
        a = (np.searchsorted(pi_table, s + rng.uniform(size=n_rollouts), side="right") - s * A).clip(0, A - 1)
        sa = s * A + a
        s1 = (np.searchsorted(T_table, sa + rng.uniform(size=n_rollouts), side="right") - sa * S).clip(0, S - 1)
        counts += disc * np.bincount(batch + sa * S + s1, minlength=counts.size)
        s = s1
        disc *= mdp.gamma
    per_batch = counts.reshape(n_batches, S, A, S) / (n_rollouts / n_batches)
    rho_sas = per_batch.mean(0)
    stderr = per_batch.sum(-1).std(0, ddof=1) / np.sqrt(n_batches)
    return OccupancyTriple(rho_sas.sum(-1), rho_sas.sum(1), rho_sas, stderr)


# ---------------------------------------------------------------------------
# plain-text fixture format:
#   line 1: n_states n_actions gamma
#   then one "s a s' prob" line per nonzero transition
#   last line: "rho0" followed by n_states probabilities

def save_mdp(mdp: FiniteMDP, path) -> None:
    lines = [f"{mdp.n_states} {mdp.n_actions} {float(mdp.gamma)!r}"]
    for s, a, s1 in zip(*np.nonzero(mdp.T)):
        lines.append(f"{s} {a} {s1} {float(mdp.T[s, a, s1])!r}")
    lines.append("rho0 " + " ".join(repr(float(p)) for p in mdp.rho0))
    Path(path).write_text("\n".join(lines) + "\n")


def load_mdp(path) -> FiniteMDP:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    head = lines[0].split()
    S, A, gamma = int(head[0]), int(head[1]), float(head[2])
    T = np.zeros((S, A, S))
    rho0 = None
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "rho0":
            rho0 = np.array([float(p) for p in parts[1:]])
        else:
            T[int(parts[0]), int(parts[1]), int(parts[2])] = float(parts[3])
    if rho0 is None:
        raise ValueError(f"{path}: missing rho0 line")
    return FiniteMDP(T, rho0, gamma)


# ---------------------------------------------------------------------------

@dataclass
class TabularVerification:
    max_residual: float
    max_unique_idd: float
    max_unique_gap: float
    max_multi_idd: float
    min_kl_gap: float

    @property
    def passed(self) -> bool:
        return (
            self.max_residual <= 1e-10
            and self.max_unique_idd <= 1e-10
            and self.max_unique_gap <= 1e-10
            and self.max_multi_idd > 1e-6
            and self.min_kl_gap >= -1e-12
        )


def verify_suite(seed: int = 0, n_random: int = 50, n_unique: int = 20, pairs: int = 10) -> TabularVerification:
    """Run the decomposition identity and the unique-action collapse on random fixtures."""
    rng = np.random.default_rng(seed)
    residuals, gaps = [], []
    for _ in range(n_random):
        S, A = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        mdp = make_mdp("random_stochastic", S, A, rng_seed=int(rng.integers(2**31)))
        rep = kl_report(mdp, random_policy(S, A, rng), random_policy(S, A, rng))
        residuals.append(abs(rep.residual))
        gaps.append(rep.kl_sa - rep.kl_ss)
    unique_idd, unique_gap = [], []
    for _ in range(n_unique):
        S = int(rng.integers(2, 9))
        A = int(rng.integers(1, min(S, 4) + 1))
        mdp = make_mdp("unique_action", S, A, rng_seed=int(rng.integers(2**31)))
        for _ in range(pairs):
            rep = kl_report(mdp, random_policy(S, A, rng), random_policy(S, A, rng))
            unique_idd.append(abs(rep.idd))
            unique_gap.append(abs(rep.kl_sa - rep.kl_ss))
    multi_idd = []
    mdp = make_mdp("multi_action", 3, 2, rng_seed=seed)
    for _ in range(100):
        multi_idd.append(kl_report(mdp, random_policy(3, 2, rng), random_policy(3, 2, rng)).idd)
    return TabularVerification(
        max_residual=max(residuals),
        max_unique_idd=max(unique_idd),
        max_unique_gap=max(unique_gap),
        max_multi_idd=max(multi_idd),
        min_kl_gap=min(gaps),
    )
