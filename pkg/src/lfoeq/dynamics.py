"""Euler-Lagrange robot systems with exact one-step action recovery.

Every model describes ``M(q) q'' + C(q, q') q' + G(q) = B u`` and is stepped
with explicit Euler, so that :func:`inverse_dynamics` inverts
:func:`forward_step` exactly (up to floating point).

All model functions broadcast over leading batch dimensions: ``q`` of shape
``(..., dof)`` gives ``M`` of shape ``(..., dof, dof)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


class DimensionMismatch(ValueError):
    pass


class SingularMass(ArithmeticError):
    pass


class InfeasibleTransition(ValueError):
    """Raised when no control input can produce a transition.

    ``kind`` is ``"position"`` when q' is not q + dt*q', and ``"actuation"``
    when the required generalized force leaves the range of B.
    """

    def __init__(self, kind: str, residual: float):
        super().__init__(f"infeasible transition ({kind}): residual {residual:.3e}")
        self.kind = kind
        self.residual = residual


class GeneralizedCoords(NamedTuple):
    q: np.ndarray
    qdot: np.ndarray

    @classmethod
    def from_state(cls, s) -> "GeneralizedCoords":
        s = np.asarray(s, dtype=float)
        n = s.shape[-1] // 2
        return cls(s[..., :n], s[..., n:])

    def to_state(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.q, float), np.asarray(self.qdot, float)], axis=-1)


class ControlInput(NamedTuple):
    u: np.ndarray


class StateTransition(NamedTuple):
    s: np.ndarray
    s_next: np.ndarray


@dataclass(frozen=True)
class ELModel:
    name: str
    dof: int
    act_dim: int
    B: np.ndarray
    params: dict
    dt: float
    state_low: np.ndarray
    state_high: np.ndarray
    control_scale: float
    mass: Callable = field(repr=False)
    coriolis: Callable = field(repr=False)
    gravity: Callable = field(repr=False)
    potential: Callable = field(repr=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.B.shape != (self.dof, self.act_dim) or np.linalg.matrix_rank(self.B) != self.act_dim:
            raise ValueError("actuation matrix must be dof x act_dim with full column rank")

    @property
    def state_dim(self) -> int:
        return 2 * self.dof

    def with_params(self, dt: float | None = None, **params) -> "ELModel":
        """Rebuild the model with overridden physical parameters."""
        if params:
            merged = {**self.params, **params}
            rebuilt = make_model(self.name, **merged)
            return dataclasses.replace(rebuilt, dt=self.dt if dt is None else dt)
        return dataclasses.replace(self, dt=self.dt if dt is None else dt)

    def sample_state(self, rng, size=None) -> np.ndarray:
        shape = (self.state_dim,) if size is None else (size, self.state_dim)
        return rng.uniform(self.state_low, self.state_high, size=shape)

    def sample_control(self, rng, size=None) -> np.ndarray:
        shape = (self.act_dim,) if size is None else (size, self.act_dim)
        return rng.uniform(-self.control_scale, self.control_scale, size=shape)


# ---------------------------------------------------------------------------
# system catalog

def _pendulum(m=1.0, l=1.0, g=9.81, dt=0.05):
    ml2 = m * l * l

    def mass(q):
        return np.full(q.shape + (1,), ml2)

    def coriolis(q, qdot):
        return np.zeros(q.shape + (1,))

    def gravity(q):
        return m * g * l * np.sin(q)

    def potential(q):
        return m * g * l * (1.0 - np.cos(q[..., 0]))

    return dict(
        dof=1, act_dim=1, B=np.eye(1), params=dict(m=m, l=l, g=g), dt=dt,
        state_low=np.array([-np.pi, -8.0]), state_high=np.array([np.pi, 8.0]),
        control_scale=20.0, mass=mass, coriolis=coriolis, gravity=gravity,
        potential=potential,
    )


def _two_link_terms(m1, m2, l1, l2, lc1, lc2, I1, I2, g):
    # planar two-link arm, angles measured from the downward vertical,
    # q2 relative to link 1
    def mass(q):
        c2 = np.cos(q[..., 1])
        m11 = I1 + I2 + m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2.0 * l1 * lc2 * c2)
        m12 = I2 + m2 * (lc2**2 + l1 * lc2 * c2)
        m22 = np.full_like(c2, I2 + m2 * lc2**2)
        return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)

    def coriolis(q, qdot):
        h = m2 * l1 * lc2 * np.sin(q[..., 1])
        d1, d2 = qdot[..., 0], qdot[..., 1]
        row1 = np.stack([-h * d2, -h * (d1 + d2)], -1)
        row2 = np.stack([h * d1, np.zeros_like(h)], -1)
        return np.stack([row1, row2], -2)

    def gravity(q):
        s1 = np.sin(q[..., 0])
        s12 = np.sin(q[..., 0] + q[..., 1])
        g2 = m2 * lc2 * g * s12
        return np.stack([(m1 * lc1 + m2 * l1) * g * s1 + g2, g2], -1)

    def potential(q):
        c1 = np.cos(q[..., 0])
        c12 = np.cos(q[..., 0] + q[..., 1])
        return (m1 * lc1 + m2 * l1) * g * (1.0 - c1) + m2 * lc2 * g * (1.0 - c12)

    return mass, coriolis, gravity, potential


def _reacher2(m1=1.0, m2=1.0, l1=0.5, l2=0.5, g=0.0, dt=0.02):
    # uniform rods moving in the horizontal plane (no gravity by default)
    terms = _two_link_terms(m1, m2, l1, l2, l1 / 2, l2 / 2, m1 * l1**2 / 12, m2 * l2**2 / 12, g)
    lim = np.array([np.pi, np.pi, 5.0, 5.0])
    return dict(
        dof=2, act_dim=2, B=np.eye(2), params=dict(m1=m1, m2=m2, l1=l1, l2=l2, g=g), dt=dt,
        state_low=-lim, state_high=lim, control_scale=2.0,
        **dict(zip(("mass", "coriolis", "gravity", "potential"), terms)),
    )


def _acrobot(m1=1.0, m2=1.0, l1=1.0, l2=1.0, lc1=0.5, lc2=0.5, I1=1.0, I2=1.0, g=9.81, dt=0.02):
    terms = _two_link_terms(m1, m2, l1, l2, lc1, lc2, I1, I2, g)
    lim = np.array([np.pi, np.pi, 6.0, 6.0])
    return dict(
        dof=2, act_dim=1, B=np.array([[0.0], [1.0]]),
        params=dict(m1=m1, m2=m2, l1=l1, l2=l2, lc1=lc1, lc2=lc2, I1=I1, I2=I2, g=g), dt=dt,
        state_low=-lim, state_high=lim, control_scale=5.0,
        **dict(zip(("mass", "coriolis", "gravity", "potential"), terms)),
    )


def _cartpole(m_cart=1.0, m_pole=0.1, l=0.5, g=9.81, dt=0.02):
    # q = (cart position, pole angle from upright); pole mass concentrated at distance l
    mt = m_cart + m_pole
    mpl = m_pole * l

    def mass(q):
        c = np.cos(q[..., 1])
        a = np.full_like(c, mt)
        b = mpl * c
        d = np.full_like(c, mpl * l)
        return np.stack([np.stack([a, b], -1), np.stack([b, d], -1)], -2)

    def coriolis(q, qdot):
        z = np.zeros_like(q[..., 1])
        return np.stack(
            [np.stack([z, -mpl * np.sin(q[..., 1]) * qdot[..., 1]], -1), np.stack([z, z], -1)], -2
        )

    def gravity(q):
        return np.stack([np.zeros_like(q[..., 1]), -mpl * g * np.sin(q[..., 1])], -1)

    def potential(q):
        return mpl * g * (np.cos(q[..., 1]) - 1.0)

    return dict(
        dof=2, act_dim=1, B=np.array([[1.0], [0.0]]),
        params=dict(m_cart=m_cart, m_pole=m_pole, l=l, g=g), dt=dt,
        state_low=np.array([-2.4, -0.4, -2.0, -2.0]), state_high=np.array([2.4, 0.4, 2.0, 2.0]),
        control_scale=20.0, mass=mass, coriolis=coriolis, gravity=gravity, potential=potential,
    )


_CATALOG = {"pendulum": _pendulum, "reacher2": _reacher2, "cartpole": _cartpole, "acrobot": _acrobot}
MODEL_IDS = tuple(_CATALOG)


def make_model(name: str, **params) -> ELModel:
    """Build a catalog system ("pendulum", "reacher2", "cartpole", "acrobot")."""
    try:
        builder = _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {MODEL_IDS}") from None
    return ELModel(name=name, **builder(**params))


# ---------------------------------------------------------------------------
# operations

def _split(model: ELModel, s) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(s, GeneralizedCoords):
        q, qdot = np.asarray(s.q, float), np.asarray(s.qdot, float)
    else:
        s = np.asarray(s, float)
        if s.shape[-1] != model.state_dim:
            raise DimensionMismatch(f"state has length {s.shape[-1]}, expected {model.state_dim}")
        q, qdot = s[..., : model.dof], s[..., model.dof :]
    if q.shape[-1] != model.dof or qdot.shape != q.shape:
        raise DimensionMismatch(f"q/qdot must both have length {model.dof}")
    return q, qdot


def dynamics_terms(model: ELModel, s):
    """Return ``(M, C, G)`` evaluated at state ``s``."""
    q, qdot = _split(model, s)
    return model.mass(q), model.coriolis(q, qdot), model.gravity(q)


def _accel(model, q, qdot, u):
    M, C, G = model.mass(q), model.coriolis(q, qdot), model.gravity(q)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise SingularMass(f"mass matrix of {model.name} is not positive definite") from exc
    rhs = u @ model.B.T - (C @ qdot[..., None])[..., 0] - G
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def forward_step(model: ELModel, s, u, noise_bound: float = 0.0, rng=None) -> np.ndarray:
    """Advance one explicit Euler step; returns the next state ``(q', q'')``.

    With ``noise_bound > 0`` every output coordinate gets an independent
    uniform perturbation on ``(-noise_bound/2, noise_bound/2)``; ``rng`` is an
    integer seed or a ``numpy.random.Generator``.
    """
    if noise_bound < 0:
        raise ValueError("noise_bound must be nonnegative")
    q, qdot = _split(model, s)
    u = np.asarray(u, float)
    if u.shape[-1] != model.act_dim:
        raise DimensionMismatch(f"control has length {u.shape[-1]}, expected {model.act_dim}")
    if not np.all(np.isfinite(u)):
        raise ValueError("control input must be finite")
    qddot = _accel(model, q, qdot, u)
    s_next = np.concatenate([q + model.dt * qdot, qdot + model.dt * qddot], axis=-1)
    if noise_bound > 0:
        gen = np.random.default_rng(rng)
        s_next = s_next + gen.uniform(-noise_bound / 2, noise_bound / 2, size=s_next.shape)
    return s_next


def inverse_dynamics(model: ELModel, transition, feas_tol: float = 1e-9, proj_tol: float = 1e-9) -> np.ndarray:
    """Recover the unique control that maps ``transition.s`` to ``transition.s_next``.

    Raises :class:`InfeasibleTransition` if the position update is not
    consistent with the Euler scheme, or the required force is not reachable
    through B.  Both tolerances are absolute/relative ``tol * (1 + |scale|)``.
    """
    s, s_next = transition
    q, qdot = _split(model, s)
    q1, qdot1 = _split(model, s_next)
    pos_err = np.max(np.abs(q1 - (q + model.dt * qdot)), initial=0.0)
    if pos_err > feas_tol:
        raise InfeasibleTransition("position", float(pos_err))
    qddot = (qdot1 - qdot) / model.dt
    M, C, G = model.mass(q), model.coriolis(q, qdot), model.gravity(q)
    tau = (M @ qddot[..., None])[..., 0] + (C @ qdot[..., None])[..., 0] + G
    u = tau @ np.linalg.pinv(model.B).T
    resid = np.max(np.abs(tau - u @ model.B.T), initial=0.0)
    if resid > proj_tol * (1.0 + np.max(np.abs(tau), initial=0.0)):
        raise InfeasibleTransition("actuation", float(resid))
    return u


def is_feasible(model: ELModel, transition, feas_tol: float = 1e-9, proj_tol: float = 1e-9) -> bool:
    try:
        inverse_dynamics(model, transition, feas_tol, proj_tol)
    except InfeasibleTransition:
        return False
    return True


def total_energy(model: ELModel, s) -> np.ndarray | float:
    """Kinetic plus potential energy, with V = 0 at q = 0."""
    q, qdot = _split(model, s)
    kinetic = 0.5 * np.einsum("...i,...ij,...j->...", qdot, model.mass(q), qdot)
    e = kinetic + model.potential(q)
    return float(e) if np.ndim(e) == 0 else e


@dataclass
class UniquenessReport:
    n_transitions: int = 0
    max_recovery_error: float = 0.0
    mean_recovery_error: float = 0.0
    alternatives_found: int = 0
    infeasible_count: int = 0
    max_candidate_error: float = 0.0
    min_candidate_error: float = np.inf

    def __post_init__(self):
        if self.alternatives_found < 0 or self.infeasible_count > self.n_transitions:
            raise ValueError("inconsistent uniqueness report")


def sample_ball(rng, center, radius: float, n: int) -> np.ndarray:
    """Uniform samples from the Euclidean ball around ``center``."""
    d = len(center)
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return center + r * direction


def uniqueness_probe(
    model: ELModel,
    transition,
    n_candidates: int = 1000,
    search_radius: float = 5.0,
    rng_seed=0,
    feas_tol: float = 1e-9,
    separation: float = 1e-6,
) -> UniquenessReport:
    """Search a ball around the recovered control for a second control that
    reproduces the same next state.  The count is expected to be zero."""
    u_star = inverse_dynamics(model, transition, feas_tol=feas_tol)
    s, s_next = transition
    rng = np.random.default_rng(rng_seed)
    cands = sample_ball(rng, u_star, search_radius, n_candidates)
    s_rep = np.broadcast_to(np.asarray(s, float), (n_candidates, model.state_dim))
    reached = forward_step(model, s_rep, cands)
    err = np.max(np.abs(reached - np.asarray(s_next, float)), axis=1)
    distinct = np.linalg.norm(cands - u_star, axis=1) > separation
    return UniquenessReport(
        n_transitions=1,
        alternatives_found=int(np.sum(distinct & (err <= feas_tol))),
        max_candidate_error=float(err.max(initial=0.0)),
        min_candidate_error=float(err[distinct].min(initial=np.inf)),
    )
