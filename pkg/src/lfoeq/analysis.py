"""Checks of the equivalence argument on concrete data.

* action recovery and uniqueness statistics over whole datasets,
* the ratio bracket ``pi/(pi + L delta/2) <= Xi <= pi/(pi - L delta/2)`` for
  Gaussian policies, where ``Xi = pi(a|s) / pi(a'|s)`` for ``|a' - a| <= delta/2``,
* GAIL vs GAIfO sweeps over the state-noise bound.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import TrajectoryDataset
from .dynamics import (
    ELModel,
    InfeasibleTransition,
    StateTransition,
    UniquenessReport,
    inverse_dynamics,
    uniqueness_probe,
)
from .neural import GaussianPolicy


class NonpositiveStd(ValueError):
    pass


# ---------------------------------------------------------------------------
# action uniqueness on datasets

def uniqueness_report(model: ELModel, dataset: TrajectoryDataset, probe_candidates: int = 1000,
                      seed=0, feas_tol: float = 1e-9, search_radius: float = 5.0) -> UniquenessReport:
    """Recover every stored action and probe for alternatives.

    Infeasible transitions are counted rather than raised.  Recovery errors
    are only measured when the dataset carries actions.
    """
    if dataset.env_id != model.name:
        raise ValueError(f"dataset is for {dataset.env_id!r}, not {model.name!r}")
    s, a, s1 = dataset.transitions()
    rep = UniquenessReport(n_transitions=len(s))
    if not len(s):
        rep.min_candidate_error = 0.0
        return rep
    rng = np.random.default_rng(seed)
    errors = []
    for i in range(len(s)):
        tr = StateTransition(s[i], s1[i])
        try:
            u = inverse_dynamics(model, tr, feas_tol=feas_tol)
        except InfeasibleTransition:
            rep.infeasible_count += 1
            continue
        if dataset.has_actions:
            errors.append(np.linalg.norm(u - a[i]))
        if probe_candidates:
            probe = uniqueness_probe(model, tr, probe_candidates, search_radius, rng, feas_tol)
            rep.alternatives_found += probe.alternatives_found
            rep.max_candidate_error = max(rep.max_candidate_error, probe.max_candidate_error)
            rep.min_candidate_error = min(rep.min_candidate_error, probe.min_candidate_error)
    if errors:
        rep.max_recovery_error = float(np.max(errors))
        rep.mean_recovery_error = float(np.mean(errors))
    return rep


def action_intervals(model: ELModel, states, next_states, noise_bound: float) -> np.ndarray:
    """Width of the set of values each action coordinate can take (others
    held at the recovered control) while the Euler successor stays inside the
    noise box around the observed next state.  Shape ``(n, act_dim)``."""
    s = np.atleast_2d(np.asarray(states, float))
    s1 = np.atleast_2d(np.asarray(next_states, float))
    n, d = len(s), model.dof
    q, qd, qd1 = s[:, :d], s[:, d:], s1[:, d:]
    M, C, G = model.mass(q), model.coriolis(q, qd), model.gravity(q)
    tau = (M @ ((qd1 - qd) / model.dt)[..., None])[..., 0] + (C @ qd[..., None])[..., 0] + G
    u = tau @ np.linalg.pinv(model.B).T
    # velocity successor is affine in u: qd' = base + K u
    K = model.dt * np.linalg.solve(M, np.broadcast_to(model.B, (n, d, model.act_dim)))
    resid = qd1 - (qd + model.dt * np.linalg.solve(M, (u @ model.B.T - (C @ qd[..., None])[..., 0] - G)[..., None])[..., 0])
    half = noise_bound / 2
    widths = np.zeros((n, model.act_dim))
    for j in range(model.act_dim):
        k = K[:, :, j]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (resid - half) / k
            b = (resid + half) / k
        lo = np.where(k != 0, np.minimum(a, b), -np.inf).max(1)
        hi = np.where(k != 0, np.maximum(a, b), np.inf).min(1)
        widths[:, j] = np.maximum(hi - lo, 0.0)
    return widths


# ---------------------------------------------------------------------------
# ratio bracket

def gaussian_lipschitz(std) -> float:
    """Largest slope of a univariate Gaussian density with this std."""
    std = float(std)
    if not std > 0:
        raise NonpositiveStd(f"std must be positive, got {std}")
    return 1.0 / (std * std * np.sqrt(2 * np.pi * np.e))


@dataclass
class XiBoundReport:
    delta: float
    lipschitz_L: np.ndarray
    n_samples: int
    max_xi_deviation: float
    bound_violations: int
    skipped: int = 0
    max_bracket_width: float = 0.0


def _normal_pdf(x, mu, std):
    z = (x - mu) / std
    return np.exp(-0.5 * z * z) / (std * np.sqrt(2 * np.pi))


def xi_bound_check(policy: GaussianPolicy, states, delta: float, grid_points: int = 201, rng=None,
                   rtol: float = 1e-12) -> XiBoundReport:
    """Sample ``a ~ policy(.|s)`` for each row of ``states`` (network inputs)
    and test every grid point of ``[a - delta/2, a + delta/2]`` per action
    coordinate against the Lipschitz bracket."""
    rng = np.random.default_rng(rng)
    x = np.atleast_2d(np.asarray(states, float))
    mu = policy.mean(x)
    std = policy.std
    a = mu + std * rng.standard_normal(mu.shape)
    L = np.array([gaussian_lipschitz(sd) for sd in std])
    offsets = np.linspace(-delta / 2, delta / 2, grid_points) if delta > 0 else np.zeros(1)
    p = _normal_pdf(a, mu, std)                                    # (n, k)
    p_grid = _normal_pdf(a[..., None] + offsets, mu[..., None], std[:, None])  # (n, k, g)
    xi = p[..., None] / p_grid
    slack = 0.5 * L * delta
    ok = p - slack > 0
    lower = p / (p + slack)
    upper = np.where(ok, p / np.where(ok, p - slack, 1.0), np.inf)
    tol = rtol * np.maximum(1.0, xi)
    viol = (xi < lower[..., None] - tol) | (xi > upper[..., None] + tol)
    viol &= ok[..., None]
    dev = np.abs(xi - 1.0)[ok]
    width = (upper - lower)[ok]
    return XiBoundReport(
        delta=float(delta), lipschitz_L=L, n_samples=int(ok.sum()),
        max_xi_deviation=float(dev.max(initial=0.0)), bound_violations=int(viol.any(-1).sum()),
        skipped=int((~ok).sum()), max_bracket_width=float(width.max(initial=0.0)),
    )


# ---------------------------------------------------------------------------
# equivalence statistics and noise sweeps

def pooled_std(x, y) -> float:
    """sqrt of the mean of the two sample variances (ddof = 1)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    vx = x.var(ddof=1) if len(x) > 1 else 0.0
    vy = y.var(ddof=1) if len(y) > 1 else 0.0
    return float(np.sqrt(0.5 * (vx + vy)))


def equivalent(x, y) -> bool:
    """``|mean(x) - mean(y)| <= pooled std``."""
    return abs(np.mean(x) - np.mean(y)) <= pooled_std(x, y)


def normalized_score(returns, expert_return: float, baseline_return: float):
    """Fraction of the gap between a baseline and the expert that was closed."""
    return (np.asarray(returns, float) - baseline_return) / (expert_return - baseline_return)


@dataclass
class SweepRow:
    noise_bound: float
    gail: np.ndarray
    gaifo: np.ndarray
    curves: dict = field(default_factory=dict, repr=False)   # (mode, seed) -> LearningCurve

    @property
    def equivalent(self) -> bool:
        return equivalent(self.gail, self.gaifo)


def _final_return(args):
    from .imitation import train

    dataset, config = args
    res = train(dataset, config)
    return res.curve


def run_cells(cells, workers: int = 1) -> list:
    """Train every ``(dataset, config)`` cell; returns learning curves in order."""
    if workers <= 1:
        return [_final_return(c) for c in cells]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_final_return, cells))


def noise_sweep(expert_dataset, config, epsilons, seeds=(0, 1, 2, 3, 4), workers: int = 1) -> list:
    """Train GAIL and GAIfO at each noise bound (same seeds), in the noisy
    environment.  ``expert_dataset`` may be one dataset or a map from noise
    bound to dataset."""
    from .imitation import DatasetModeMismatch

    if any(e < 0 for e in epsilons):
        raise ValueError("noise bounds must be nonnegative")
    pick = expert_dataset.get if isinstance(expert_dataset, dict) else (lambda e: expert_dataset)
    cells, keys = [], []
    for eps in epsilons:
        ds = pick(eps)
        if not ds.has_actions:
            raise DatasetModeMismatch("the sweep trains gail, which needs expert actions")
        for mode in ("gail", "gaifo"):
            view = ds if mode == "gail" else ds.strip_actions()
            for seed in seeds:
                cells.append((view, config.replace(mode=mode, noise_bound=eps, seed=seed)))
                keys.append((eps, mode, seed))
    curves = run_cells(cells, workers)
    rows = []
    for eps in epsilons:
        got = {(m, s): c for (e, m, s), c in zip(keys, curves) if e == eps}
        rows.append(SweepRow(
            float(eps),
            np.array([got["gail", s].final_return for s in seeds]),
            np.array([got["gaifo", s].final_return for s in seeds]),
            got,
        ))
    return rows


def write_sweep(rows, path) -> None:
    """CSV with one line per (noise bound, mode, seed) plus a text summary next to it."""
    path = Path(path)
    lines = ["noise_bound,mode,seed_index,final_return"]
    for row in rows:
        for mode in ("gail", "gaifo"):
            for i, v in enumerate(getattr(row, mode)):
                lines.append(f"{row.noise_bound!r},{mode},{i},{float(v)!r}")
    path.write_text("\n".join(lines) + "\n")
    path.with_suffix(".txt").write_text(format_sweep(rows))


def format_sweep(rows) -> str:
    out = [f"{'noise':>8} {'gail':>20} {'gaifo':>20} {'|diff|':>9} {'pooled':>9} equivalent"]
    for r in rows:
        diff = abs(r.gail.mean() - r.gaifo.mean())
        out.append(f"{r.noise_bound:8.4f} {r.gail.mean():10.2f}±{r.gail.std(ddof=1) if len(r.gail) > 1 else 0:<9.2f}"
                   f" {r.gaifo.mean():10.2f}±{r.gaifo.std(ddof=1) if len(r.gaifo) > 1 else 0:<9.2f}"
                   f" {diff:9.2f} {pooled_std(r.gail, r.gaifo):9.2f} {'yes' if r.equivalent else 'no'}")
    return "\n".join(out) + "\n"
