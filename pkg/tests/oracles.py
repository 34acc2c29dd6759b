"""Independent reference computations used only by the test-suite."""
import numpy as np

from lfoeq.dynamics import ELModel


def rk4_step(model: ELModel, s, u, dt=None):
    """Fourth-order Runge-Kutta step of M q'' = B u - C q' - G, zero-order hold on u."""
    h = model.dt if dt is None else dt
    u = np.asarray(u, float)
    n = model.dof

    def f(x):
        q, qd = x[:n], x[n:]
        M, C, G = model.mass(q), model.coriolis(q, qd), model.gravity(q)
        return np.concatenate([qd, np.linalg.solve(M, model.B @ u - C @ qd - G)])

    x = np.asarray(s, float)
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def bodies(model: ELModel):
    """(mass, rotational inertia, com position(q), body angle(q)) for each rigid body,
    written from plain planar geometry rather than the model's M/C/G."""
    p = model.params
    if model.name == "pendulum":
        l = p["l"]
        return [(p["m"], 0.0, lambda q: np.array([l * np.sin(q[0]), -l * np.cos(q[0])]), lambda q: q[0])]
    if model.name in ("reacher2", "acrobot"):
        l1 = p["l1"]
        lc1 = p.get("lc1", p["l1"] / 2)
        lc2 = p.get("lc2", p["l2"] / 2)
        i1 = p.get("I1", p["m1"] * p["l1"] ** 2 / 12)
        i2 = p.get("I2", p["m2"] * p["l2"] ** 2 / 12)

        def c1(q):
            return lc1 * np.array([np.sin(q[0]), -np.cos(q[0])])

        def c2(q):
            a = q[0] + q[1]
            return l1 * np.array([np.sin(q[0]), -np.cos(q[0])]) + lc2 * np.array([np.sin(a), -np.cos(a)])

        return [(p["m1"], i1, c1, lambda q: q[0]), (p["m2"], i2, c2, lambda q: q[0] + q[1])]
    if model.name == "cartpole":
        l = p["l"]
        return [
            (p["m_cart"], 0.0, lambda q: np.array([q[0], 0.0]), lambda q: 0.0),
            (p["m_pole"], 0.0, lambda q: np.array([q[0] + l * np.sin(q[1]), l * np.cos(q[1])]), lambda q: q[1]),
        ]
    raise KeyError(model.name)


def kinetic_energy(model, q, qdot, h=1e-5):
    """Kinetic energy from finite-difference Cartesian velocities of each body."""
    q, qdot = np.asarray(q, float), np.asarray(qdot, float)
    total = 0.0
    for m, inertia, pos, ang in bodies(model):
        v = (pos(q + h * qdot) - pos(q - h * qdot)) / (2 * h)
        w = (ang(q + h * qdot) - ang(q - h * qdot)) / (2 * h)
        total += 0.5 * m * v @ v + 0.5 * inertia * w * w
    return total


def potential_energy(model, q):
    g = model.params["g"]
    return sum(m * g * pos(np.asarray(q, float))[1] for m, _, pos, _ in bodies(model))


def kinetic_hessian(model, q):
    """Second derivative of the kinetic energy w.r.t. velocities (exact for quadratics)."""
    n = model.dof
    e = np.eye(n)
    H = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            H[i, j] = (
                kinetic_energy(model, q, e[i] + e[j])
                - kinetic_energy(model, q, e[i] - e[j])
                - kinetic_energy(model, q, -e[i] + e[j])
                + kinetic_energy(model, q, -e[i] - e[j])
            ) / 4.0
    return H


def numeric_grad(f, x, h=1e-6):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(x.size):
        d = np.zeros_like(x)
        d.flat[i] = h
        g.flat[i] = (f(x + d) - f(x - d)) / (2 * h)
    return g
