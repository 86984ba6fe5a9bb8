"""Shared builders and finite-difference oracles for the test suite."""

import numpy as np

from flyadapt import liegroup as lg
from flyadapt import net
from flyadapt import state as st
from flyadapt.dynamics import DynModel


def rel_err(num, ana):
    """Max-abs error normalized by the largest analytic entry."""
    num, ana = np.asarray(num), np.asarray(ana)
    return np.max(np.abs(num - ana)) / max(np.max(np.abs(ana)), 1e-300)


def random_params(rng, hidden=(64, 64, 64), bias_scale=0.1, activation="tanh"):
    p = net.init_params(rng, hidden)
    biases = [bias_scale * rng.standard_normal(b.shape) for b in p.biases]
    return net.MlpParams(p.weights, biases, activation)


def random_stats(rng):
    return net.NormStats(out_mean=0.01 * rng.standard_normal(12),
                         out_std=rng.uniform(0.005, 0.05, 12))


def random_inputs(rng, n):
    states = random_states(rng, n, speed=2.0)
    u = rng.uniform(0.5, 5.5, (n, 4))
    return states, u


def random_states(rng, n, speed=1.0):
    return np.hstack([rng.standard_normal((n, 3)), lg.random_quaternion(rng, n),
                      speed * rng.standard_normal((n, 3)), speed * rng.standard_normal((n, 3))])


def random_model(rng, rank=5, hidden=(64, 64, 64), core_scale=0.0):
    model = DynModel(random_params(rng, hidden), random_stats(rng), 0.01).with_rank(rank)
    if core_scale:
        model = model.with_theta(core_scale * rng.standard_normal(model.theta.size))
    return model


def zero_model(hidden=(8, 8, 8)):
    sizes = (14,) + hidden + (12,)
    params = net.MlpParams([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                           [np.zeros(o) for o in sizes[1:]])
    return DynModel(params, net.NormStats(), 0.01)


def fd_jacobian(fn, x0, h=1e-5):
    """Central differences of a vector function over Euclidean coordinates."""
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e.flat[i] = h
        cols.append((np.asarray(fn(x0 + e)) - np.asarray(fn(x0 - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_state_jacobian(step, x, h=1e-5):
    """Manifold central differences: perturb with compose, compare with diff."""
    base = step(x)
    cols = []
    for i in range(12):
        d = np.zeros(12)
        d[i] = h
        plus = st.diff(step(st.compose(x, d)), base)
        minus = st.diff(step(st.compose(x, -d)), base)
        cols.append((plus - minus) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_output_jacobian(fn, v, h=1e-5):
    """Central differences of a state-valued function of a Euclidean vector."""
    v = np.asarray(v, dtype=float)
    base = fn(v)
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        cols.append((st.diff(fn(v + e), base) - st.diff(fn(v - e), base)) / (2 * h))
    return np.stack(cols, axis=-1)


class LinearModel:
    """``x+ = A x + B u + (G0 + u_0 G1) theta`` on plain Euclidean states.

    Implements the duck-typed model interface of the controller and the
    adapter so both can be checked against closed-form oracles.
    """

    def __init__(self, a, b, g0=None, g1=None, theta=None):
        self.a, self.b = np.asarray(a, float), np.asarray(b, float)
        n = self.a.shape[0]
        self.g0 = np.zeros((n, 0)) if g0 is None else np.asarray(g0, float)
        self.g1 = np.zeros_like(self.g0) if g1 is None else np.asarray(g1, float)
        self._theta = np.zeros(self.g0.shape[1]) if theta is None else np.asarray(theta, float)

    @property
    def theta(self):
        return self._theta.copy()

    def with_theta(self, theta):
        return LinearModel(self.a, self.b, self.g0, self.g1, theta)

    def param_matrix(self, u):
        u = np.asarray(u, float)
        return self.g0 + u[..., :1, None] * self.g1

    def step(self, x, u):
        x, u = np.asarray(x, float), np.asarray(u, float)
        return x @ self.a.T + u @ self.b.T + np.einsum("...ij,j->...i", self.param_matrix(u), self._theta)

    def rollout(self, x0, us):
        xs = [np.asarray(x0, float)]
        for k in range(np.asarray(us).shape[-2]):
            xs.append(self.step(xs[-1], us[..., k, :]))
        return np.stack(xs, axis=-2)

    def linearize(self, xs, us):
        n = len(us)
        bu = self.b + np.einsum("ij,j->i", self.g1, self._theta)[:, None] * np.eye(1, self.b.shape[1])
        return np.repeat(self.a[None], n, 0), np.repeat(bu[None], n, 0)

    def linearize_params(self, xs, us):
        return np.repeat(self.a[None], len(us), 0), self.param_matrix(np.asarray(us))

    @staticmethod
    def diff(a, b):
        return np.asarray(a, float) - np.asarray(b, float)

    @staticmethod
    def diff_jacobian(e):
        e = np.asarray(e)
        return np.broadcast_to(np.eye(e.shape[-1]), e.shape + (e.shape[-1],)).copy()
