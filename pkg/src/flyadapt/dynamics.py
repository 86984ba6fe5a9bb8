"""Learned discrete-time dynamics ``x_{k+1} = x_k (+) df(x_k, u_k)``.

Jacobians are expressed in tangent coordinates on both sides. For the
attitude block the next-state tangent of ``q (x) exp(dphi)`` picks up
``R(exp(dphi))^T`` from the current attitude and ``Jr(dphi)`` from the
predicted increment, which keeps the Jacobians exact (not first-order in
``dphi``).
"""

from dataclasses import dataclass, field

import numpy as np

from . import liegroup as lg
from . import net
from . import state as st
from .lowrank import build_adapter, flatten, unflatten


class DynamicsError(RuntimeError):
    pass


def net_input(x, u):
    """``z = (q, v, w, u)``; position is deliberately excluded."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    # q, v, w are contiguous in the state layout
    return np.concatenate([x[..., 3:], u], axis=-1)


def input_to_tangent(q):
    """``dz/d(tangent of x)``, shape (..., 14, 12)."""
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape[:-1] + (net.INPUT_DIM, st.TANGENT_DIM))
    out[..., 0:4, st.TQ] = 0.5 * lg.orientation_jacobian(q)
    out[..., 4:7, st.TV] = np.eye(3)
    out[..., 7:10, st.TW] = np.eye(3)
    return out


def _carry_terms(delta):
    """(d next / d current) selection and (d next / d increment) for the compose."""
    d = np.asarray(delta, dtype=float)
    shape = d.shape[:-1] + (st.TANGENT_DIM, st.TANGENT_DIM)
    carry = np.zeros(shape)
    gain = np.zeros(shape)
    for blk in (st.TP, st.TV, st.TW):
        carry[..., blk, blk] = np.eye(3)
        gain[..., blk, blk] = np.eye(3)
    carry[..., st.TQ, st.TQ] = np.swapaxes(lg.rotmat(lg.exp_map(d[..., st.TQ])), -1, -2)
    gain[..., st.TQ, st.TQ] = lg.right_jacobian(d[..., st.TQ])
    return carry, gain


@dataclass
class DynModel:
    params: net.MlpParams
    stats: net.NormStats
    dt: float = 0.01
    adapters: list = None
    _weights: list = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.adapters is not None:
            if len(self.adapters) != self.params.n_layers:
                raise ValueError("one adapter per layer required")
            for a, w in zip(self.adapters, self.params.weights):
                if a.U.shape[0] != w.shape[0] or a.V.shape[0] != w.shape[1]:
                    raise ValueError("adapter does not conform to layer shape")
            self._weights = [a.effective_weight(w) for a, w in zip(self.adapters, self.params.weights)]
        else:
            self._weights = self.params.weights

    # -- parameter snapshots -------------------------------------------------
    def with_rank(self, p):
        return DynModel(self.params, self.stats, self.dt, build_adapter(self.params, p))

    @property
    def theta(self):
        if self.adapters is None:
            return np.zeros(0)
        return flatten(self.adapters)

    def with_theta(self, theta):
        return DynModel(self.params, self.stats, self.dt, unflatten(theta, self.adapters))

    @property
    def weights(self):
        return self._weights

    # -- evaluation ------------------------------------------------------------
    def increment(self, x, u):
        return net.forward(self.params, self.stats, net_input(x, u), self._weights)

    def step(self, x, u):
        try:
            return st.compose(x, self.increment(x, u))
        except net.ModelCorrupt as exc:
            raise DynamicsError(str(exc)) from exc

    def rollout(self, x0, us):
        """States ``x_0..x_T`` under controls ``u_0..u_{T-1}`` (batched over x0)."""
        us = np.asarray(us, dtype=float)
        x0 = np.asarray(x0, dtype=float)
        n_steps = us.shape[-2] if us.ndim >= 2 else 0
        xs = np.empty(x0.shape[:-1] + (n_steps + 1, st.STATE_DIM))
        xs[..., 0, :] = x0
        x = x0
        for k in range(n_steps):
            try:
                x = self.step(x, us[..., k, :])
            except DynamicsError as exc:
                raise DynamicsError(f"rollout failed at step {k}: {exc}") from exc
            xs[..., k + 1, :] = x
        return xs

    # manifold error helpers shared with the controller and adapter
    diff = staticmethod(st.diff)
    diff_jacobian = staticmethod(st.diff_jacobian)

    # -- Jacobians -------------------------------------------------------------
    def _chain(self, x, u):
        z = net_input(x, u)
        delta = net.forward(self.params, self.stats, z, self._weights)
        carry, gain = _carry_terms(delta)
        return z, carry, gain

    def jac_state(self, x, u):
        """``A``: tangent-to-tangent Jacobian, shape (..., 12, 12)."""
        return self.linearize(x, u)[0]

    def jac_control(self, x, u):
        """``B``: shape (..., 12, 4)."""
        return self.linearize(x, u)[1]

    def linearize(self, x, u):
        """``(A, B)`` evaluated at each (x, u) pair (batched over time)."""
        z, carry, gain = self._chain(x, u)
        jz = net.input_jacobian(self.params, self.stats, z, self._weights)
        gj = gain @ jz
        a = carry + gj @ input_to_tangent(np.asarray(x)[..., st.Q])
        b = gj[..., :, 10:14]
        return a, b

    def jac_params(self, x, u):
        """``F``: Jacobian w.r.t. the flattened low-rank cores, (..., 12, L p^2)."""
        if self.adapters is None:
            raise ValueError("model has no adapters; call with_rank first")
        z, _, gain = self._chain(x, u)
        jp = net.adapted_param_jacobian(self.params, self.adapters, self.stats, z, self._weights)
        return gain @ jp

    def linearize_params(self, x, u):
        """``(A, F)`` for the parameter-adaptation backward pass."""
        if self.adapters is None:
            raise ValueError("model has no adapters; call with_rank first")
        z, carry, gain = self._chain(x, u)
        jz = net.input_jacobian(self.params, self.stats, z, self._weights)
        a = carry + (gain @ jz) @ input_to_tangent(np.asarray(x)[..., st.Q])
        jp = net.adapted_param_jacobian(self.params, self.adapters, self.stats, z, self._weights)
        return a, gain @ jp


def load_dynmodel(path, rank=None):
    params, stats, dt, adapters, _ = net.load_model(path)
    model = DynModel(params, stats, dt, adapters)
    if rank is not None and adapters is None:
        model = model.with_rank(rank)
    return model
