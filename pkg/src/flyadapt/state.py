"""Manifold robot state, composition and difference.

A state is stored as a 13-vector ``(p, q_wxyz, v, w)`` with body-frame
linear and angular velocity. Tangent increments and errors are 12-vectors
``(dp, dphi, dv, dw)``. The array functions broadcast over leading axes.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import liegroup as lg

# 13-vector layout
P, Q, V, W = slice(0, 3), slice(3, 7), slice(7, 10), slice(10, 13)
# 12-vector tangent layout
TP, TQ, TV, TW = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)

STATE_DIM = 13
TANGENT_DIM = 12
CONTROL_DIM = 4

STATE_COLUMNS = ("px", "py", "pz", "qw", "qx", "qy", "qz",
                 "vx", "vy", "vz", "wx", "wy", "wz")
CONTROL_COLUMNS = ("u1", "u2", "u3", "u4")


@dataclass(frozen=True)
class State:
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def to_vector(self):
        return np.concatenate([self.p, self.q, self.v, self.w]).astype(float)

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_DIM,):
            raise ValueError(f"state vector must have 13 entries, got {x.shape}")
        if abs(np.linalg.norm(x[Q]) - 1.0) > 1e-9:
            raise ValueError("attitude quaternion is not unit norm")
        return cls(x[P].copy(), x[Q].copy(), x[V].copy(), x[W].copy())

    @classmethod
    def hover(cls, position=(0.0, 0.0, 1.0), yaw=0.0):
        return cls(np.asarray(position, dtype=float), lg.yaw_quaternion(yaw),
                   np.zeros(3), np.zeros(3))


def make_state(p=(0.0, 0.0, 0.0), q=lg.IDENTITY, v=(0.0, 0.0, 0.0), w=(0.0, 0.0, 0.0)):
    return np.concatenate([np.asarray(p, float), lg.normalize(q),
                           np.asarray(v, float), np.asarray(w, float)])


def compose(x, d):
    """``x (+) d``: additive on p, v, w and ``q (x) exp(dphi)`` on attitude.

    The attitude is renormalized and mapped to ``w >= 0``.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    out = np.empty(np.broadcast_shapes(x.shape[:-1], d.shape[:-1]) + (STATE_DIM,))
    out[..., P] = x[..., P] + d[..., TP]
    out[..., 7:] = x[..., 7:] + d[..., 6:]
    out[..., Q] = lg.canonicalize(lg.qmul(x[..., Q], lg.exp_map(d[..., TQ])))
    return out


def diff(a, b):
    """``a (-) b`` with attitude error ``log(q_b^-1 (x) q_a)`` (full angle)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (TANGENT_DIM,))
    out[..., TP] = a[..., P] - b[..., P]
    out[..., 6:] = a[..., 7:] - b[..., 7:]
    out[..., TQ] = lg.log_map(lg.qmul(lg.qinv(b[..., Q]), a[..., Q]))
    return out


def diff_jacobian(e):
    """Derivative of ``diff(a, b)`` w.r.t. a tangent perturbation of ``a``.

    Identity except the attitude block, which is ``Jr^-1(e_q)``.
    """
    e = np.asarray(e, dtype=float)
    out = np.zeros(e.shape[:-1] + (TANGENT_DIM, TANGENT_DIM))
    out[..., TP, TP] = np.eye(3)
    out[..., TQ, TQ] = lg.right_jacobian_inv(e[..., TQ])
    out[..., TV, TV] = np.eye(3)
    out[..., TW, TW] = np.eye(3)
    return out


def tangent_projection(q):
    """``E(q) = diag(I, Q(q), I, I)``, a 13x12 map (batched over ``q``)."""
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape[:-1] + (STATE_DIM, TANGENT_DIM))
    out[..., P, TP] = np.eye(3)
    out[..., Q, TQ] = lg.orientation_jacobian(q)
    out[..., V, TV] = np.eye(3)
    out[..., W, TW] = np.eye(3)
    return out


def perturb_state(x, sigma, rng):
    """Gaussian perturbation of every state block, on-manifold for ``q``."""
    x = np.asarray(x, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return x.copy()
    eps = sigma * rng.standard_normal(x.shape[:-1] + (TANGENT_DIM,))
    return compose(x, eps)


@dataclass
class Trajectory:
    """States ``x_0..x_N`` and controls ``u_0..u_{N-1}`` at period ``dt``."""
    states: np.ndarray
    controls: np.ndarray
    dt: float = 0.01

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != STATE_DIM:
            raise ValueError(f"states must be (N+1, 13), got {self.states.shape}")
        if self.controls.ndim != 2 or self.controls.shape[1] != CONTROL_DIM:
            raise ValueError(f"controls must be (N, 4), got {self.controls.shape}")
        if len(self.states) != len(self.controls) + 1:
            raise ValueError("need exactly one more state than controls")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def __len__(self):
        return len(self.controls)

    @property
    def times(self):
        return self.dt * np.arange(len(self.states))

    def save(self, path, header_extra=None):
        """Text format: ``#`` header lines, then one row per state.

        The final row carries NaN controls (there is one fewer control).
        """
        rows = np.hstack([self.states,
                          np.vstack([self.controls, np.full((1, CONTROL_DIM), np.nan)])])
        lines = [f"dt={self.dt!r}"]
        for key, value in (header_extra or {}).items():
            lines.append(f"{key}={value}")
        lines.append(",".join(STATE_COLUMNS + CONTROL_COLUMNS))
        np.savetxt(path, rows, fmt="%.17g", delimiter=",",
                   header="\n".join(lines), comments="# ")

    @classmethod
    def load(cls, path):
        dt = None
        with open(path) as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                body = line[1:].strip()
                if body.startswith("dt="):
                    dt = float(body[3:])
        if dt is None:
            raise ValueError(f"{path}: missing dt header")
        rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return cls(rows[:, :STATE_DIM], rows[:-1, STATE_DIM:], dt)


def load_trajectories(directory):
    return [Trajectory.load(p) for p in sorted(Path(directory).glob("traj_*.csv"))]
