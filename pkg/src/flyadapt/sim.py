"""Ground-truth quadrotor simulator, references and data collection.

The rigid-body model uses motor thrusts as input, body-frame velocities,
and a fixed-substep RK4 integrator. All functions broadcast over a leading
batch axis so many trajectories can be simulated in lockstep.
"""

from dataclasses import dataclass, field

import numpy as np

from . import liegroup as lg
from . import state as st


@dataclass(frozen=True)
class QuadParams:
    m: float = 1.0
    inertia: tuple = (0.0025, 0.0025, 0.004)
    arm: float = 0.125
    k_tau: float = 0.016
    g: float = 9.81

    def __post_init__(self):
        if min(self.m, self.arm, self.k_tau, self.g, *self.inertia) <= 0:
            raise ValueError("quadrotor parameters must be positive")

    @property
    def mixer_matrix(self):
        a = self.arm / np.sqrt(2.0)
        k = self.k_tau
        return np.array([[1.0, 1.0, 1.0, 1.0],
                         [-a, a, -a, a],
                         [-a, a, a, -a],
                         [-k, -k, k, k]])

    @property
    def hover_thrust(self):
        """Per-motor thrust balancing gravity for the nominal mass."""
        return self.m * self.g / 4.0


@dataclass(frozen=True)
class Disturbance:
    """Extra point mass at the center of mass, active from ``activation_time``."""
    payload_mass: float = 0.0
    activation_time: float = 0.0

    def __post_init__(self):
        if self.payload_mass < 0:
            raise ValueError("payload mass must be nonnegative")

    def mass(self, params, t):
        return params.m + (self.payload_mass if t >= self.activation_time else 0.0)


NO_DISTURBANCE = Disturbance()


def mixer(u, params):
    """Motor thrusts to ``(f, tau)``."""
    wrench = np.asarray(u, dtype=float) @ params.mixer_matrix.T
    return wrench[..., 0], wrench[..., 1:]


def inverse_mixer(f, tau, params):
    wrench = np.concatenate([np.asarray(f, float)[..., None], tau], axis=-1)
    return wrench @ np.linalg.inv(params.mixer_matrix).T


def _cross(a, b):
    # np.cross carries a lot of overhead for tiny batches
    return np.stack([a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
                     a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
                     a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]], axis=-1)


def deriv(x, u, params, disturbance=NO_DISTURBANCE, t=0.0):
    """Time derivative of the 13-vector state."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    qw, qx, qy, qz = x[..., 3], x[..., 4], x[..., 5], x[..., 6]
    v, w = x[..., st.V], x[..., st.W]
    mass = disturbance.mass(params, t)
    a = params.arm / np.sqrt(2.0)
    u1, u2, u3, u4 = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    f = u1 + u2 + u3 + u4
    tau = np.stack([a * (-u1 + u2 - u3 + u4), a * (-u1 + u2 + u3 - u4),
                    params.k_tau * (-u1 - u2 + u3 + u4)], axis=-1)
    # rotation matrix rows, body -> world
    r00 = 1 - 2 * (qy * qy + qz * qz)
    r01 = 2 * (qx * qy - qw * qz)
    r02 = 2 * (qx * qz + qw * qy)
    r10 = 2 * (qx * qy + qw * qz)
    r11 = 1 - 2 * (qx * qx + qz * qz)
    r12 = 2 * (qy * qz - qw * qx)
    r20 = 2 * (qx * qz - qw * qy)
    r21 = 2 * (qy * qz + qw * qx)
    r22 = 1 - 2 * (qx * qx + qy * qy)
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    pdot = np.stack([r00 * vx + r01 * vy + r02 * vz,
                     r10 * vx + r11 * vy + r12 * vz,
                     r20 * vx + r21 * vy + r22 * vz], axis=-1)
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    qdot = 0.5 * np.stack([-qx * wx - qy * wy - qz * wz,
                           qw * wx + qy * wz - qz * wy,
                           qw * wy + qz * wx - qx * wz,
                           qw * wz + qx * wy - qy * wx], axis=-1)
    g = params.g
    # R^T g with g = (0, 0, -g)
    grav = np.stack([-g * r20, -g * r21, -g * r22], axis=-1)
    vdot = grav - _cross(w, v)
    vdot[..., 2] += f / mass
    inertia = np.asarray(params.inertia)
    wdot = (tau - _cross(w, inertia * w)) / inertia
    return np.concatenate([pdot, qdot, vdot, wdot], axis=-1)


def deriv_reference(x, u, params, disturbance=NO_DISTURBANCE, t=0.0):
    """Same field written with the group operations (test oracle)."""
    x = np.asarray(x, dtype=float)
    q, v, w = x[..., st.Q], x[..., st.V], x[..., st.W]
    f, tau = mixer(u, params)
    mass = disturbance.mass(params, t)
    inertia = np.asarray(params.inertia)
    gravity = np.array([0.0, 0.0, -params.g])
    pdot = lg.qrotate(q, v)
    qdot = 0.5 * np.einsum("...ij,...j->...i", lg.orientation_jacobian(q), w)
    vdot = (f / mass)[..., None] * np.array([0.0, 0.0, 1.0]) - np.cross(w, v) \
        + lg.qrotate(lg.qinv(q), np.broadcast_to(gravity, v.shape))
    wdot = (tau - np.cross(w, inertia * w)) / inertia
    return np.concatenate([pdot, qdot, vdot, wdot], axis=-1)


def integrate(x, u, params, disturbance=NO_DISTURBANCE, dt=0.01, t=0.0,
              substeps=10, field=None):
    """Classical RK4 over one control period with zero-order-hold ``u``.

    ``field(x, t)`` overrides the vector field (test hook). The quaternion is
    renormalized after every substep and returned in the upper hemisphere.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if field is None:
        def field(xx, tt):
            return deriv(xx, u, params, disturbance, tt)
    h = dt / substeps
    x = np.array(x, dtype=float)
    for i in range(substeps):
        ti = t + i * h
        k1 = field(x, ti)
        k2 = field(x + 0.5 * h * k1, ti + 0.5 * h)
        k3 = field(x + 0.5 * h * k2, ti + 0.5 * h)
        k4 = field(x + h * k3, ti + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x[..., st.Q] = lg.normalize(x[..., st.Q])
    x[..., st.Q] = lg.canonicalize(x[..., st.Q])
    return x


# -- references ------------------------------------------------------------

@dataclass(frozen=True)
class Reference:
    """Smooth analytic reference.

    ``circle``: radius ``ax`` (``ay`` ignored). ``lemniscate``: Gerono
    figure-eight ``(ax sin(wt), ay sin(2wt))``. ``hover``: fixed point.
    An optional vertical sinusoid and heading oscillation are used for data
    collection.
    """
    kind: str = "circle"
    ax: float = 1.0
    ay: float = 1.0
    period: float = 6.0
    altitude: float = 1.0
    center: tuple = (0.0, 0.0)
    phase: float = 0.0
    direction: float = 1.0
    z_amp: float = 0.0
    z_period: float = 4.0
    yaw0: float = 0.0
    yaw_amp: float = 0.0
    yaw_period: float = 5.0

    def __post_init__(self):
        if self.kind not in ("circle", "lemniscate", "hover"):
            raise ValueError(f"unknown reference kind {self.kind!r}")

    def _xy(self, t, order):
        t = np.asarray(t, dtype=float)
        if self.kind == "hover":
            base = np.zeros(t.shape + (2,))
            if order == 0:
                base[..., 0], base[..., 1] = self.center
            return base
        w = self.direction * 2.0 * np.pi / self.period
        s = w * t + self.phase
        if self.kind == "circle":
            # derivatives of (cos s, sin s) rotate by 90 degrees per order
            ang = s + 0.5 * np.pi * order
            out = np.stack([self.ax * np.cos(ang), self.ax * np.sin(ang)], axis=-1) * w**order
        else:
            ang1 = s + 0.5 * np.pi * order
            ang2 = 2.0 * s + 0.5 * np.pi * order
            out = np.stack([self.ax * np.sin(ang1) * w**order,
                            self.ay * np.sin(ang2) * (2.0 * w)**order], axis=-1)
        if order == 0:
            out = out + np.asarray(self.center)
        return out

    def _z(self, t, order):
        t = np.asarray(t, dtype=float)
        wz = 2.0 * np.pi / self.z_period
        val = self.z_amp * wz**order * np.sin(wz * t + 0.5 * np.pi * order)
        return val + (self.altitude if order == 0 else 0.0)

    def derivative(self, t, order):
        """Position (order 0), velocity (1) or acceleration (2) in the world frame."""
        xy = self._xy(t, order)
        return np.concatenate([xy, self._z(t, order)[..., None]], axis=-1)

    def position(self, t):
        return self.derivative(t, 0)

    def velocity(self, t):
        return self.derivative(t, 1)

    def acceleration(self, t):
        return self.derivative(t, 2)

    def yaw(self, t):
        t = np.asarray(t, dtype=float)
        return self.yaw0 + self.yaw_amp * np.sin(2.0 * np.pi * t / self.yaw_period)

    def yaw_rate(self, t):
        t = np.asarray(t, dtype=float)
        w = 2.0 * np.pi / self.yaw_period
        return self.yaw_amp * w * np.cos(w * t)

    def states(self, t):
        """Reference 13-vectors: position, level heading, body velocity, rate."""
        t = np.asarray(t, dtype=float)
        q = lg.yaw_quaternion(self.yaw(t))
        v_body = lg.qrotate(lg.qinv(q), self.velocity(t))
        w = np.zeros(t.shape + (3,))
        w[..., 2] = self.yaw_rate(t)
        return np.concatenate([self.position(t), q, v_body, w], axis=-1)


def reference(kind, t):
    """Evaluation references: circle r=1 m, T=6 s; lemniscate 1.5 x 1 m, T=8 s."""
    if kind == "circle":
        ref = Reference("circle", ax=1.0, period=6.0, altitude=1.0)
    elif kind == "lemniscate":
        ref = Reference("lemniscate", ax=0.75, ay=0.5, period=8.0, altitude=1.0)
    elif kind == "hover":
        ref = Reference("hover", altitude=1.0)
    else:
        raise ValueError(f"unknown reference kind {kind!r}")
    return ref.states(t)


def named_reference(kind):
    return {"circle": Reference("circle", ax=1.0, period=6.0, altitude=1.0),
            "lemniscate": Reference("lemniscate", ax=0.75, ay=0.5, period=8.0, altitude=1.0),
            "hover": Reference("hover", altitude=1.0)}[kind]


# -- geometric controller used to collect data ----------------------------

@dataclass(frozen=True)
class GeometricGains:
    kx: float = 6.0
    kv: float = 4.0
    kr: tuple = (1.0, 1.0, 0.8)
    kw: tuple = (0.08, 0.08, 0.08)
    u_max: float = 6.25


def _vee(m):
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def datagen_controller(x, pos, vel, acc, yaw, params, gains=GeometricGains()):
    """Geometric tracking law on SE(3), mapped to motor thrusts and clamped."""
    x = np.asarray(x, dtype=float)
    q, v, w = x[..., st.Q], x[..., st.V], x[..., st.W]
    r = lg.rotmat(q)
    e_p = x[..., st.P] - pos
    e_v = lg.qrotate(q, v) - vel
    force = params.m * (-gains.kx * e_p - gains.kv * e_v + acc
                        + np.array([0.0, 0.0, params.g]))
    thrust = np.einsum("...i,...i->...", force, r[..., :, 2])
    b3 = force / np.linalg.norm(force, axis=-1, keepdims=True)
    yaw = np.asarray(yaw, dtype=float)
    b1c = np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)], axis=-1)
    b2 = np.cross(b3, b1c)
    b2 /= np.linalg.norm(b2, axis=-1, keepdims=True)
    b1 = np.cross(b2, b3)
    rd = np.stack([b1, b2, b3], axis=-1)
    e_r = 0.5 * _vee(np.swapaxes(rd, -1, -2) @ r - np.swapaxes(r, -1, -2) @ rd)
    inertia = np.asarray(params.inertia)
    tau = -np.asarray(gains.kr) * e_r - np.asarray(gains.kw) * w + np.cross(w, inertia * w)
    u = inverse_mixer(thrust, tau, params)
    return np.clip(u, 0.0, gains.u_max)


# -- exact discrete model for oracle tests ----------------------------------

class SimModel:
    """The simulator viewed as a discrete model (same interface as DynModel).

    Jacobians come from batched manifold central differences.
    """

    diff = staticmethod(st.diff)
    diff_jacobian = staticmethod(st.diff_jacobian)

    def __init__(self, params=QuadParams(), disturbance=NO_DISTURBANCE, dt=0.01,
                 substeps=10, fd_step=1e-6):
        self.params = params
        self.disturbance = disturbance
        self.dt = dt
        self.substeps = substeps
        self.fd_step = fd_step

    def step(self, x, u):
        return integrate(x, u, self.params, self.disturbance, self.dt, 0.0, self.substeps)

    def rollout(self, x0, us):
        us = np.asarray(us, dtype=float)
        xs = [np.asarray(x0, dtype=float)]
        for u in us:
            xs.append(self.step(xs[-1], u))
        return np.stack(xs)

    def linearize(self, x, u):
        """``(A, B)`` by central differences, batched over leading axes."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        lead = x.shape[:-1]
        x = x.reshape(-1, st.STATE_DIM)
        u = np.broadcast_to(u, lead + (st.CONTROL_DIM,)).reshape(-1, st.CONTROL_DIM)
        n, h = len(x), self.fd_step
        nt, nc = st.TANGENT_DIM, st.CONTROL_DIM
        eye_x = h * np.eye(nt)
        eye_u = h * np.eye(nc)
        bx = np.concatenate([st.compose(x[:, None, :], eye_x[None]),
                             st.compose(x[:, None, :], -eye_x[None])], axis=1)
        bu = np.concatenate([u[:, None, :] + eye_u[None], u[:, None, :] - eye_u[None]], axis=1)
        xs = np.concatenate([bx, np.repeat(x[:, None, :], 2 * nc, axis=1)], axis=1)
        us = np.concatenate([np.repeat(u[:, None, :], 2 * nt, axis=1), bu], axis=1)
        out = self.step(xs.reshape(-1, st.STATE_DIM), us.reshape(-1, nc))
        out = out.reshape(n, 2 * (nt + nc), st.STATE_DIM)
        base = self.step(x, u)[:, None, :]
        dx = st.diff(out, base)
        a = (dx[:, :nt] - dx[:, nt:2 * nt]) / (2 * h)
        b = (dx[:, 2 * nt:2 * nt + nc] - dx[:, 2 * nt + nc:]) / (2 * h)
        a = np.swapaxes(a, -1, -2).reshape(lead + (nt, nt))
        b = np.swapaxes(b, -1, -2).reshape(lead + (nt, nc))
        return a, b


# -- dataset generation ----------------------------------------------------

@dataclass
class DatagenConfig:
    n_train: int = 100
    n_val: int = 50
    n_samples: int = 300
    dt: float = 0.01
    seed: int = 0
    radius_range: tuple = (0.5, 1.5)
    period_range: tuple = (4.0, 10.0)
    altitude_range: tuple = (0.5, 1.5)
    # vertical excitation; fast altitude swings reach ~1.4 g collective thrust
    z_amp_max: float = 0.6
    z_period_range: tuple = (1.5, 4.0)
    yaw_amp_max: float = 0.5
    # exploration noise on motor thrusts (first-order filtered Gaussian)
    thrust_noise: float = 0.25
    noise_tau: float = 0.05
    init_pos_noise: float = 0.2
    init_vel_noise: float = 0.3
    init_att_noise: float = 0.2
    init_rate_noise: float = 0.5
    u_max: float = 6.25


def random_references(rng, n, cfg):
    refs = []
    for _ in range(n):
        kind = "circle" if rng.random() < 0.6 else "lemniscate"
        radius = rng.uniform(*cfg.radius_range)
        refs.append(Reference(
            kind=kind, ax=radius, ay=radius * rng.uniform(0.4, 1.0),
            period=rng.uniform(*cfg.period_range),
            altitude=rng.uniform(*cfg.altitude_range),
            center=tuple(rng.uniform(-0.5, 0.5, 2)),
            phase=rng.uniform(0, 2 * np.pi), direction=rng.choice([-1.0, 1.0]),
            z_amp=rng.uniform(0, cfg.z_amp_max), z_period=rng.uniform(*cfg.z_period_range),
            yaw0=rng.uniform(-np.pi, np.pi), yaw_amp=rng.uniform(0, cfg.yaw_amp_max),
            yaw_period=rng.uniform(3.0, 8.0)))
    return refs


def simulate_references(refs, cfg, params=QuadParams(), rng=None):
    """Closed-loop geometric-control rollouts, all references in lockstep."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = len(refs)
    x = np.stack([r.states(0.0) for r in refs])
    eps = np.hstack([cfg.init_pos_noise * rng.standard_normal((n, 3)),
                     cfg.init_att_noise * rng.standard_normal((n, 3)),
                     cfg.init_vel_noise * rng.standard_normal((n, 3)),
                     cfg.init_rate_noise * rng.standard_normal((n, 3))])
    x = st.compose(x, eps)
    gains = GeometricGains(u_max=cfg.u_max)
    states = np.empty((n, cfg.n_samples + 1, st.STATE_DIM))
    controls = np.empty((n, cfg.n_samples, st.CONTROL_DIM))
    states[:, 0] = x
    noise = np.zeros((n, 4))
    decay = np.exp(-cfg.dt / cfg.noise_tau)
    for k in range(cfg.n_samples):
        t = k * cfg.dt
        pos = np.stack([r.position(t) for r in refs])
        vel = np.stack([r.velocity(t) for r in refs])
        acc = np.stack([r.acceleration(t) for r in refs])
        yaw = np.array([r.yaw(t) for r in refs])
        u = datagen_controller(x, pos, vel, acc, yaw, params, gains)
        noise = decay * noise + np.sqrt(1 - decay**2) * cfg.thrust_noise * rng.standard_normal((n, 4))
        u = np.clip(u + noise, 0.0, cfg.u_max)
        x = integrate(x, u, params, NO_DISTURBANCE, cfg.dt, t)
        controls[:, k] = u
        states[:, k + 1] = x
    return [st.Trajectory(states[i], controls[i], cfg.dt) for i in range(n)]


def generate_dataset(cfg, params=QuadParams()):
    """Returns ``(train, validation)`` lists of trajectories."""
    rng = np.random.default_rng(cfg.seed)
    refs = random_references(rng, cfg.n_train + cfg.n_val, cfg)
    trajs = simulate_references(refs, cfg, params, rng)
    return trajs[:cfg.n_train], trajs[cfg.n_train:]
