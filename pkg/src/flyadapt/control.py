"""iLQR tracking controller over a (learned) discrete model.

The model is duck-typed: it needs ``step``, ``rollout(x0, us)``, ``linearize(xs, us)``
returning tangent Jacobians ``(A, B)``, and ``diff`` / ``diff_jacobian`` for
the state error. The learned network, the exact simulator model and plain
linear test systems all fit.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

CONTROL_Q = (200.0, 200.0, 200.0, 1.25, 1.25, 50.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
ALPHAS = (1.0, 0.5, 0.25, 0.125, 0.0625)


class ControlError(RuntimeError):
    pass


@dataclass
class ControlConfig:
    horizon: int = 50
    q_diag: tuple = CONTROL_Q
    q_u: float = 2.0
    u_hover: float = 2.4525
    u_min: float = 0.0
    u_max: float = 6.25
    max_iters: int = 3
    mu: float = 1e-6
    mu_max: float = 1e8
    alphas: tuple = ALPHAS
    # stop early once an accepted step improves the cost by less than this fraction
    rel_tol: float = 1e-3

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if min(self.q_diag) < 0 or self.q_u < 0:
            raise ValueError("cost weights must be nonnegative")
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")
        if self.max_iters < 1 or self.mu <= 0 or self.rel_tol < 0:
            raise ValueError("max_iters >= 1, mu > 0 and rel_tol >= 0 required")
        if any(not 0 < a <= 1 for a in self.alphas) or list(self.alphas) != sorted(self.alphas, reverse=True):
            raise ValueError("alphas must be descending values in (0, 1]")

    @property
    def q(self):
        return np.diag(np.asarray(self.q_diag, dtype=float))


@dataclass
class Policy:
    k: np.ndarray    # (T, m)
    K: np.ndarray    # (T, m, n)


def _weights(cfg, n_ctrl):
    return cfg.q, cfg.q_u * np.eye(n_ctrl)


def tracking_cost(model, xs, us, ref, cfg):
    """``sum_{k=1..T} |x_k (-) x*_k|^2_Q + sum_{k<T} |u_k - u_hover|^2_Qu``.

    ``xs`` and ``ref`` hold ``T+1`` states; the fixed initial state carries no
    cost. Broadcasts over a leading batch axis.
    """
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    e = model.diff(xs[..., 1:, :], ref[1:])
    du = us - cfg.u_hover
    q = cfg.q
    state = np.einsum("...ki,ij,...kj->...", e, q, e)
    return state + cfg.q_u * np.sum(du * du, axis=(-1, -2))


def ilqr_backward(model, xs, us, ref, cfg, mu=None, jac=None):
    """Riccati sweep about the nominal ``(xs, us)``.

    ``V^uu`` is regularized with ``mu I``, grown x10 until Cholesky succeeds.
    """
    mu = cfg.mu if mu is None else mu
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    n_steps, m = us.shape
    a_mats, b_mats = model.linearize(xs[:-1], us) if jac is None else jac
    e = model.diff(xs, ref)
    g = model.diff_jacobian(e)
    q, qu = _weights(cfg, m)
    gq = 2.0 * np.swapaxes(g, -1, -2) @ q
    lx = (gq @ e[..., None])[..., 0]
    lxx = gq @ g
    cu = 2.0 * cfg.q_u * (us - cfg.u_hover)
    cuu = 2.0 * qu
    vx, vxx = lx[-1], lxx[-1]
    n = vx.size
    ks = np.zeros((n_steps, m))
    gains = np.zeros((n_steps, m, n))
    for k in range(n_steps - 1, -1, -1):
        a, b = a_mats[k], b_mats[k]
        vxx_b = vxx @ b
        q_x = (lx[k] if k else np.zeros(n)) + a.T @ vx
        q_u = cu[k] + b.T @ vx
        q_xx = (lxx[k] if k else np.zeros((n, n))) + a.T @ vxx @ a
        q_ux = vxx_b.T @ a
        q_uu = cuu + b.T @ vxx_b
        reg = mu
        while True:
            try:
                chol = np.linalg.cholesky(q_uu + reg * np.eye(m))
                break
            except np.linalg.LinAlgError:
                reg *= 10.0
                if reg > cfg.mu_max:
                    raise ControlError(f"V^uu indefinite at step {k}")
        rhs = np.column_stack([q_u, q_ux])
        sol = -np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        kk, kg = sol[:, 0], sol[:, 1:]
        ks[k], gains[k] = kk, kg
        vx = q_x + kg.T @ q_uu @ kk + kg.T @ q_u + q_ux.T @ kk
        vxx = q_xx + kg.T @ q_uu @ kg + kg.T @ q_ux + q_ux.T @ kg
        vxx = 0.5 * (vxx + vxx.T)
    return Policy(ks, gains)


def ilqr_forward(model, policy, x0, xs, us, cfg, alphas=None):
    """Closed-loop rollouts for every line-search step at once.

    Returns ``(xs_new, us_new)`` of shapes ``(n_alpha, T+1, n)`` and
    ``(n_alpha, T, m)``.
    """
    alphas = np.asarray(cfg.alphas if alphas is None else alphas, dtype=float)
    n_a = len(alphas)
    n_steps = us.shape[0]
    x = np.repeat(np.asarray(x0, dtype=float)[None], n_a, axis=0)
    xs_new = np.empty((n_a, n_steps + 1, x.shape[-1]))
    us_new = np.empty((n_a, n_steps, us.shape[-1]))
    xs_new[:, 0] = x
    for k in range(n_steps):
        dx = model.diff(x, xs[k])
        u = us[k] + alphas[:, None] * policy.k[k] + dx @ policy.K[k].T
        u = np.clip(u, cfg.u_min, cfg.u_max)
        x = model.step(x, u)
        us_new[:, k] = u
        xs_new[:, k + 1] = x
    return xs_new, us_new


@dataclass
class SolveResult:
    xs: np.ndarray
    us: np.ndarray
    cost: float
    iterations: int
    costs: list = field(default_factory=list)


def solve(model, x0, us_init, ref, cfg, max_iters=None):
    """A few iLQR iterations from ``us_init``; every accepted step lowers cost."""
    max_iters = cfg.max_iters if max_iters is None else max_iters
    us = np.clip(np.asarray(us_init, dtype=float), cfg.u_min, cfg.u_max)
    xs = model.rollout(x0, us)
    cost = float(tracking_cost(model, xs, us, ref, cfg))
    costs = [cost]
    mu = cfg.mu
    iters = 0
    for _ in range(max_iters):
        policy = ilqr_backward(model, xs, us, ref, cfg, mu)
        cand_x, cand_u = ilqr_forward(model, policy, x0, xs, us, cfg)
        cand_cost = tracking_cost(model, cand_x, cand_u, ref, cfg)
        ok = np.flatnonzero(np.isfinite(cand_cost) & (cand_cost < cost))
        iters += 1
        if not len(ok):
            mu *= 10.0
            costs.append(cost)
            continue
        j = ok[0]
        prev = cost
        xs, us, cost = cand_x[j], cand_u[j], float(cand_cost[j])
        costs.append(cost)
        mu = max(mu / 10.0, cfg.mu)
        if prev - cost <= cfg.rel_tol * prev:
            break
    return SolveResult(xs, us, cost, iters, costs)


class MpcController:
    """Receding-horizon wrapper with a time-shifted warm start."""

    def __init__(self, cfg, n_ctrl=4):
        self.cfg = cfg
        self.us = np.full((cfg.horizon, n_ctrl), cfg.u_hover)
        self.last_result = None
        self.failures = 0

    def control_cycle(self, x, ref, model):
        """``ref``: reference states for ``k = 0..T``. Returns the control to apply."""
        warm = np.vstack([self.us[1:], self.us[-1:]])
        try:
            res = solve(model, x, warm, ref, self.cfg)
        except (ControlError, RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
            self.failures += 1
            log.warning("control cycle failed (%s); using shifted previous plan", exc)
            self.us = warm
            self.last_result = None
            return np.clip(warm[0], self.cfg.u_min, self.cfg.u_max)
        self.us = res.us
        self.last_result = res
        return res.us[0].copy()


CONTROL_LOG_COLUMNS = (["t"] + [f"x_{i}" for i in range(13)] + [f"ref_{i}" for i in range(13)]
                       + [f"u_{i}" for i in range(4)] + ["cost", "iters"])


def write_control_log(path, rows, header_extra=None):
    with open(path, "w", newline="") as fh:
        for key, value in (header_extra or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(CONTROL_LOG_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
