"""Online second-order adaptation of the low-rank cores over a data window.

Each iteration rolls the current model out from the measured initial state
under the recorded controls, runs a Gauss-Newton backward recursion for the
gradient and Hessian of the window cost in the parameters, then takes a
regularized Newton step with a backtracking line search.

Models are duck-typed: ``rollout``, ``linearize_params`` (tangent ``A``
and parameter Jacobian ``F``), ``theta``, ``with_theta``, ``diff`` and
``diff_jacobian``.
"""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

log = logging.getLogger(__name__)

ADAPT_Q = (10.0, 10.0, 10.0, 5.0, 5.0, 2.0, 1.0, 1.0, 1.0, 0.1, 0.1, 0.1)
ALPHAS = (1.0, 0.5, 0.25, 0.125, 0.0625)


class AdaptError(RuntimeError):
    pass


@dataclass
class AdaptConfig:
    horizon: int = 50
    iters_per_window: int = 3
    mu0: float = 1e-6
    mu_growth: float = 10.0
    mu_max: float = 1e6
    alphas: tuple = ALPHAS
    q_diag: tuple = ADAPT_Q
    q_theta: float = 0.1
    rank: int = 5
    # adaptation cadence in control samples (0.5 s at 100 Hz)
    every: int = 50

    def __post_init__(self):
        if self.horizon < 1 or self.iters_per_window < 1 or self.every < 1:
            raise ValueError("horizon, iters_per_window and every must be positive")
        if self.mu0 <= 0 or self.mu_growth <= 1 or self.mu_max < self.mu0:
            raise ValueError("need mu0 > 0, mu_growth > 1, mu_max >= mu0")
        if any(not 0 < a <= 1 for a in self.alphas) or list(self.alphas) != sorted(self.alphas, reverse=True):
            raise ValueError("alphas must be descending values in (0, 1]")
        if min(self.q_diag) < 0 or self.q_theta < 0:
            raise ValueError("weights must be nonnegative")

    @property
    def q(self):
        return np.diag(np.asarray(self.q_diag, dtype=float))


def _check_window(xs, us):
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    if xs.ndim != 2 or us.ndim != 2 or len(us) < 1 or len(xs) != len(us) + 1:
        raise AdaptError("window needs T+1 states and T >= 1 controls")
    return xs, us


def adapt_cost(model, xs, us, cfg, rollout=None):
    """``dtheta^T Q_theta dtheta + sum_k |xbar_k (-) x_k|^2_Q``."""
    xs, us = _check_window(xs, us)
    pred = model.rollout(xs[0], us) if rollout is None else rollout
    e = model.diff(pred, xs)
    theta = model.theta
    value = float(np.einsum("ki,ij,kj->", e, cfg.q, e) + cfg.q_theta * theta @ theta)
    if not np.isfinite(value):
        raise AdaptError("adaptation cost is not finite")
    return value


@dataclass
class BackwardResult:
    j_theta: np.ndarray
    j_thetatheta: np.ndarray
    j_x: np.ndarray
    j_xx: np.ndarray
    j_xtheta: np.ndarray
    asymmetry: float


def backward_pass(model, pred, xs, us, cfg):
    """Gauss-Newton recursion for the window cost.

    The Hessian recursion accumulates ``2 F^T J^xtheta`` as written, which is
    not symmetric by itself; the returned ``J^thetatheta`` is the symmetric
    part and ``asymmetry`` the Frobenius norm of the skew part removed.
    """
    xs, us = _check_window(xs, us)
    n_steps = len(us)
    a_mats, f_mats = model.linearize_params(pred[:-1], us)
    e = model.diff(pred, xs)
    g = model.diff_jacobian(e)
    q = cfg.q
    gq = 2.0 * np.swapaxes(g, -1, -2) @ q
    lx = (gq @ e[..., None])[..., 0]
    lxx = gq @ g
    theta = model.theta
    n_p = theta.size
    q_theta = cfg.q_theta * np.eye(n_p)
    # terminal values; the regularizer enters only at k = T
    jx, jxx = lx[-1], lxx[-1]
    jt = 2.0 * q_theta @ theta
    jtt = 2.0 * q_theta
    jxt = np.zeros((jx.size, n_p))
    for k in range(n_steps - 1, -1, -1):
        a, f = a_mats[k], f_mats[k]
        jxx_f = jxx @ f
        jt = f.T @ jx + jt
        jtt = f.T @ jxx_f + 2.0 * f.T @ jxt + jtt
        jxt_new = a.T @ jxx_f + a.T @ jxt
        jx = lx[k] + a.T @ jx
        jxx = lxx[k] + a.T @ jxx @ a
        jxt = jxt_new
    asym = float(np.linalg.norm(0.5 * (jtt - jtt.T)))
    return BackwardResult(jt, 0.5 * (jtt + jtt.T), jx, jxx, jxt, asym)


@dataclass
class StepResult:
    model: object
    cost_before: float
    cost_after: float
    alpha: float
    mu: float
    step_norm: float
    accepted: bool


def newton_direction(j_theta, j_thetatheta, mu, cfg):
    """``-(H + mu I)^-1 g`` with ``mu`` escalated until Cholesky succeeds.

    Returns ``(direction or None, mu_used)``.
    """
    n = len(j_theta)
    while mu <= cfg.mu_max:
        try:
            factor = cho_factor(j_thetatheta + mu * np.eye(n))
            return -cho_solve(factor, j_theta), mu
        except np.linalg.LinAlgError:
            mu *= cfg.mu_growth
    return None, mu


def solve_and_linesearch(model, back, xs, us, cfg, mu, cost=None):
    """Regularized Newton step plus backtracking; strict decrease required."""
    cost = adapt_cost(model, xs, us, cfg) if cost is None else cost
    if not np.any(back.j_theta):
        return StepResult(model, cost, cost, 0.0, mu, 0.0, False)
    step, mu = newton_direction(back.j_theta, back.j_thetatheta, mu, cfg)
    if step is None:
        log.warning("adaptation Hessian not factorizable at mu_max; skipping update")
        return StepResult(model, cost, cost, 0.0, cfg.mu_max, 0.0, False)
    theta = model.theta
    for alpha in cfg.alphas:
        trial = model.with_theta(theta + alpha * step)
        try:
            trial_cost = adapt_cost(trial, xs, us, cfg)
        except (AdaptError, RuntimeError):
            continue
        if trial_cost < cost:
            return StepResult(trial, cost, trial_cost, alpha, max(mu / cfg.mu_growth, cfg.mu0),
                              float(np.linalg.norm(alpha * step)), True)
    return StepResult(model, cost, cost, 0.0, min(mu * cfg.mu_growth, cfg.mu_max), 0.0, False)


@dataclass
class AdaptState:
    model: object
    mu: float
    iteration: int = 0
    windows: int = 0
    history: list = field(default_factory=list)


def adapt_window(state, xs, us, cfg, t_start=0, window_start=0):
    """``iters_per_window`` iterations on one recorded window.

    Log rows: ``(window, t_start, window_start, iteration, J_before, J_after,
    |dtheta|, mu, alpha, accepted, asymmetry)``.
    """
    xs, us = _check_window(xs, us)
    model = state.model
    mu = state.mu
    rows = []
    for it in range(cfg.iters_per_window):
        pred = model.rollout(xs[0], us)
        cost = adapt_cost(model, xs, us, cfg, pred)
        back = backward_pass(model, pred, xs, us, cfg)
        res = solve_and_linesearch(model, back, xs, us, cfg, mu, cost)
        model, mu = res.model, res.mu
        rows.append((state.windows, t_start, window_start, it, res.cost_before, res.cost_after,
                     float(np.linalg.norm(model.theta)), res.mu, res.alpha, int(res.accepted),
                     back.asymmetry))
        state.iteration += 1
    state.model = model
    state.mu = mu
    state.windows += 1
    state.history.extend(rows)
    return state


class OnlineAdapter:
    """Buffers measurements and adapts on a sliding window at a fixed cadence.

    The controller reads ``snapshot`` (an immutable model) between cycles.
    """

    def __init__(self, model, cfg):
        self.cfg = cfg
        self.state = AdaptState(model, cfg.mu0)
        self.states = []
        self.controls = []
        self.samples = 0
        self.wall_time = 0.0

    @property
    def snapshot(self):
        return self.state.model

    def record(self, x, u, x_next, t=0.0):
        """Appends one transition; returns True when an adaptation ran."""
        if not self.states:
            self.states.append(np.asarray(x, dtype=float).copy())
        self.controls.append(np.asarray(u, dtype=float).copy())
        self.states.append(np.asarray(x_next, dtype=float).copy())
        keep = self.cfg.horizon + 1
        if len(self.states) > keep:
            self.states = self.states[-keep:]
            self.controls = self.controls[-(keep - 1):]
        self.samples += 1
        if self.samples % self.cfg.every or len(self.controls) < self.cfg.horizon:
            return False
        start = time.perf_counter()
        adapt_window(self.state, np.stack(self.states), np.stack(self.controls), self.cfg,
                     t_start=t, window_start=self.samples - self.cfg.horizon)
        self.wall_time += time.perf_counter() - start
        return True


ADAPT_LOG_COLUMNS = ("window", "t", "window_start", "iteration", "J_before", "J_after",
                     "theta_norm", "mu", "alpha", "accepted", "asymmetry")


def write_adapt_log(path, rows, header_extra=None):
    with open(path, "w", newline="") as fh:
        for key, value in (header_extra or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(ADAPT_LOG_COLUMNS)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
