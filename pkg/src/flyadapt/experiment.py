"""Closed-loop tracking runs: simulator, MPC and optional online adaptation."""

import time
from dataclasses import dataclass, field

import numpy as np

from . import adapt as ad
from . import control as ctl
from . import metrics
from . import sim
from . import state as st


@dataclass
class TrackConfig:
    reference: str = "circle"
    duration: float = 30.0
    payload: float = 0.35
    activation_time: float = 0.0
    adapt: bool = False
    # optional Gaussian measurement noise on the state seen by controller/adapter
    measurement_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.reference not in ("circle", "lemniscate", "hover"):
            raise ValueError(f"unknown reference {self.reference!r}")
        if self.duration <= 0 or self.payload < 0 or self.measurement_noise < 0:
            raise ValueError("duration > 0, payload >= 0 and noise >= 0 required")


@dataclass
class TrackResult:
    times: np.ndarray
    states: np.ndarray
    refs: np.ndarray
    controls: np.ndarray
    costs: np.ndarray
    iters: np.ndarray
    report: metrics.RmseReport
    adapt_log: list = field(default_factory=list)
    control_failures: int = 0
    wall_time: float = 0.0

    def control_rows(self):
        return [np.concatenate([[t], x, r, u, [c, i]]) for t, x, r, u, c, i in
                zip(self.times, self.states, self.refs, self.controls, self.costs, self.iters)]


def run_tracking(model, tcfg, ccfg, acfg=None, params=sim.QuadParams(), dt=None, progress=None,
                 substeps=10):
    """Simulates ``duration`` seconds at the model rate.

    ``model`` must support the controller interface; with ``tcfg.adapt`` it
    also needs ``with_rank`` (a low-rank adapter is attached when missing).
    """
    dt = model.dt if dt is None else dt
    acfg = ad.AdaptConfig() if acfg is None else acfg
    ref = sim.named_reference(tcfg.reference)
    dist = sim.Disturbance(tcfg.payload, tcfg.activation_time)
    rng = np.random.default_rng(tcfg.seed)
    n_steps = int(round(tcfg.duration / dt))
    horizon = ccfg.horizon
    adapter = None
    if tcfg.adapt:
        if getattr(model, "adapters", None) is None:
            model = model.with_rank(acfg.rank)
        adapter = ad.OnlineAdapter(model, acfg)
    mpc = ctl.MpcController(ccfg)
    x = ref.states(0.0)
    times = dt * np.arange(n_steps)
    states = np.empty((n_steps, st.STATE_DIM))
    refs = ref.states(times)
    controls = np.empty((n_steps, st.CONTROL_DIM))
    costs = np.empty(n_steps)
    iters = np.zeros(n_steps)
    start = time.perf_counter()
    x_meas = x
    for k in range(n_steps):
        t = times[k]
        states[k] = x
        ref_h = ref.states(t + dt * np.arange(horizon + 1))
        current = adapter.snapshot if adapter is not None else model
        u = mpc.control_cycle(x_meas, ref_h, current)
        res = mpc.last_result
        costs[k] = res.cost if res is not None else np.nan
        iters[k] = res.iterations if res is not None else 0
        controls[k] = u
        x_next = sim.integrate(x, u, params, dist, dt, t, substeps)
        if not np.all(np.isfinite(x_next)):
            raise FloatingPointError(f"simulation diverged at t={t:.2f}")
        x_next_meas = x_next
        if tcfg.measurement_noise:
            x_next_meas = st.perturb_state(x_next, tcfg.measurement_noise, rng)
        if adapter is not None:
            adapter.record(x_meas, u, x_next_meas, t)
        x, x_meas = x_next, x_next_meas
        if progress is not None:
            progress(k, t, x, u)
    report = metrics.rmse_states(states, refs)
    return TrackResult(times, states, refs, controls, costs, iters, report,
                       adapter.state.history if adapter is not None else [],
                       mpc.failures, time.perf_counter() - start)


def altitude_offset(result, t_from=5.0, t_to=None):
    """Mean (reference - actual) altitude over a time interval."""
    t = result.times
    sel = t >= t_from
    if t_to is not None:
        sel &= t <= t_to
    if not np.any(sel):
        return float("nan")
    return float(np.mean(result.refs[sel, 2] - result.states[sel, 2]))


def window_costs_monotone(adapt_log, tol=0.0):
    """True when the cost never increases across the iterations of any window."""
    by_window = {}
    for row in adapt_log:
        by_window.setdefault(row[0], []).append(row)
    for rows in by_window.values():
        seq = [rows[0][4]] + [r[5] for r in rows]
        if any(b > a + tol for a, b in zip(seq, seq[1:])):
            return False
    return True


def adaptation_checks(off, on, pos_ratio=0.85, heading_change=0.25):
    """Pass/fail flags comparing a no-adaptation run with an adaptation run."""
    ratio = on.report.pos / off.report.pos
    change = abs(on.report.heading - off.report.heading) / max(off.report.heading, 1e-12)
    return {
        "pos_ratio": ratio,
        "pos_improved": ratio <= pos_ratio,
        "heading_change": change,
        "heading_comparable": change < heading_change,
        "window_cost_monotone": window_costs_monotone(on.adapt_log),
    }


def altitude_checks(off, on, t_check=10.0, half_width=0.5, factor=0.25, t_settle=5.0):
    """Persistent offset below the reference without adaptation, small error with it."""
    offset = altitude_offset(off, t_settle)
    sel = np.abs(on.times - t_check) <= half_width + 1e-9
    err = float(np.mean(np.abs(on.refs[sel, 2] - on.states[sel, 2]))) if np.any(sel) else np.nan
    return {
        "offset_off": offset,
        "below_reference": offset > 0,
        "err_on_at_check": err,
        "converged": bool(offset > 0 and err <= factor * offset),
    }
