"""Manifold RMSE and Table-II style summaries."""

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from . import liegroup as lg
from . import state as st


@dataclass(frozen=True)
class RmseReport:
    pos: float
    heading: float
    lin_vel: float
    ang_vel: float
    overall: float
    # full attitude error (rotation-vector norm), used for prediction accuracy
    orient: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value >= 0:
                raise ValueError(f"{name} RMSE must be nonnegative, got {value}")

    def as_dict(self):
        return asdict(self)


def yaw(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def _block_rmse(e):
    return float(np.sqrt(np.mean(np.sum(e * e, axis=-1)))) if e.size else 0.0


def rmse_states(pred, truth):
    """RMSE between stacked states of equal shape ``(..., 13)``."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    e = st.diff(pred, truth)
    # heading error as the wrapped yaw-angle difference (overall is in m, 1 m per rad)
    e_yaw = wrap_angle(yaw(pred[..., st.Q]) - yaw(truth[..., st.Q]))
    pos = _block_rmse(e[..., st.TP])
    heading = float(np.sqrt(np.mean(e_yaw**2))) if e_yaw.size else 0.0
    return RmseReport(pos=pos, heading=heading,
                      lin_vel=_block_rmse(e[..., st.TV]), ang_vel=_block_rmse(e[..., st.TW]),
                      overall=float(np.hypot(pos, heading)), orient=_block_rmse(e[..., st.TQ]))


def rmse(pred, truth):
    """RMSE between two trajectories (or state arrays) of equal length."""
    a = pred.states if isinstance(pred, st.Trajectory) else pred
    b = truth.states if isinstance(truth, st.Trajectory) else truth
    if len(a) != len(b):
        raise ValueError(f"length mismatch {len(a)} vs {len(b)}")
    return rmse_states(a, b)


# -- open-loop prediction evaluation -------------------------------------------

def zero_increment_rollout(x0, n_steps):
    x0 = np.asarray(x0, dtype=float)
    return np.repeat(x0[..., None, :], n_steps, axis=-2)


def constant_velocity_rollout(x0, n_steps, dt):
    """Holds the body velocities and integrates pose kinematically."""
    x = np.asarray(x0, dtype=float)
    out = np.empty(x.shape[:-1] + (n_steps, st.STATE_DIM))
    for k in range(n_steps):
        inc = np.zeros(x.shape[:-1] + (st.TANGENT_DIM,))
        inc[..., st.TP] = dt * lg.qrotate(x[..., st.Q], x[..., st.V])
        inc[..., st.TQ] = dt * x[..., st.W]
        x = st.compose(x, inc)
        out[..., k, :] = x
    return out


def prediction_rmse(model, windows):
    """Open-loop model rollouts over every window; states ``1..T`` are scored."""
    preds = model.rollout(windows.x0, windows.us)[:, 1:]
    return rmse_states(preds, windows.xs)


def baseline_rmse(windows, dt):
    zero = rmse_states(zero_increment_rollout(windows.x0, windows.horizon), windows.xs)
    cv = rmse_states(constant_velocity_rollout(windows.x0, windows.horizon, dt), windows.xs)
    return {"zero_increment": zero, "constant_velocity": cv}


PREDICTION_BLOCKS = ("pos", "orient", "lin_vel", "ang_vel")
# desk-scale bounds at the 0.5 s horizon (m, rad, m/s, rad/s)
PREDICTION_BOUNDS = {"pos": 0.18, "orient": 0.30, "lin_vel": 0.78, "ang_vel": 1.2}
BASELINE_FACTOR = 5.0


def prediction_checks(report, baselines, bounds=PREDICTION_BOUNDS, factor=BASELINE_FACTOR):
    """Per-block pass/fail: absolute bound and ``factor``-fold margin over each baseline."""
    checks = {}
    for b in PREDICTION_BLOCKS:
        value = getattr(report, b)
        checks[f"{b}_bound"] = value <= bounds[b]
        for name, base in baselines.items():
            checks[f"{b}_vs_{name}"] = factor * value <= getattr(base, b)
    return checks


# -- summary tables -------------------------------------------------------------

TRACKING_COLUMNS = ("reference", "adapt", "pos", "heading", "overall")


def summary_rows(results):
    """``results``: iterable of ``(reference, adapt_flag, RmseReport)``."""
    return [{"reference": ref, "adapt": "on" if on else "off",
             "pos": rep.pos, "heading": rep.heading, "overall": rep.overall}
            for ref, on, rep in results]


def table_csv(rows, columns=TRACKING_COLUMNS, header_extra=None):
    buf = io.StringIO()
    for key, value in (header_extra or {}).items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([f"{row[c]:.6f}" if isinstance(row[c], float) else row[c] for c in columns])
    return buf.getvalue()


def table_text(rows, columns=TRACKING_COLUMNS, note=True):
    cells = [list(columns)] + [[f"{row[c]:.4f}" if isinstance(row[c], float) else str(row[c])
                                for c in columns] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    if note:
        lines.append("overall = sqrt(pos^2 + heading^2), heading taken as 1 m per rad")
    return "\n".join(lines) + "\n"
