import numpy as np
import pytest

from flyadapt import liegroup as lg
from flyadapt import metrics
from flyadapt import sim
from flyadapt import state as st
from flyadapt import trainer as tr
from helpers import random_states, zero_model


def test_identical_states_zero_rmse(rng):
    x = random_states(rng, 50)
    rep = metrics.rmse_states(x, x)
    assert rep.pos == rep.heading == rep.lin_vel == rep.ang_vel == rep.overall == rep.orient == 0.0


def test_constant_offsets():
    truth = np.tile(st.make_state(p=(0, 0, 1)), (10, 1))
    pred = truth.copy()
    pred[:, 0] += 0.3
    pred[:, 2] -= 0.4
    pred[:, 7:10] += (0.1, 0.2, 0.2)
    pred[:, st.Q] = lg.exp_map([0.0, 0.0, 0.2])
    rep = metrics.rmse_states(pred, truth)
    assert rep.pos == pytest.approx(0.5)
    assert rep.heading == pytest.approx(0.2)
    assert rep.orient == pytest.approx(0.2)
    assert rep.lin_vel == pytest.approx(0.3)
    assert rep.overall == pytest.approx(np.hypot(0.5, 0.2))


def test_heading_wraps_across_pi():
    a = st.make_state(q=lg.exp_map([0.0, 0.0, np.pi - 0.05]))
    b = st.make_state(q=lg.exp_map([0.0, 0.0, -np.pi + 0.05]))
    assert metrics.rmse_states(a[None], b[None]).heading == pytest.approx(0.1)


def test_heading_ignores_pure_tilt():
    a = st.make_state(q=lg.exp_map([0.3, 0.0, 0.0]))
    b = st.make_state()
    rep = metrics.rmse_states(a[None], b[None])
    assert rep.heading == pytest.approx(0.0, abs=1e-12)
    assert rep.orient == pytest.approx(0.3)


def test_double_cover_invariance(rng):
    x = random_states(rng, 20)
    y = random_states(rng, 20)
    flipped = x.copy()
    flipped[:, st.Q] *= -1
    a, b = metrics.rmse_states(x, y), metrics.rmse_states(flipped, y)
    for k in a.as_dict():
        assert getattr(a, k) == pytest.approx(getattr(b, k), abs=1e-12)


def test_rmse_length_mismatch():
    with pytest.raises(ValueError):
        metrics.rmse(np.zeros((3, 13)), np.zeros((4, 13)))


def test_yaw_of_known_rotation():
    assert metrics.yaw(lg.exp_map([0.0, 0.0, 1.1])) == pytest.approx(1.1)


def _const_windows(n_windows=3, horizon=5):
    x = st.make_state(p=(0.2, -0.1, 1.0))
    traj = st.Trajectory(np.tile(x, (20, 1)), np.full((19, 4), 2.4525))
    return tr.window(tr.Dataset([traj] * n_windows), horizon)


def test_zero_increment_model_on_constant_data():
    win = _const_windows()
    assert metrics.prediction_rmse(zero_model(), win).pos == 0.0
    base = metrics.baseline_rmse(win, 0.01)
    assert base["zero_increment"].overall == 0.0
    assert base["constant_velocity"].overall == 0.0


def test_constant_velocity_baseline_exact_for_uniform_motion():
    n, dt = 40, 0.01
    v, w = np.array([0.5, -0.2, 0.1]), np.array([0.0, 0.0, 0.7])
    xs = [st.make_state(p=(0, 0, 1), v=v, w=w)]
    for _ in range(n):
        x = xs[-1]
        inc = np.zeros(12)
        inc[st.TP] = dt * lg.qrotate(x[st.Q], x[st.V])
        inc[st.TQ] = dt * w
        xs.append(st.compose(x, inc))
    xs = np.array(xs)
    pred = metrics.constant_velocity_rollout(xs[0], n, dt)
    assert metrics.rmse_states(pred, xs[1:]).overall < 1e-12


def test_prediction_checks():
    good = metrics.RmseReport(0.01, 0.0, 0.05, 0.1, 0.01, orient=0.02)
    base = metrics.RmseReport(0.2, 0.0, 0.5, 1.0, 0.2, orient=0.2)
    checks = metrics.prediction_checks(good, {"zero": base})
    assert all(checks.values()) and len(checks) == 8
    bad = metrics.RmseReport(0.05, 0.0, 0.05, 0.1, 0.05, orient=0.02)
    checks = metrics.prediction_checks(bad, {"zero": base})
    assert not checks["pos_vs_zero"] and checks["pos_bound"]


def test_tables():
    rep = metrics.RmseReport(0.1, 0.05, 0.2, 0.3, float(np.hypot(0.1, 0.05)))
    rows = metrics.summary_rows([("circle", False, rep), ("circle", True, rep)])
    text = metrics.table_text(rows)
    assert "circle" in text and "off" in text and "on" in text
    csv_text = metrics.table_csv(rows, header_extra={"config_hash": "abc"})
    lines = csv_text.splitlines()
    assert lines[0] == "# config_hash=abc"
    assert lines[1] == ",".join(metrics.TRACKING_COLUMNS)
    assert lines[2].startswith("circle,off,0.100000")


def test_report_rejects_negative():
    with pytest.raises(ValueError):
        metrics.RmseReport(-1.0, 0, 0, 0, 0)


def test_tracking_rmse_of_reference_itself():
    ref = sim.named_reference("lemniscate")
    x = ref.states(np.linspace(0, 8, 100))
    assert metrics.rmse_states(x, x).overall == 0.0
