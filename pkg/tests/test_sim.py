import numpy as np
import pytest

from flyadapt import liegroup as lg
from flyadapt import sim
from flyadapt import state as st

P = sim.QuadParams()


def test_params_validation():
    with pytest.raises(ValueError):
        sim.QuadParams(m=-1.0)
    with pytest.raises(ValueError):
        sim.Disturbance(payload_mass=-0.1)


def test_mixer_equal_thrusts():
    f, tau = sim.mixer(np.full(4, 1.7), P)
    assert f == pytest.approx(6.8)
    np.testing.assert_allclose(tau, 0.0, atol=1e-15)


def test_mixer_opposite_patterns():
    _, ta = sim.mixer(np.array([0.0, 1.0, 0.0, 1.0]), P)
    _, tb = sim.mixer(np.array([1.0, 0.0, 1.0, 0.0]), P)
    assert ta[0] == pytest.approx(-tb[0]) and ta[0] != 0
    # with the printed sign pattern both yaw torques vanish (0 == -0)
    assert ta[2] == pytest.approx(-tb[2], abs=1e-15)
    assert ta[1] == pytest.approx(-tb[1], abs=1e-15)


def test_mixer_hover_and_inverse():
    f, tau = sim.mixer(np.full(4, 2.4525), P)
    assert f == pytest.approx(9.81)
    u = np.random.default_rng(0).uniform(0, 6, (20, 4))
    f, tau = sim.mixer(u, P)
    np.testing.assert_allclose(sim.inverse_mixer(f, tau, P), u, atol=1e-12)


def test_hover_balance():
    x = st.make_state(p=(0.3, -1, 1))
    d = sim.deriv(x, np.full(4, P.hover_thrust), P)
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


def test_free_fall():
    d = sim.deriv(st.make_state(), np.zeros(4), P)
    np.testing.assert_allclose(d[st.V], [0, 0, -9.81], atol=1e-15)


def test_payload_mass_switch():
    dist = sim.Disturbance(0.35, activation_time=1.0)
    u = np.full(4, P.hover_thrust)
    x = st.make_state()
    assert sim.deriv(x, u, P, dist, t=0.5)[9] == pytest.approx(0.0, abs=1e-12)
    assert sim.deriv(x, u, P, dist, t=1.0)[9] == pytest.approx(9.81 / 1.35 - 9.81)


def test_yaw_torque():
    c = 0.7
    d = sim.deriv(st.make_state(), np.array([0, 0, c, c]), P)
    assert d[12] == pytest.approx(2 * c * P.k_tau / P.inertia[2])
    # the roll and pitch rows cancel on this pattern
    assert d[10] == pytest.approx(0.0, abs=1e-12)
    assert d[11] == pytest.approx(0.0, abs=1e-12)


def test_zero_field_unchanged():
    x = st.make_state(p=(1, 2, 3), q=lg.random_quaternion(np.random.default_rng(1)), v=(1, 0, 0))
    out = sim.integrate(x, np.zeros(4), P, field=lambda xx, t: np.zeros_like(xx))
    np.testing.assert_allclose(out, x, atol=1e-15)


def _tumbling_state():
    return st.make_state(p=(0, 0, 1), q=lg.exp_map(np.array([0.3, -0.2, 0.5])),
                         v=(0.5, -0.3, 0.2), w=(3.0, -2.0, 4.0))


def test_fourth_order_convergence():
    x0 = _tumbling_state()
    u = np.array([2.0, 3.0, 2.6, 2.9])

    def run(sub):
        return sim.integrate(x0, u, P, dt=0.05, substeps=sub)

    ref = run(16 * 8)
    e4 = np.linalg.norm(st.diff(run(4), ref))
    e8 = np.linalg.norm(st.diff(run(8), ref))
    e16 = np.linalg.norm(st.diff(run(16), ref))
    assert 12 < e4 / e8 < 20
    assert 12 < e8 / e16 < 20


def test_angular_momentum_conserved():
    x = _tumbling_state()
    u = np.zeros(4)
    inertia = np.asarray(P.inertia)
    h0 = np.linalg.norm(inertia * x[st.W])
    for k in range(100):
        x = sim.integrate(x, u, P, t=0.01 * k)
    assert abs(np.linalg.norm(inertia * x[st.W]) - h0) < 1e-6 * max(1.0, h0)


def test_unit_norm_over_60s():
    x = np.stack([_tumbling_state()] * 3)
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(6000):
        x = sim.integrate(x, rng.uniform(2.3, 2.6, (3, 4)), P, t=0.01 * k)
        worst = max(worst, np.abs(np.linalg.norm(x[:, st.Q], axis=-1) - 1).max())
    assert worst < 1e-9


def test_translational_invariance():
    x0 = _tumbling_state()
    us = np.random.default_rng(2).uniform(2, 3, (30, 4))
    shift = np.array([1.5, -2.0, 0.7])
    a, b = x0.copy(), x0.copy()
    b[st.P] += shift
    for u in us:
        a = sim.integrate(a, u, P)
        b = sim.integrate(b, u, P)
    np.testing.assert_allclose(b[st.P] - a[st.P], shift, atol=1e-12)
    np.testing.assert_array_equal(a[3:], b[3:])


def test_batch_matches_single():
    rng = np.random.default_rng(4)
    xs = np.stack([st.make_state(q=lg.random_quaternion(rng), w=rng.normal(size=3)) for _ in range(5)])
    us = rng.uniform(1, 4, (5, 4))
    batch = sim.integrate(xs, us, P)
    for i in range(5):
        np.testing.assert_allclose(batch[i], sim.integrate(xs[i], us[i], P), atol=1e-14)


# -- references --------------------------------------------------------------

def test_circle_anchor_and_period():
    r = sim.named_reference("circle")
    np.testing.assert_allclose(r.position(0.0), [1, 0, 1], atol=1e-15)
    t = np.linspace(0, 5, 37)
    np.testing.assert_allclose(r.position(t + 6.0), r.position(t), atol=1e-12)
    np.testing.assert_allclose(sim.reference("circle", 0.0)[:3], [1, 0, 1], atol=1e-15)


def test_lemniscate_extents():
    r = sim.named_reference("lemniscate")
    p = r.position(np.linspace(0, 8, 8001))
    assert np.ptp(p[:, 0]) == pytest.approx(1.5, abs=1e-6)
    assert np.ptp(p[:, 1]) == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(p[:, 2], 1.0)
    np.testing.assert_allclose(p[0], p[-1], atol=1e-12)


@pytest.mark.parametrize("kind", ["circle", "lemniscate", "data"])
def test_reference_derivatives_fd(kind):
    if kind == "data":
        r = sim.Reference("lemniscate", ax=1.2, ay=0.7, period=5.0, center=(0.3, -0.1),
                          phase=0.4, direction=-1.0, z_amp=0.3, z_period=3.0,
                          yaw_amp=0.4, yaw_period=4.0)
    else:
        r = sim.named_reference(kind)
    t = np.linspace(0, 10, 23)
    h = 1e-5
    for order in (0, 1):
        num = (r.derivative(t + h, order) - r.derivative(t - h, order)) / (2 * h)
        np.testing.assert_allclose(num, r.derivative(t, order + 1), atol=1e-7)
    num = (r.yaw(t + h) - r.yaw(t - h)) / (2 * h)
    np.testing.assert_allclose(num, r.yaw_rate(t), atol=1e-7)


def test_reference_states_yaw_zero():
    x = sim.reference("lemniscate", np.linspace(0, 8, 5))
    assert x.shape == (5, 13)
    np.testing.assert_allclose(x[:, st.Q], np.tile(lg.IDENTITY, (5, 1)))
    with pytest.raises(ValueError):
        sim.reference("square", 0.0)


# -- data-collection controller ----------------------------------------------

def test_controller_hover_equilibrium():
    x = st.make_state(p=(0.2, 0.1, 1.0))
    u = sim.datagen_controller(x, x[st.P], np.zeros(3), np.zeros(3), 0.0, P)
    np.testing.assert_allclose(u, P.hover_thrust, atol=1e-12)


def test_controller_clamped():
    x = st.make_state(p=(0, 0, -50.0))
    u = sim.datagen_controller(x, np.array([0, 0, 1.0]), np.zeros(3), np.zeros(3), 0.0, P)
    assert np.all(u <= 6.25) and np.all(u >= 0)
    x = st.make_state(p=(0, 0, 50.0))
    u = sim.datagen_controller(x, np.array([0, 0, 1.0]), np.zeros(3), np.zeros(3), 0.0, P)
    assert np.all(u >= 0)


def test_controller_stabilizes_offset():
    target = np.array([0.0, 0.0, 1.0])
    x = st.make_state(p=target + np.array([0.2 / np.sqrt(3)] * 3))
    for k in range(200):
        u = sim.datagen_controller(x, target, np.zeros(3), np.zeros(3), 0.0, P)
        x = sim.integrate(x, u, P, t=0.01 * k)
    assert np.linalg.norm(x[st.P] - target) < 0.02


def test_simmodel_jacobian_against_rollout():
    model = sim.SimModel()
    x = _tumbling_state()
    u = np.array([2.0, 3.0, 2.6, 2.9])
    a, b = model.linearize(x, u)
    assert a.shape == (12, 12) and b.shape == (12, 4)
    rng = np.random.default_rng(5)
    d = 1e-5 * rng.normal(size=12)
    du = 1e-5 * rng.normal(size=4)
    pred = a @ d + b @ du
    got = st.diff(model.step(st.compose(x, d), u + du), model.step(x, u))
    assert np.linalg.norm(got - pred) < 1e-3 * np.linalg.norm(pred)
    ab, bb = model.linearize(np.stack([x, x]), np.stack([u, u]))
    np.testing.assert_allclose(ab[1], a)


def test_dataset_generation_deterministic():
    cfg = sim.DatagenConfig(n_train=3, n_val=2, n_samples=50, seed=7)
    tr1, va1 = sim.generate_dataset(cfg)
    tr2, va2 = sim.generate_dataset(cfg)
    assert len(tr1) == 3 and len(va1) == 2
    for a, b in zip(tr1 + va1, tr2 + va2):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.controls, b.controls)
    assert np.all(np.isfinite(tr1[0].states))


def test_fast_field_matches_group_form():
    rng = np.random.default_rng(9)
    x = np.stack([st.make_state(p=rng.normal(size=3), q=lg.random_quaternion(rng),
                                v=rng.normal(size=3), w=rng.normal(size=3) * 3) for _ in range(50)])
    u = rng.uniform(0, 6, (50, 4))
    dist = sim.Disturbance(0.35)
    np.testing.assert_allclose(sim.deriv(x, u, P, dist), sim.deriv_reference(x, u, P, dist),
                               atol=1e-12)
