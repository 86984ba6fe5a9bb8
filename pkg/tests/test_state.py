import numpy as np

from flyadapt import liegroup as lg
from flyadapt import state as st


def random_states(rng, n):
    return np.hstack([rng.standard_normal((n, 3)), lg.random_quaternion(rng, n),
                      rng.standard_normal((n, 3)), rng.standard_normal((n, 3))])


def random_increments(rng, n, max_angle=np.pi - 0.1):
    d = rng.standard_normal((n, 12))
    ang = d[:, st.TQ]
    norms = np.linalg.norm(ang, axis=1, keepdims=True)
    d[:, st.TQ] = ang / norms * rng.uniform(0, max_angle, size=(n, 1))
    return d


def test_compose_zero_and_translation(rng):
    x = random_states(rng, 1)[0]
    np.testing.assert_allclose(st.compose(x, np.zeros(12)), x, atol=1e-15)
    hover = st.State.hover().to_vector()
    d = np.zeros(12)
    d[2] = 0.01
    out = st.compose(hover, d)
    expected = hover.copy()
    expected[2] += 0.01
    np.testing.assert_array_equal(out, expected)


def test_compose_diff_roundtrip(rng):
    x = random_states(rng, 10_000)
    y = random_states(rng, 10_000)
    back = st.compose(x, st.diff(y, x))
    np.testing.assert_allclose(back[:, st.P], y[:, st.P], atol=1e-12)
    # quaternions agree up to sign
    dots = np.abs(np.sum(back[:, st.Q] * y[:, st.Q], axis=1))
    assert np.max(1 - dots) < 1e-12


def test_diff_compose_roundtrip(rng):
    x = random_states(rng, 10_000)
    d = random_increments(rng, 10_000)
    err = np.abs(st.diff(st.compose(x, d), x) - d)
    assert err.max() < 1e-9


def test_diff_identities(rng):
    x = random_states(rng, 200)
    np.testing.assert_array_equal(st.diff(x, x), np.zeros((200, 12)))
    y = random_states(rng, 200)
    y_flip = y.copy()
    y_flip[:, st.Q] *= -1
    np.testing.assert_allclose(st.diff(y_flip, x), st.diff(y, x), atol=1e-13)
    x_flip = x.copy()
    x_flip[:, st.Q] *= -1
    np.testing.assert_allclose(st.diff(y, x_flip), st.diff(y, x), atol=1e-13)


def test_compose_stays_on_manifold(rng):
    x = random_states(rng, 1000)
    d = rng.standard_normal((1000, 12)) * 5
    q = st.compose(x, d)[:, st.Q]
    assert np.max(np.abs(np.linalg.norm(q, axis=1) - 1)) < 1e-9
    assert np.all(q[:, 0] >= 0)


def test_diff_jacobian_matches_finite_differences(rng):
    a = random_states(rng, 1)[0]
    b = st.compose(a, 0.8 * random_increments(rng, 1, 2.0)[0])
    e0 = st.diff(a, b)
    jac = st.diff_jacobian(e0)
    h = 1e-6
    num = np.zeros((12, 12))
    for i in range(12):
        d = np.zeros(12)
        d[i] = h
        num[:, i] = (st.diff(st.compose(a, d), b) - st.diff(st.compose(a, -d), b)) / (2 * h)
    np.testing.assert_allclose(num, jac, atol=1e-8)


def test_perturb_state(rng):
    x = random_states(rng, 1)[0]
    np.testing.assert_array_equal(st.perturb_state(x, 0.0, rng), x)
    xs = np.broadcast_to(x, (100_000, 13))
    out = st.perturb_state(xs, 0.05, rng)
    assert np.max(np.abs(np.linalg.norm(out[:, st.Q], axis=1) - 1)) < 1e-9
    std = np.std(out[:, st.P] - x[st.P], axis=0)
    np.testing.assert_allclose(std, 0.05, rtol=0.02)


def test_state_vector_roundtrip(rng):
    x = random_states(rng, 1)[0]
    s = st.State.from_vector(x)
    np.testing.assert_array_equal(s.to_vector(), x)


def test_trajectory_file_roundtrip(rng, tmp_path):
    traj = st.Trajectory(random_states(rng, 6), rng.uniform(0, 6, (5, 4)), 0.01)
    path = tmp_path / "traj_0000.csv"
    traj.save(path, {"config_hash": "abc"})
    back = st.Trajectory.load(path)
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.controls, traj.controls)
    assert back.dt == 0.01
    assert len(st.load_trajectories(tmp_path)) == 1
