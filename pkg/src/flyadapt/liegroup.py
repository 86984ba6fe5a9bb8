"""Unit-quaternion algebra on the group H1.

Quaternions are stored as ``(w, x, y, z)`` arrays. Every function accepts
arbitrary leading batch dimensions, so ``q`` may be ``(4,)`` or ``(N, 4)``.

Axis-angle vectors are FULL rotation angles: ``exp_map(phi)`` rotates by
``|phi|`` radians and ``log_map`` returns the principal full-angle vector.
"""

import numpy as np

SMALL_ANGLE = 1e-7
# below this angle the Jacobian coefficients switch to their Taylor series
_JAC_SMALL = 1e-3

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# embeds R^3 as pure-imaginary quaternions
H = np.vstack([np.zeros((1, 3)), np.eye(3)])


def skew(v):
    """Batched ``[v]_x`` with ``skew(a) @ b == cross(a, b)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.sqrt(np.sum(q * q, axis=-1, keepdims=True))


def canonicalize(q):
    """Map ``q`` to the upper hemisphere ``w >= 0`` (same rotation)."""
    q = np.asarray(q, dtype=float)
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_left(q):
    """Left product matrix: ``quat_left(a) @ b == a (x) b``."""
    q = np.asarray(q, dtype=float)
    w, v = q[..., 0], q[..., 1:]
    out = np.empty(q.shape[:-1] + (4, 4))
    out[..., 0, 0] = w
    out[..., 0, 1:] = -v
    out[..., 1:, 0] = v
    out[..., 1:, 1:] = w[..., None, None] * np.eye(3) + skew(v)
    return out


def quat_right(q):
    """Right product matrix: ``quat_right(b) @ a == a (x) b``."""
    q = np.asarray(q, dtype=float)
    w, v = q[..., 0], q[..., 1:]
    out = np.empty(q.shape[:-1] + (4, 4))
    out[..., 0, 0] = w
    out[..., 0, 1:] = -v
    out[..., 1:, 0] = v
    out[..., 1:, 1:] = w[..., None, None] * np.eye(3) - skew(v)
    return out


def qmul(a, b):
    """Hamilton product ``a (x) b``, renormalized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.stack([aw * bw - ax * bx - ay * by - az * bz,
                    (aw * bx + ax * bw) + (ay * bz - az * by),
                    (aw * by + ay * bw) + (az * bx - ax * bz),
                    (aw * bz + az * bw) + (ax * by - ay * bx)], axis=-1)
    return normalize(out)


def qmul_left(a, b):
    """``a (x) b`` through the left product matrix of ``a``."""
    return normalize(np.einsum("...ij,...j->...i", quat_left(a), b))


def qmul_right(a, b):
    """``a (x) b`` through the right product matrix of ``b``."""
    return normalize(np.einsum("...ij,...j->...i", quat_right(b), a))


def qinv(q):
    q = np.asarray(q, dtype=float)
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def rotmat(q):
    """Rotation matrix ``H^T [q]_L [q]_R^T H``."""
    m = quat_left(q) @ np.swapaxes(quat_right(q), -1, -2)
    return m[..., 1:, 1:]


def qrotate(q, x):
    """Rotate vector ``x`` by ``q`` (pure-quaternion conjugation)."""
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    w, v = q[..., :1], q[..., 1:]
    t = 2.0 * _cross(v, x)
    return x + w * t + _cross(v, t)


def _cross(a, b):
    # np.cross is slow for the tiny batches used in the control loop
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def qrotate_matrix_form(q, x):
    """Same as :func:`qrotate`, evaluated as ``H^T [q]_L [q]_R^T H x``."""
    x = np.asarray(x, dtype=float)
    m = quat_left(q) @ np.swapaxes(quat_right(q), -1, -2)
    return np.einsum("...ij,...j->...i", m, x @ H.T)[..., 1:]


def exp_map(phi):
    """Axis-angle (full angle) to unit quaternion."""
    phi = np.asarray(phi, dtype=float)
    t2 = np.sum(phi * phi, axis=-1, keepdims=True)
    theta = np.sqrt(t2)
    c = np.cos(0.5 * theta)
    small = theta < SMALL_ANGLE
    if np.any(small):
        safe = np.where(small, 1.0, theta)
        # sin(theta/2)/theta ~ 1/2 - theta^2/48, cos(theta/2) ~ 1 - theta^2/8
        s = np.where(small, 0.5 - t2 / 48.0, np.sin(0.5 * safe) / safe)
        c = np.where(small, 1.0 - t2 / 8.0, c)
    else:
        s = np.sin(0.5 * theta) / theta
    return normalize(np.concatenate([c, s * phi], axis=-1))


def log_map(q):
    """Principal full-angle axis-angle vector of ``q`` (|result| <= pi)."""
    q = canonicalize(q)
    w, v = q[..., :1], q[..., 1:]
    n = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    small = n < SMALL_ANGLE
    if np.any(small):
        safe = np.where(small, 1.0, n)
        scale = np.where(small, 2.0 / np.where(small, w, 1.0),
                         2.0 * np.arctan2(n, w) / safe)
    else:
        scale = 2.0 * np.arctan2(n, w) / n
    return scale * v


def orientation_jacobian(q):
    """``Q(q) = [q]_L H``, so that ``q (x) exp(phi) ~ q + Q(q) phi / 2``."""
    return quat_left(q) @ H


def perturb(q, phi):
    return qmul(q, exp_map(phi))


def _jac_coefficients(phi):
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    small = theta < _JAC_SMALL
    t = np.where(small, 1.0, theta)
    t2 = theta**2
    a = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / t**2)
    b = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / t**3)
    c = np.where(small, 1.0 / 12.0 + t2 / 720.0,
                 1.0 / t**2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)))
    return a, b, c


def right_jacobian(phi):
    """SO(3) right Jacobian: ``exp(phi + d) ~ exp(phi) (x) exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    a, b, _ = _jac_coefficients(phi)
    k = skew(phi)
    return np.eye(3) - a * k + b * (k @ k)


def right_jacobian_inv(phi):
    """Inverse right Jacobian: ``log(exp(phi) (x) exp(d)) ~ phi + Jr^-1(phi) d``."""
    phi = np.asarray(phi, dtype=float)
    _, _, c = _jac_coefficients(phi)
    k = skew(phi)
    return np.eye(3) + 0.5 * k + c * (k @ k)


def yaw_quaternion(yaw):
    """Level attitude with heading ``yaw`` about the world z axis."""
    yaw = np.asarray(yaw, dtype=float)
    out = np.zeros(yaw.shape + (4,))
    out[..., 0] = np.cos(0.5 * yaw)
    out[..., 3] = np.sin(0.5 * yaw)
    return out


def random_quaternion(rng, size=None):
    """Uniformly distributed unit quaternions, canonical hemisphere."""
    shape = (4,) if size is None else (size, 4)
    return canonicalize(normalize(rng.standard_normal(shape)))
