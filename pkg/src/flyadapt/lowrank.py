"""Rank-p truncated SVD adapters ``W + U diag(S) P V^T``."""

from dataclasses import dataclass

import numpy as np


class AdapterConfigError(ValueError):
    pass


def _round_robin(n):
    """Pairings of ``n`` (even) indices so every pair meets once per sweep."""
    idx = list(range(n))
    rounds = []
    for _ in range(n - 1):
        rounds.append((np.array(idx[: n // 2]), np.array(idx[n // 2:][::-1])))
        idx = [idx[0]] + [idx[-1]] + idx[1:-1]
    return rounds


def jacobi_svd(a, tol=1e-15, max_sweeps=60):
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Disjoint column pairs are rotated together in round-robin order.
    Returns ``U (m, k), S (k,), V (n, k)`` with ``k = min(m, n)`` and ``S``
    descending. Each singular pair is sign-fixed so the largest-magnitude
    entry of every ``U`` column is positive.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[0] < a.shape[1]:
        v, s, u = _jacobi_tall(a.T, tol, max_sweeps)
    else:
        u, s, v = _jacobi_tall(a, tol, max_sweeps)
    for k in range(len(s)):
        if u[np.argmax(np.abs(u[:, k])), k] < 0:
            u[:, k] *= -1.0
            v[:, k] *= -1.0
    return u, s, v


def _jacobi_tall(a, tol, max_sweeps):
    m, n = a.shape
    # pad to an even column count with a zero column (never rotates)
    n_pad = n + (n % 2)
    work = np.zeros((m, n_pad))
    work[:, :n] = a
    vecs = np.eye(n_pad)
    rounds = _round_robin(n_pad) if n_pad > 1 else []
    for _ in range(max_sweeps):
        rotated = False
        for i, j in rounds:
            ci, cj = work[:, i], work[:, j]
            alpha = np.einsum("ij,ij->j", ci, ci)
            beta = np.einsum("ij,ij->j", cj, cj)
            gamma = np.einsum("ij,ij->j", ci, cj)
            act = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not act.any():
                continue
            rotated = True
            g = np.where(act, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(act, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            work[:, i], work[:, j] = c * ci - s * cj, s * ci + c * cj
            vi, vj = vecs[:, i], vecs[:, j]
            vecs[:, i], vecs[:, j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            break
    work, vecs = work[:, :n], vecs[:n, :n]
    sing = np.linalg.norm(work, axis=0)
    order = np.argsort(-sing, kind="stable")
    sing, work, vecs = sing[order], work[:, order], vecs[:, order]
    u = np.zeros((m, n))
    floor = max(m, n) * np.finfo(float).eps * (sing[0] if n else 0.0)
    for k in range(n):
        if sing[k] > floor:
            u[:, k] = work[:, k] / sing[k]
        else:
            # complete the basis for (numerically) zero singular values
            sing[k] = 0.0
            for e in np.eye(m):
                cand = e - u[:, :k] @ (u[:, :k].T @ e)
                if np.linalg.norm(cand) > 1e-6:
                    u[:, k] = cand / np.linalg.norm(cand)
                    break
    return u, sing, vecs


@dataclass
class LayerAdapter:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    P: np.ndarray

    @property
    def rank(self):
        return len(self.S)

    def delta(self):
        return (self.U * self.S) @ self.P @ self.V.T

    def effective_weight(self, w):
        return w + self.delta()

    def with_core(self, core):
        return LayerAdapter(self.U, self.S, self.V, np.asarray(core, dtype=float))

    @classmethod
    def from_weight(cls, w, p):
        w = np.asarray(w, dtype=float)
        if not 1 <= p <= min(w.shape):
            raise AdapterConfigError(f"rank {p} outside [1, {min(w.shape)}] for shape {w.shape}")
        u, s, v = jacobi_svd(w)
        return cls(u[:, :p].copy(), s[:p].copy(), v[:, :p].copy(), np.zeros((p, p)))


def build_adapter(params, p):
    """Per-layer rank-``p`` adapters of every weight matrix, cores at zero."""
    if not 1 <= p <= min(min(w.shape) for w in params.weights):
        raise AdapterConfigError(f"rank {p} out of range for this architecture")
    return [LayerAdapter.from_weight(w, p) for w in params.weights]


def effective_weight(frozen_w, adapter):
    return adapter.effective_weight(frozen_w)


def n_adaptable(adapters):
    return sum(a.P.size for a in adapters)


def flatten(adapters):
    return np.concatenate([a.P.ravel() for a in adapters])


def unflatten(theta, template):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n_adaptable(template),):
        raise ValueError(f"adapter vector length {theta.shape} != {n_adaptable(template)}")
    out, start = [], 0
    for a in template:
        size = a.P.size
        out.append(a.with_core(theta[start:start + size].reshape(a.P.shape)))
        start += size
    return out


def adapters_to_dict(adapters):
    return {"format_version": 1,
            "layers": [{"U": a.U.tolist(), "S": a.S.tolist(), "V": a.V.tolist(),
                        "P": a.P.tolist()} for a in adapters]}


def adapters_from_dict(d):
    if d.get("format_version") != 1:
        raise ValueError("unsupported adapter format")
    return [LayerAdapter(np.array(l["U"], float), np.array(l["S"], float),
                         np.array(l["V"], float), np.array(l["P"], float).reshape(len(l["S"]), -1))
            for l in d["layers"]]
