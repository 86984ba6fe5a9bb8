"""Offline pre-training with a multi-step rollout loss.

Gradients are computed by hand: the rollout is unrolled and the tangent
adjoint is swept backwards through the compose, the network and the
state-to-input map.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import liegroup as lg
from . import net
from . import state as st
from .dynamics import _carry_terms, input_to_tangent, net_input


class TrainingDiverged(RuntimeError):
    pass


class LossNotFinite(RuntimeError):
    pass


@dataclass
class Dataset:
    trajectories: list
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "validation"):
            raise ValueError(f"unknown split {self.split!r}")
        dts = {t.dt for t in self.trajectories}
        if len(dts) > 1:
            raise ValueError(f"mixed sampling periods {sorted(dts)}")

    @property
    def dt(self):
        return self.trajectories[0].dt if self.trajectories else None

    def __len__(self):
        return len(self.trajectories)

    @classmethod
    def load(cls, directory, split="train"):
        return cls(st.load_trajectories(directory), split)

    def save(self, directory, header_extra=None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i, traj in enumerate(self.trajectories):
            traj.save(directory / f"traj_{i:05d}.csv", header_extra)


@dataclass
class Windows:
    """Stacked windows: ``x0 (N, 13)``, ``us (N, T, 4)``, ``xs (N, T, 13)``."""
    x0: np.ndarray
    us: np.ndarray
    xs: np.ndarray

    def __len__(self):
        return len(self.x0)

    @property
    def horizon(self):
        return self.us.shape[1]

    def subset(self, idx):
        return Windows(self.x0[idx], self.us[idx], self.xs[idx])


def _canonical_states(states):
    out = np.array(states, dtype=float)
    out[..., st.Q] = lg.canonicalize(out[..., st.Q])
    return out


def window(ds, horizon):
    """Consecutive disjoint windows of ``horizon`` controls, remainder dropped.

    Quaternions are mapped to the ``w >= 0`` hemisphere first.
    """
    if horizon < 1:
        raise ValueError("horizon must be positive")
    trajs = ds.trajectories if isinstance(ds, Dataset) else ds
    x0, us, xs = [], [], []
    for traj in trajs:
        states = _canonical_states(traj.states)
        for i in range(len(traj) // horizon):
            a, b = i * horizon, (i + 1) * horizon
            x0.append(states[a])
            us.append(traj.controls[a:b])
            xs.append(states[a + 1:b + 1])
    if not x0:
        return Windows(np.zeros((0, st.STATE_DIM)), np.zeros((0, horizon, st.CONTROL_DIM)),
                       np.zeros((0, horizon, st.STATE_DIM)))
    return Windows(np.stack(x0), np.stack(us), np.stack(xs))


def one_step_increments(ds):
    incs = []
    trajs = ds.trajectories if isinstance(ds, Dataset) else ds
    for traj in trajs:
        states = _canonical_states(traj.states)
        incs.append(st.diff(states[1:], states[:-1]))
    return np.concatenate(incs)


def fit_norm_stats(ds, v_max=5.0, w_max=10.0, u_max=6.25, floor=1e-6):
    incs = one_step_increments(ds)
    std = np.maximum(incs.std(axis=0), floor)
    return net.NormStats(v_max, w_max, u_max, incs.mean(axis=0), std)


def fit_loss_weights(ds, floor=1e-6):
    """Diagonal inverse variance of one-step tangent increments."""
    var = one_step_increments(ds).var(axis=0)
    return np.diag(1.0 / np.maximum(var, floor))


@dataclass
class TrainConfig:
    horizon: int = 10
    epochs: int = 2000
    batch_size: int = 512
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    sigma: float = 0.01
    weight_decay: float = 0.0
    hidden: tuple = net.HIDDEN
    seed: int = 0
    # None -> fit from the training split
    q_diag: tuple = None

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.sigma < 0 or self.weight_decay < 0:
            raise ValueError("sigma and weight_decay must be nonnegative")


# -- loss and gradient ------------------------------------------------------

def _rollout_cache(params, stats, x0, us):
    """Forward rollout keeping everything the reverse sweep needs."""
    n_steps = us.shape[1]
    x = x0
    cache = []
    preds = np.empty((len(x0), n_steps, st.STATE_DIM))
    for k in range(n_steps):
        z = net_input(x, us[:, k])
        delta, acts = net.forward_cache(params, stats, z)
        cache.append((x, delta, acts))
        x = st.compose(x, delta)
        preds[:, k] = x
    return preds, cache


def batch_loss(params, stats, win, q_weights, x0=None):
    """Per-window loss ``sum_k e_k^T Q e_k`` (vector over windows)."""
    x0 = win.x0 if x0 is None else x0
    preds, _ = _rollout_cache(params, stats, x0, win.us)
    e = st.diff(preds, win.xs)
    per = np.einsum("nki,ij,nkj->n", e, q_weights, e)
    bad = ~np.isfinite(per)
    if bad.any():
        raise LossNotFinite(f"non-finite loss in window {int(np.flatnonzero(bad)[0])}")
    return per


def loss(params, stats, win, q_weights, x0=None):
    """Mean rollout loss over the windows in ``win``."""
    return float(batch_loss(params, stats, win, q_weights, x0).mean())


def grad_loss(params, stats, win, q_weights, x0=None):
    """``(loss, grad_weights, grad_biases)`` for the batch-mean loss."""
    x0 = win.x0 if x0 is None else x0
    n = len(x0)
    preds, cache = _rollout_cache(params, stats, x0, win.us)
    e = st.diff(preds, win.xs)
    per = np.einsum("nki,ij,nkj->n", e, q_weights, e)
    if not np.all(np.isfinite(per)):
        raise LossNotFinite(f"non-finite loss in window {int(np.flatnonzero(~np.isfinite(per))[0])}")
    # d loss / d tangent of each predicted state
    direct = 2.0 * np.einsum("nkji,jl,nkl->nki", st.diff_jacobian(e), q_weights, e)
    gw = [np.zeros_like(w) for w in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    lam = direct[:, -1]
    for k in range(len(cache) - 1, -1, -1):
        x, delta, acts = cache[k]
        carry, gain = _carry_terms(delta)
        g_out = np.einsum("nji,nj->ni", gain, lam)
        w_k, b_k, gz = net.backprop(params, stats, acts, g_out)
        for l in range(len(gw)):
            gw[l] += w_k[l]
            gb[l] += b_k[l]
        if k == 0:
            break
        lam = (direct[:, k - 1] + np.einsum("nji,nj->ni", carry, lam)
               + np.einsum("nji,nj->ni", input_to_tangent(x[:, st.Q]), gz))
    return float(per.mean()), [g / n for g in gw], [g / n for g in gb]


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(state, params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """Decoupled-weight-decay Adam. Returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and moment lists differ in length")
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_p.append(p - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def cosine_lr(epoch, n_epochs, lr_start, lr_end):
    if n_epochs <= 1:
        return lr_start
    c = np.cos(np.pi * epoch / (n_epochs - 1))
    return float(lr_end + 0.5 * (lr_start - lr_end) * (1.0 + c))


# -- driver -----------------------------------------------------------------

@dataclass
class TrainResult:
    params: net.MlpParams
    stats: net.NormStats
    q_weights: np.ndarray
    log: list = field(default_factory=list)
    initial_val_loss: float = float("nan")


def train(train_ds, val_ds, cfg, stats=None, progress=None):
    """Fits the network; ``log`` rows are ``(epoch, lr, train_loss, val_loss)``.

    ``initial_val_loss`` is the validation loss of the untrained network.
    """
    if len(train_ds) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    stats = fit_norm_stats(train_ds) if stats is None else stats
    q_weights = (fit_loss_weights(train_ds) if cfg.q_diag is None
                 else np.diag(np.asarray(cfg.q_diag, dtype=float)))
    tr = window(train_ds, cfg.horizon)
    va = window(val_ds, cfg.horizon) if val_ds is not None and len(val_ds) else None
    if len(tr) == 0:
        raise ValueError("no training windows; trajectories shorter than the horizon")
    params = net.init_params(rng, cfg.hidden)
    flat = params.weights + params.biases
    n_w = len(params.weights)
    opt = AdamState.zeros_like(flat)
    log = []
    val0 = loss(params, stats, va, q_weights) if va is not None else float("nan")
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end)
        order = rng.permutation(len(tr))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = tr.subset(order[start:start + cfg.batch_size])
            x0 = st.perturb_state(batch.x0, cfg.sigma, rng)
            try:
                value, gw, gb = grad_loss(params, stats, batch, q_weights, x0)
            except (LossNotFinite, FloatingPointError) as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
            total += value * len(batch)
            flat, opt = adam_step(opt, flat, gw + gb, lr, weight_decay=cfg.weight_decay)
            params = net.MlpParams(flat[:n_w], flat[n_w:], params.activation)
        train_loss = total / len(tr)
        if not np.isfinite(train_loss):
            raise TrainingDiverged(f"epoch {epoch}: training loss is not finite")
        try:
            val_loss = loss(params, stats, va, q_weights) if va is not None else float("nan")
        except LossNotFinite as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        log.append((epoch, lr, train_loss, val_loss))
        if progress is not None:
            progress(epoch, lr, train_loss, val_loss)
    return TrainResult(params, stats, q_weights, log, val0)


def write_log(path, log, header_extra=None):
    with open(path, "w", newline="") as fh:
        for key, value in (header_extra or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "val_loss"])
        for epoch, lr, tl, vl in log:
            writer.writerow([epoch, repr(lr), repr(tl), repr(vl)])


def read_log(path):
    rows = []
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    for row in csv.DictReader(lines):
        rows.append((int(row["epoch"]), float(row["lr"]), float(row["train_loss"]),
                     float(row["val_loss"])))
    return rows
