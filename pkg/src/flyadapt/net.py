"""Tanh MLP for the incremental dynamics, with hand-derived derivatives.

Input ``z = (q, v, w, u)`` (14 numbers). Inputs are scaled by physics
limits, hidden layers are ``tanh``, the head is affine and its output is
de-standardized with the dataset increment statistics.

All evaluation functions take an explicit list of weight matrices so the
same code serves the frozen and the low-rank adapted network.
"""

import json
from dataclasses import dataclass, field

import numpy as np

INPUT_DIM = 14
OUTPUT_DIM = 12
HIDDEN = (64, 64, 64)
FORMAT_VERSION = 1


class ModelCorrupt(RuntimeError):
    pass


@dataclass
class NormStats:
    v_max: float = 5.0
    w_max: float = 10.0
    u_max: float = 6.25
    out_mean: np.ndarray = field(default_factory=lambda: np.zeros(OUTPUT_DIM))
    out_std: np.ndarray = field(default_factory=lambda: np.ones(OUTPUT_DIM))

    def __post_init__(self):
        self.out_mean = np.asarray(self.out_mean, dtype=float)
        self.out_std = np.asarray(self.out_std, dtype=float)
        if min(self.v_max, self.w_max, self.u_max) <= 0:
            raise ValueError("physics limits must be positive")
        if self.out_mean.shape != (OUTPUT_DIM,) or self.out_std.shape != (OUTPUT_DIM,):
            raise ValueError("output statistics must be 12-vectors")
        if np.any(self.out_std <= 0):
            raise ValueError("out_std must be strictly positive")

    @property
    def input_scale(self):
        """Per-entry multiplier of the input normalization."""
        half = 0.5 * self.u_max
        return np.concatenate([np.ones(4), np.full(3, 1.0 / self.v_max),
                               np.full(3, 1.0 / self.w_max), np.full(4, 1.0 / half)])

    @property
    def input_offset(self):
        return np.concatenate([np.zeros(10), np.full(4, 0.5 * self.u_max)])

    def to_dict(self):
        return {"v_max": self.v_max, "w_max": self.w_max, "u_max": self.u_max,
                "out_mean": self.out_mean.tolist(), "out_std": self.out_std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class MlpParams:
    weights: list
    biases: list
    # "identity" is only used by tests to linearize the network
    activation: str = "tanh"

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        if self.weights[0].shape[1] != INPUT_DIM or self.weights[-1].shape[0] != OUTPUT_DIM:
            raise ValueError("network must map 14 inputs to 12 outputs")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} vs weight {w.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width mismatch")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelCorrupt(f"layer {i} has non-finite entries")
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)

    def n_parameters(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_params(rng, hidden=HIDDEN):
    """Glorot-uniform weights, zero biases."""
    sizes = (INPUT_DIM,) + tuple(hidden) + (OUTPUT_DIM,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def normalize_input(z, stats):
    z = np.asarray(z, dtype=float)
    return (z - stats.input_offset) * stats.input_scale


def _act(params, h):
    return np.tanh(h) if params.activation == "tanh" else h


def _act_slope(params, a):
    # derivative expressed through the activation output
    return 1.0 - a * a if params.activation == "tanh" else np.ones_like(a)


def forward_cache(params, stats, z, weights=None):
    """Forward pass returning ``(increment, activations)``.

    ``activations[0]`` is the normalized input, ``activations[l]`` the
    output of hidden layer ``l``.
    """
    weights = params.weights if weights is None else weights
    a = normalize_input(z, stats)
    acts = [a]
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, params.biases)):
        h = a @ w.T + b
        if l < last:
            a = _act(params, h)
            acts.append(a)
    out = stats.out_mean + stats.out_std * h
    return out, acts


def forward(params, stats, z, weights=None):
    out, _ = forward_cache(params, stats, z, weights)
    if not np.all(np.isfinite(out)):
        raise ModelCorrupt("network produced non-finite output")
    return out


def _output_sensitivities(params, stats, acts, weights):
    """``G[l] = d(increment)/d(pre-activation of layer l)``, shape (..., 12, m_l)."""
    batch = acts[0].shape[:-1]
    g = np.broadcast_to(np.diag(stats.out_std), batch + (OUTPUT_DIM, OUTPUT_DIM))
    sens = [g]
    for l in range(len(weights) - 1, 0, -1):
        g = (g @ weights[l]) * _act_slope(params, acts[l])[..., None, :]
        sens.append(g)
    return sens[::-1]


def input_jacobian(params, stats, z, weights=None):
    """Closed-form ``d(increment)/dz`` of shape (..., 12, 14)."""
    weights = params.weights if weights is None else weights
    _, acts = forward_cache(params, stats, z, weights)
    g0 = _output_sensitivities(params, stats, acts, weights)[0]
    return (g0 @ weights[0]) * stats.input_scale


def adapted_param_jacobian(params, adapters, stats, z, weights=None):
    """``d(increment)/d(theta)`` for the low-rank cores, shape (..., 12, L*p^2).

    Column order is layer-major, then row-major within each core ``P``.
    ``weights`` defaults to the effective (adapted) weights.
    """
    if weights is None:
        weights = [a.effective_weight(w) for a, w in zip(adapters, params.weights)]
    _, acts = forward_cache(params, stats, z, weights)
    sens = _output_sensitivities(params, stats, acts, weights)
    blocks = []
    for ad, g, a_prev in zip(adapters, sens, acts):
        left = g @ (ad.U * ad.S)                 # (..., 12, p)
        right = a_prev @ ad.V                    # (..., p)
        blk = left[..., :, :, None] * right[..., None, None, :]
        blocks.append(blk.reshape(blk.shape[:-2] + (-1,)))
    return np.concatenate(blocks, axis=-1)


def backprop(params, stats, acts, grad_out, weights=None):
    """Reverse pass for a batch.

    ``grad_out`` is the adjoint of the increment, shape (B, 12). Returns
    ``(grad_weights, grad_biases, grad_z)`` with parameter gradients summed
    over the batch and ``grad_z`` of shape (B, 14) in raw input units.
    """
    weights = params.weights if weights is None else weights
    g = grad_out * stats.out_std
    gw, gb = [None] * len(weights), [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        gw[l] = g.T @ acts[l]
        gb[l] = g.sum(axis=0)
        g = g @ weights[l]
        if l:
            g = g * _act_slope(params, acts[l])
    return gw, gb, g * stats.input_scale


def save_model(path, params, stats, dt, adapters=None, extra=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": {"sizes": [params.weights[0].shape[1]] + [w.shape[0] for w in params.weights],
                         "activation": params.activation},
        "dt": dt,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "norm_stats": stats.to_dict(),
    }
    if adapters is not None:
        from .lowrank import adapters_to_dict
        doc["adapter"] = adapters_to_dict(adapters)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path):
    """Returns ``(params, stats, dt, adapters_or_None, document)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format {doc.get('format_version')}")
    params = MlpParams(doc["weights"], doc["biases"], doc["architecture"]["activation"])
    stats = NormStats.from_dict(doc["norm_stats"])
    adapters = None
    if "adapter" in doc:
        from .lowrank import adapters_from_dict
        adapters = adapters_from_dict(doc["adapter"])
    return params, stats, float(doc["dt"]), adapters, doc
