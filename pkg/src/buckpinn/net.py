"""Fully-connected estimator/controller network with hand-written backpropagation.

Input: the 12-channel measurement/feedback set. Output (n = horizon):

    [v_1, i_1, ..., v_n, i_n | u_1..u_n | d_1..d_n | log(C/C_N), log(L/L_N)]

State, duty and disturbance channels are affine-decoded with training-split statistics;
the two parameter channels are decoded as nominal * exp(raw) so estimates stay positive.
Parameters live in one flat vector; per-layer weight (out, in) and bias views point into it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .io_utils import atomic_writer

CHECKPOINT_VERSION = 1
INPUT_CHANNELS = (
    "v_o_del", "v_o", "dv_o", "i_L_del", "i_L", "di_L",
    "y_del", "y", "dy", "d_prev", "C_prev", "L_prev",
)
N_INPUTS = len(INPUT_CHANNELS)


def output_dim(n: int) -> int:
    return 4 * n + 2


def output_channel_names(n: int) -> list[str]:
    names = []
    for j in range(1, n + 1):
        names += [f"v_{j}", f"i_{j}"]
    names += [f"u_{j}" for j in range(1, n + 1)]
    names += [f"d_{j}" for j in range(1, n + 1)]
    return names + ["C", "L"]


def param_count(layer_sizes) -> int:
    return int(sum((a + 1) * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:])))


@dataclass
class Decoded:
    """Physical-unit network outputs for a batch."""

    X: np.ndarray      # (B, n, 2) predicted (v_o, i_L) at k+1..k+n
    U: np.ndarray      # (B, n) duty over each interval
    D: np.ndarray      # (B, n) load current over each interval
    theta: np.ndarray  # (B, 2) (C, L)

    def zeros_like(self) -> "Decoded":
        return Decoded(*(np.zeros_like(a) for a in (self.X, self.U, self.D, self.theta)))

    def __add__(self, other: "Decoded") -> "Decoded":
        return Decoded(self.X + other.X, self.U + other.U, self.D + other.D, self.theta + other.theta)

    def scaled(self, c: float) -> "Decoded":
        return Decoded(self.X * c, self.U * c, self.D * c, self.theta * c)


@dataclass
class Normalization:
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray    # (4n,) for state/duty/disturbance channels
    out_scale: np.ndarray   # (4n,)
    theta_scale: np.ndarray  # (2,) spread of the true C, L in the training split
    out_range: np.ndarray    # (4n+2,) max - min of every target channel, for percentage error

    @classmethod
    def identity(cls, n: int) -> "Normalization":
        return cls(np.zeros(N_INPUTS), np.ones(N_INPUTS), np.zeros(4 * n), np.ones(4 * n),
                   np.ones(2), np.ones(4 * n + 2))

    def x_scale(self, n):
        return self.out_scale[: 2 * n].reshape(n, 2)

    def u_scale(self, n):
        return self.out_scale[2 * n: 3 * n]

    def d_scale(self, n):
        return self.out_scale[3 * n: 4 * n]


def _robust_scale(std, mean, rel=1e-3):
    return np.maximum(std, np.maximum(rel * np.abs(mean), 1e-12))


def fit_normalization(inputs, targets_flat, theta, n: int) -> Normalization:
    """Per-channel mean/scale from the training split only."""
    inputs = np.asarray(inputs, dtype=float)
    targets_flat = np.asarray(targets_flat, dtype=float)
    theta = np.asarray(theta, dtype=float)
    in_mean = inputs.mean(axis=0)
    out_mean = targets_flat.mean(axis=0)
    everything = np.concatenate([targets_flat, theta], axis=1)
    return Normalization(
        in_mean, _robust_scale(inputs.std(axis=0), in_mean),
        out_mean, _robust_scale(targets_flat.std(axis=0), out_mean),
        _robust_scale(theta.std(axis=0), theta.mean(axis=0), rel=1e-2),
        np.maximum(everything.max(axis=0) - everything.min(axis=0), 1e-9),
    )


@dataclass
class NetModel:
    layer_sizes: list[int]
    params: np.ndarray
    norm: Normalization
    horizon: int
    theta_nominal: tuple[float, float] = (1e-3, 2e-3)  # (C_N, L_N)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ValidationError("need at least input and output layers")
        if self.layer_sizes[0] != N_INPUTS or self.layer_sizes[-1] != output_dim(self.horizon):
            raise DimensionMismatch(
                f"layer sizes {self.layer_sizes} incompatible with {N_INPUTS} inputs, horizon {self.horizon}")
        self.params = np.ascontiguousarray(self.params, dtype=float)
        if self.params.shape != (param_count(self.layer_sizes),):
            raise DimensionMismatch("parameter vector length does not match layer sizes")
        self._bind()

    def _bind(self):
        self.weights, self.biases = [], []
        o = 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.params[o: o + a * b].reshape(b, a))
            o += a * b
            self.biases.append(self.params[o: o + b])
            o += b

    @property
    def param_count(self) -> int:
        return self.params.size

    def copy(self) -> "NetModel":
        return NetModel(list(self.layer_sizes), self.params.copy(), self.norm, self.horizon,
                        self.theta_nominal, dict(self.meta))

    def set_params(self, p) -> None:
        self.params[:] = p

    # -- forward / backward ---------------------------------------------------------

    def forward_raw(self, inputs, keep=False):
        """Raw (normalised) outputs (B, 4n+2); with ``keep`` also returns activations for backprop."""
        S = np.atleast_2d(np.asarray(inputs, dtype=float))
        if S.shape[1] != self.layer_sizes[0]:
            raise DimensionMismatch(f"expected {self.layer_sizes[0]} inputs, got {S.shape[1]}")
        h = (S - self.norm.in_mean) / self.norm.in_scale
        acts = [h]
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            h = z if l == last else np.tanh(z)
            acts.append(h)
        return (h, acts) if keep else h

    def decode(self, raw) -> Decoded:
        n = self.horizon
        B = raw.shape[0]
        phys = self.norm.out_mean + self.norm.out_scale * raw[:, : 4 * n]
        theta = np.asarray(self.theta_nominal) * np.exp(raw[:, 4 * n:])
        return Decoded(phys[:, : 2 * n].reshape(B, n, 2), phys[:, 2 * n: 3 * n],
                       phys[:, 3 * n: 4 * n], theta)

    def encode_grad(self, g: Decoded, pred: Decoded):
        """Map dL/d(decoded outputs) to dL/d(raw outputs)."""
        B = g.U.shape[0]
        flat = np.concatenate([g.X.reshape(B, -1), g.U, g.D], axis=1) * self.norm.out_scale
        return np.concatenate([flat, g.theta * pred.theta], axis=1)

    def backward_raw(self, g_raw, acts) -> np.ndarray:
        """Gradient of sum over the batch w.r.t. the flat parameter vector."""
        grads = []
        delta = g_raw
        for l in range(len(self.weights) - 1, -1, -1):
            h_in = acts[l]
            gW = delta.T @ h_in
            gb = delta.sum(axis=0)
            grads.append((gW, gb))
            if l > 0:
                delta = (delta @ self.weights[l]) * (1.0 - acts[l] ** 2)
        flat = []
        for gW, gb in reversed(grads):
            flat += [gW.ravel(), gb]
        return np.concatenate(flat)

    def predict(self, inputs) -> Decoded:
        return self.decode(self.forward_raw(inputs))


def init_net(layer_sizes, horizon: int, norm: Normalization | None = None, seed: int = 0,
             theta_nominal=(1e-3, 2e-3), zero: bool = False) -> NetModel:
    """Xavier-uniform weights, zero biases."""
    if len(layer_sizes) < 2:
        raise ValidationError("need at least input and output layers")
    rng = np.random.default_rng(seed)
    chunks = []
    for a, b in zip(layer_sizes[:-1], layer_sizes[1:]):
        lim = np.sqrt(6.0 / (a + b))
        chunks += [np.zeros(a * b) if zero else rng.uniform(-lim, lim, a * b), np.zeros(b)]
    return NetModel(list(layer_sizes), np.concatenate(chunks),
                    norm or Normalization.identity(horizon), horizon, tuple(theta_nominal))


def forward(net: NetModel, s) -> Decoded:
    """Decoded outputs for one input set (12,) or a batch (B, 12)."""
    return net.predict(s)


# -- checkpoint --------------------------------------------------------------------------

def save_checkpoint(net: NetModel, path) -> None:
    """Text checkpoint; floats are written with repr so the round trip is bit-exact."""
    doc = {
        "format": "buckpinn-net",
        "version": CHECKPOINT_VERSION,
        "layer_sizes": net.layer_sizes,
        "horizon": net.horizon,
        "theta_nominal": list(net.theta_nominal),
        "params": net.params.tolist(),
        "norm": {k: getattr(net.norm, k).tolist() for k in
                 ("in_mean", "in_scale", "out_mean", "out_scale", "theta_scale", "out_range")},
        "meta": net.meta,
    }
    with atomic_writer(path) as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> NetModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "buckpinn-net":
        raise ValidationError(f"{path}: not a network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    norm = Normalization(**{k: np.array(v, dtype=float) for k, v in doc["norm"].items()})
    return NetModel(doc["layer_sizes"], np.array(doc["params"], dtype=float), norm,
                    int(doc["horizon"]), tuple(doc["theta_nominal"]), doc.get("meta", {}))
