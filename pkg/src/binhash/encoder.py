"""Feedforward encoder from feature space to K code channels.

Hidden layers are affine + ReLU; the final ("hash") layer is affine followed
by ``tanh(beta * z)``. All training math runs in float64 so the analytic
gradients can be validated against central finite differences at tight
tolerances. The hash layer usually trains from scratch while earlier layers
merely adapt, so it carries its own learning-rate multiplier (10x by default).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codes import MAX_CODE_BITS, scaled_tanh
from .errors import NumericFailureError, StaleTraceError

CHECKPOINT_MAGIC = b"HNCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sII")  # magic, version, layer count


@dataclass(frozen=True)
class EncoderConfig:
    hidden: tuple[int, ...] = (256,)
    code_bits: int = 16
    hash_lr_multiplier: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        if not 1 <= self.code_bits <= MAX_CODE_BITS:
            raise ValueError(f"code_bits must be in [1, {MAX_CODE_BITS}], got {self.code_bits}")
        if not self.hash_lr_multiplier > 0:
            raise ValueError("hash_lr_multiplier must be positive")


@dataclass(eq=False)
class EncoderParams:
    """All weights and biases, plus per-layer learning-rate multipliers.

    ``revision`` counts in-place updates; forward traces remember the revision
    they were computed under so stale traces are rejected in backward.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    lr_multipliers: tuple[float, ...]
    revision: int = 0

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.lr_multipliers)):
            raise ValueError("weights, biases and lr_multipliers must align per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not chain")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k}: input width {w.shape[0]} does not chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericFailureError(f"layer {k}: non-finite parameters")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def code_bits(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.lr_multipliers,
            self.revision,
        )

    def tobytes(self) -> bytes:
        """Concatenated little-endian float64 bytes of all parameters."""
        return b"".join(a.astype("<f8").tobytes() for a in [*self.weights, *self.biases])


@dataclass
class ForwardTrace:
    """Cached intermediate values of one forward pass over a batch."""

    inputs: np.ndarray
    hidden_pre: list[np.ndarray]
    hidden_act: list[np.ndarray]
    code_pre: np.ndarray
    outputs: np.ndarray
    beta: float
    params_revision: int


def init_params(input_dim: int, config: EncoderConfig, rng) -> EncoderParams:
    """Glorot-uniform initialization over widths [input_dim, *hidden, code_bits]."""
    if input_dim < 1:
        raise ValueError("input_dim must be positive")
    rng = np.random.default_rng(rng)
    widths = (input_dim, *config.hidden, config.code_bits)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    multipliers = (1.0,) * (len(weights) - 1) + (config.hash_lr_multiplier,)
    return EncoderParams(weights, biases, multipliers)


def _check_inputs(params: EncoderParams, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"inputs must be a (batch, dim) array, got shape {x.shape}")
    if x.shape[1] != params.input_dim:
        raise ValueError(f"input dim {x.shape[1]} does not match encoder dim {params.input_dim}")
    if not np.isfinite(x).all():
        raise ValueError("inputs contain non-finite entries")
    return x


def forward(params: EncoderParams, beta: float, inputs) -> tuple[np.ndarray, ForwardTrace]:
    """Run the encoder over a batch; returns continuous codes and the trace."""
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0:
        raise ValueError(f"beta must be a positive finite scalar, got {beta!r}")
    x = _check_inputs(params, inputs)
    act = x
    hidden_pre, hidden_act = [], []
    for k in range(len(params.weights) - 1):
        pre = act @ params.weights[k] + params.biases[k]
        if not np.isfinite(pre).all():
            raise NumericFailureError(f"non-finite activation in layer {k}")
        act = np.maximum(pre, 0.0)
        hidden_pre.append(pre)
        hidden_act.append(act)
    code_pre = act @ params.weights[-1] + params.biases[-1]
    if not np.isfinite(code_pre).all():
        raise NumericFailureError(f"non-finite activation in layer {len(params.weights) - 1}")
    outputs = scaled_tanh(code_pre, beta)
    trace = ForwardTrace(x, hidden_pre, hidden_act, code_pre, outputs, beta, params.revision)
    return outputs, trace


def hash_preactivation(params: EncoderParams, inputs) -> np.ndarray:
    """Pre-activation of the hash layer (z); its signs are the binary codes."""
    x = _check_inputs(params, inputs)
    act = x
    for k in range(len(params.weights) - 1):
        act = np.maximum(act @ params.weights[k] + params.biases[k], 0.0)
    z = act @ params.weights[-1] + params.biases[-1]
    if not np.isfinite(z).all():
        raise NumericFailureError("non-finite hash-layer pre-activation")
    return z


def backward(
    trace: ForwardTrace, params: EncoderParams, beta: float, upstream
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact gradients of the loss w.r.t. every parameter.

    ``upstream`` is d(loss)/d(outputs) for the traced batch. The tanh link
    contributes ``beta * (1 - outputs**2)``; hidden ReLUs gate on their
    pre-activation being strictly positive.
    """
    if trace.params_revision != params.revision:
        raise StaleTraceError(
            f"trace was computed at revision {trace.params_revision}, "
            f"parameters are now at {params.revision}"
        )
    if float(beta) != trace.beta:
        raise ValueError(f"beta {beta} does not match the traced beta {trace.beta}")
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != trace.outputs.shape:
        raise ValueError(f"upstream shape {up.shape} != outputs shape {trace.outputs.shape}")
    if not np.isfinite(up).all():
        raise ValueError("upstream gradient contains non-finite entries")

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.weights)
    delta = up * (trace.beta * (1.0 - trace.outputs**2))
    for k in range(len(params.weights) - 1, -1, -1):
        prev_act = trace.hidden_act[k - 1] if k > 0 else trace.inputs
        grads[k] = (prev_act.T @ delta, delta.sum(axis=0))
        if k > 0:
            delta = (delta @ params.weights[k].T) * (trace.hidden_pre[k - 1] > 0.0)
    return grads


def zero_velocities(params: EncoderParams) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(params.weights, params.biases)]


def sgd_step(
    params: EncoderParams,
    grads,
    velocities,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
) -> EncoderParams:
    """One momentum-SGD update, in place.

    ``v <- momentum * v + grad + weight_decay * param`` then
    ``param <- param - lr * layer_multiplier * v``.
    """
    if not lr > 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    if weight_decay < 0:
        raise ValueError("weight_decay must be non-negative")
    if len(grads) != len(params.weights) or len(velocities) != len(params.weights):
        raise ValueError("grads and velocities must have one entry per layer")
    for k, ((dw, db), (vw, vb)) in enumerate(zip(grads, velocities)):
        w, b = params.weights[k], params.biases[k]
        if dw.shape != w.shape or db.shape != b.shape:
            raise ValueError(f"layer {k}: gradient shapes do not match parameters")
        step = lr * params.lr_multipliers[k]
        vw *= momentum
        vw += dw + weight_decay * w
        w -= step * vw
        vb *= momentum
        vb += db + weight_decay * b
        b -= step * vb
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NumericFailureError(f"non-finite parameters after update in layer {k}")
    params.revision += 1
    return params


@dataclass
class CheckpointState:
    """Everything needed to continue training exactly where a run stopped."""

    params: EncoderParams
    velocities: list[tuple[np.ndarray, np.ndarray]]
    beta: float
    completed_stage: int


def save_checkpoint(path, params: EncoderParams, velocities, beta: float, completed_stage: int) -> None:
    """Versioned binary checkpoint; float64 little-endian, round-trips bit-exactly."""
    n_layers = len(params.weights)
    widths = params.widths
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, n_layers))
        fh.write(struct.pack(f"<{n_layers + 1}I", *widths))
        fh.write(struct.pack(f"<{n_layers}d", *params.lr_multipliers))
        fh.write(struct.pack("<di", float(beta), int(completed_stage)))
        for arrays in (params.weights, params.biases):
            for a in arrays:
                fh.write(a.astype("<f8").tobytes())
        for vw, vb in velocities:
            fh.write(vw.astype("<f8").tobytes())
            fh.write(vb.astype("<f8").tobytes())


def load_checkpoint(path) -> CheckpointState:
    with open(path, "rb") as fh:
        header = fh.read(_CKPT_HEADER.size)
        if len(header) != _CKPT_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, n_layers = _CKPT_HEADER.unpack(header)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        widths = struct.unpack(f"<{n_layers + 1}I", fh.read(4 * (n_layers + 1)))
        multipliers = struct.unpack(f"<{n_layers}d", fh.read(8 * n_layers))
        beta, completed_stage = struct.unpack("<di", fh.read(12))

        def read_array(shape):
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated parameter data")
            return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)

        shapes = list(zip(widths[:-1], widths[1:]))
        weights = [read_array(s) for s in shapes]
        biases = [read_array((s[1],)) for s in shapes]
        velocities = [(read_array(s), read_array((s[1],))) for s in shapes]
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after checkpoint payload")
    params = EncoderParams(weights, biases, multipliers)
    return CheckpointState(params, velocities, float(beta), int(completed_stage))
