"""
Dense networks with hand-written backpropagation.

Parameters live in flat ``Dict[str, np.ndarray]`` tables so a single Adam
state can cover every tensor of a model. A network with prefix ``net`` owns
the keys ``net.dense{i}.weight`` (out x in), ``net.dense{i}.bias`` and, when
layer normalization is on, ``net.norm{i}.gain`` / ``net.norm{i}.shift`` for
each hidden layer ``i``. Layer norm sits after the affine map and before the
activation. All arithmetic is float64.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from vecplan.exceptions import CheckpointError, ShapeMismatch

Params = Dict[str, np.ndarray]

RELU: str = "relu"
TANH: str = "tanh"
SIGMOID: str = "sigmoid"
LINEAR: str = "linear"

LN_EPSILON: float = 1e-5
PROB_CLAMP: float = 1e-7

CHECKPOINT_MAGIC: bytes = b"VECPLAN-TENSORS\n"
CHECKPOINT_VERSION: int = 1


def as_rng(seed: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_uniform(shape, range_bound: float, seed: Union[int, np.random.Generator]) -> np.ndarray:
    """I.i.d. uniform entries in [-range_bound, range_bound]."""
    if range_bound <= 0:
        raise ValueError("range_bound must be positive")
    return as_rng(seed).uniform(-range_bound, range_bound, size=shape).astype(np.float64)


@dataclass(frozen=True)
class MLPSpec:
    input_size: int
    hidden_sizes: Tuple[int, ...]
    output_size: int
    layer_norm: bool = True
    hidden_activation: str = RELU
    output_activation: str = LINEAR

    @property
    def layer_sizes(self) -> List[Tuple[int, int]]:
        sizes = [self.input_size, *self.hidden_sizes, self.output_size]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def num_layers(self) -> int:
        return len(self.hidden_sizes) + 1


def init_mlp(
    spec: MLPSpec, prefix: str, seed: Union[int, np.random.Generator], bound: Optional[float] = None
) -> Params:
    """
    Initialize an MLP's parameters.

    Weights are uniform in ±`bound`, or ±sqrt(6 / (fan_in + fan_out)) per
    layer when `bound` is None. Biases and shifts start at zero, gains at one.
    """
    rng = as_rng(seed)
    params: Params = {}
    for i, (n_in, n_out) in enumerate(spec.layer_sizes):
        b = bound if bound is not None else float(np.sqrt(6.0 / (n_in + n_out)))
        params[f"{prefix}.dense{i}.weight"] = init_uniform((n_out, n_in), b, rng)
        params[f"{prefix}.dense{i}.bias"] = np.zeros(n_out)
        if spec.layer_norm and i < len(spec.hidden_sizes):
            params[f"{prefix}.norm{i}.gain"] = np.ones(n_out)
            params[f"{prefix}.norm{i}.shift"] = np.zeros(n_out)
    return params


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic function, kept inside [PROB_CLAMP, 1 - PROB_CLAMP]."""
    return np.clip(0.5 * (1.0 + np.tanh(0.5 * z)), PROB_CLAMP, 1.0 - PROB_CLAMP)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == RELU:
        return np.maximum(z, 0.0)
    if name == TANH:
        return np.tanh(z)
    if name == SIGMOID:
        return sigmoid(z)
    if name == LINEAR:
        return z
    raise ValueError(f"Unknown activation '{name}'")


def _activate_backward(name: str, z: np.ndarray, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if name == RELU:
        return grad * (z > 0.0)
    if name == TANH:
        return grad * (1.0 - a * a)
    if name == SIGMOID:
        return grad * a * (1.0 - a)
    return grad


def layer_norm(x: np.ndarray, gain: np.ndarray, shift: np.ndarray, epsilon: float = LN_EPSILON):
    """Row-wise layer normalization; returns (output, (normalized, inv_std))."""
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + epsilon)
    normalized = centered * inv_std
    return normalized * gain + shift, (normalized, inv_std)


def layer_norm_backward(grad: np.ndarray, gain: np.ndarray, cache):
    normalized, inv_std = cache
    n = normalized.shape[-1]
    d_norm = grad * gain
    d_x = (inv_std / n) * (
        n * d_norm
        - d_norm.sum(axis=-1, keepdims=True)
        - normalized * (d_norm * normalized).sum(axis=-1, keepdims=True)
    )
    d_gain = (grad * normalized).sum(axis=0)
    d_shift = grad.sum(axis=0)
    return d_x, d_gain, d_shift


@dataclass
class _LayerCache:
    inputs: np.ndarray
    pre_norm: np.ndarray
    pre_act: np.ndarray
    outputs: np.ndarray
    norm: Optional[tuple] = None


@dataclass
class MLPCache:
    layers: List[_LayerCache]
    squeezed: bool


def forward_mlp(spec: MLPSpec, params: Params, prefix: str, x: np.ndarray) -> Tuple[np.ndarray, MLPCache]:
    """
    Evaluate the network on a vector or on a batch of row vectors.

    Raises
    ------
    ShapeMismatch
        If the trailing dimension of `x` is not ``spec.input_size``.
    """
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_size:
        raise ShapeMismatch(
            f"Network '{prefix}' expects inputs of width {spec.input_size}, got shape {x.shape}"
        )

    caches: List[_LayerCache] = []
    h = x
    last = spec.num_layers - 1
    for i in range(spec.num_layers):
        z = h @ params[f"{prefix}.dense{i}.weight"].T + params[f"{prefix}.dense{i}.bias"]
        norm_cache = None
        pre_act = z
        if i < last:
            if spec.layer_norm:
                pre_act, norm_cache = layer_norm(
                    z, params[f"{prefix}.norm{i}.gain"], params[f"{prefix}.norm{i}.shift"]
                )
            a = _activate(spec.hidden_activation, pre_act)
        else:
            a = _activate(spec.output_activation, pre_act)
        caches.append(_LayerCache(h, z, pre_act, a, norm_cache))
        h = a

    out = h[0] if squeezed else h
    return out, MLPCache(caches, squeezed)


def backward_mlp(
    spec: MLPSpec, params: Params, prefix: str, cache: MLPCache, grad_out: np.ndarray
) -> Tuple[Params, np.ndarray]:
    """Gradients of a scalar loss w.r.t. the parameters and the input."""
    grad = np.asarray(grad_out, dtype=np.float64)
    if cache.squeezed:
        grad = grad[None, :]

    grads: Params = {}
    last = spec.num_layers - 1
    for i in range(last, -1, -1):
        layer = cache.layers[i]
        activation = spec.output_activation if i == last else spec.hidden_activation
        grad = _activate_backward(activation, layer.pre_act, layer.outputs, grad)
        if layer.norm is not None:
            grad, d_gain, d_shift = layer_norm_backward(
                grad, params[f"{prefix}.norm{i}.gain"], layer.norm
            )
            grads[f"{prefix}.norm{i}.gain"] = d_gain
            grads[f"{prefix}.norm{i}.shift"] = d_shift
        grads[f"{prefix}.dense{i}.weight"] = grad.T @ layer.inputs
        grads[f"{prefix}.dense{i}.bias"] = grad.sum(axis=0)
        grad = grad @ params[f"{prefix}.dense{i}.weight"]

    return grads, (grad[0] if cache.squeezed else grad)


def _bce_inputs(probabilities, targets, mask) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = np.asarray(probabilities, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if not (p.shape == t.shape == m.shape):
        raise ShapeMismatch(f"bce_loss shapes differ: {p.shape}, {t.shape}, {m.shape}")
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP), t, m


def bce_terms(probabilities: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """
    Per-entry cross-entropy terms, zero where mask is 0.

    Each term depends only on its own probability, target and mask bit.
    """
    pc, t, m = _bce_inputs(probabilities, targets, mask)
    return -m * (t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))


def bce_loss(probabilities: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Masked binary cross-entropy, averaged over the masked entries.

    The loss is ``bce_terms(...).sum() / max(1, mask.sum())``, so dropping an
    entry from the mask leaves every other term as it was and only changes
    the normalizer. Probabilities are clamped to [1e-7, 1 - 1e-7] before
    taking logs; the gradient is evaluated at the clamped values and is zero
    where mask is 0.
    """
    pc, t, m = _bce_inputs(probabilities, targets, mask)
    denom = max(1.0, float(m.sum()))
    loss = float(bce_terms(pc, t, m).sum()) / denom
    grad = -m * (t / pc - (1.0 - t) / (1.0 - pc)) / denom
    return loss, grad


def add_grads(total: Params, grads: Params) -> Params:
    for name, g in grads.items():
        if name in total:
            total[name] = total[name] + g
        else:
            total[name] = g.copy()
    return total


def scale_grads(grads: Params, factor: float) -> Params:
    return {name: g * factor for name, g in grads.items()}


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Params = field(default_factory=dict)
    second_moment: Params = field(default_factory=dict)


def adam_step(state: AdamState, params: Params, grads: Params) -> Tuple[Params, AdamState]:
    """
    One bias-corrected Adam update, applied in place to `params`.

    Parameters without an entry in `grads` are treated as having a zero
    gradient. Returns the same (mutated) params and state objects.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        elif g.shape != value.shape:
            raise ShapeMismatch(f"Gradient for '{name}' has shape {g.shape}, expected {value.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        value -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of the scalar `f` w.r.t. `x`, perturbed in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


# ------------------------------------------------------------ checkpoints


def save_tensors(path: Union[str, Path], tensors: Params, meta: Dict[str, Any]) -> None:
    """
    Write named float64 tensors and a JSON metadata block.

    Layout: magic line, 8-byte little-endian header length, UTF-8 JSON header
    (sorted keys), then each tensor's little-endian bytes in header order.
    Identical inputs give identical bytes.
    """
    entries = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "dtype": "<f8", "meta": meta, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for name in sorted(tensors):
            f.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())


def load_tensors(path: Union[str, Path]) -> Tuple[Params, Dict[str, Any]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a tensor checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    try:
        header = json.loads(raw[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    pos += header_len
    tensors: Params = {}
    for entry in header["tensors"]:
        start = pos + entry["offset"]
        chunk = raw[start : start + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise CheckpointError(f"{path}: tensor '{entry['name']}' is truncated")
        tensors[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(entry["shape"]).copy()
    return tensors, header["meta"]
