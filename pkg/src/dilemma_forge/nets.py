"""Minimal dense ReLU networks with exact, hand-rolled gradients.

Two head types: a numerically stabilized softmax for action policies and a
bounded head r_max * sigmoid(z) for incentive emission.  The only gradient
operations the rest of the package needs are the policy score
grad log pi(a|obs) and vector-Jacobian products of the incentive head, so
those are implemented directly by backpropagation instead of a general tape.

Parameters live in a flat float64 vector with a named-segment layout so they
can be checkpointed as raw bytes plus a JSON sidecar and sliced without
copying.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolation

HEAD_SOFTMAX = "softmax"
HEAD_BOUNDED = "bounded"


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class ParamVector:
    """Flat parameter vector plus the named-segment layout describing it."""

    values: np.ndarray
    layout: tuple[Segment, ...]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = 0
        for seg in self.layout:
            if seg.offset != expected:
                raise ConfigurationError(
                    f"segment {seg.name} at offset {seg.offset}, expected {expected}"
                )
            expected += seg.size
        if self.values.shape != (expected,):
            raise ConfigurationError(
                f"values length {self.values.shape} does not match layout size {expected}"
            )

    @property
    def n_params(self) -> int:
        return self.values.size

    def view(self, name: str) -> np.ndarray:
        """Reshaped view (not a copy) of one named segment."""
        for seg in self.layout:
            if seg.name == name:
                return self.values[seg.offset : seg.offset + seg.size].reshape(seg.shape)
        raise KeyError(name)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)


@dataclass(frozen=True)
class NetConfig:
    """Architecture of one dense network."""

    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    head: str = HEAD_SOFTMAX
    r_max: float = 0.0
    activation: str = "relu"

    def __post_init__(self) -> None:
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"all layer dims must be >= 1, got {dims}")
        if self.head not in (HEAD_SOFTMAX, HEAD_BOUNDED):
            raise ConfigurationError(f"unknown head {self.head!r}")
        if self.head == HEAD_BOUNDED and not self.r_max > 0:
            raise ConfigurationError("bounded head requires r_max > 0")
        if self.activation != "relu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[tuple[int, int], ...]:
        """(out, in) per layer, input to output."""
        dims = (self.input_dim, *self.hidden, self.output_dim)
        return tuple((dims[i + 1], dims[i]) for i in range(len(dims) - 1))


def build_layout(config: NetConfig) -> tuple[Segment, ...]:
    segments = []
    offset = 0
    for i, (out_dim, in_dim) in enumerate(config.layer_dims):
        segments.append(Segment(f"W{i}", offset, (out_dim, in_dim)))
        offset += out_dim * in_dim
        segments.append(Segment(f"b{i}", offset, (out_dim,)))
        offset += out_dim
    return tuple(segments)


def init_params(config: NetConfig, seed: int) -> ParamVector:
    """Fan-in scaled zero-mean normal weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    layout = build_layout(config)
    values = np.zeros(sum(seg.size for seg in layout))
    params = ParamVector(values, layout)
    for i, (out_dim, in_dim) in enumerate(config.layer_dims):
        params.view(f"W{i}")[:] = rng.normal(0.0, 1.0 / math.sqrt(in_dim), (out_dim, in_dim))
    return params


def _weights(config: NetConfig, params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(params.view(f"W{i}"), params.view(f"b{i}")) for i in range(len(config.layer_dims))]


def _forward_cache(config: NetConfig, params: ParamVector, x: np.ndarray):
    """Run the batch through all layers, caching what backprop needs.

    Returns (pre_activations, activations, raw_output); activations[0] is x.
    """
    layers = _weights(config, params)
    acts = [x]
    pres = []
    h = x
    for w, b in layers[:-1]:
        z = h @ w.T + b
        pres.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    w, b = layers[-1]
    return pres, acts, h @ w.T + b


def _backward_sum(config, params, pres, acts, d_out) -> np.ndarray:
    """Gradient of <d_out, raw_output> summed over the batch, as a flat vector."""
    layers = _weights(config, params)
    grad = np.zeros(params.n_params)
    gview = ParamVector(grad, params.layout)
    dh = d_out
    for layer in range(len(layers) - 1, -1, -1):
        gview.view(f"W{layer}")[:] = dh.T @ acts[layer]
        gview.view(f"b{layer}")[:] = dh.sum(axis=0)
        if layer > 0:
            dh = (dh @ layers[layer][0]) * (pres[layer - 1] > 0)
    return grad


def _backward_per_sample(config, params, pres, acts, d_out) -> np.ndarray:
    """Per-sample gradients of <d_out_b, raw_output_b>, shape (B, n_params)."""
    layers = _weights(config, params)
    batch = d_out.shape[0]
    grads = np.zeros((batch, params.n_params))
    dh = d_out
    for layer in range(len(layers) - 1, -1, -1):
        w_seg = next(s for s in params.layout if s.name == f"W{layer}")
        b_seg = next(s for s in params.layout if s.name == f"b{layer}")
        dw = np.einsum("bi,bj->bij", dh, acts[layer])
        grads[:, w_seg.offset : w_seg.offset + w_seg.size] = dw.reshape(batch, -1)
        grads[:, b_seg.offset : b_seg.offset + b_seg.size] = dh
        if layer > 0:
            dh = (dh @ layers[layer][0]) * (pres[layer - 1] > 0)
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_input(config: NetConfig, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != config.input_dim:
        raise ContractViolation(
            f"input dim {x.shape[-1]} does not match config input_dim {config.input_dim}"
        )
    return x


def policy_forward(config: NetConfig, params: ParamVector, obs: np.ndarray) -> np.ndarray:
    """Action distribution for a single observation."""
    return policy_forward_batch(config, params, _check_input(config, obs)[None, :])[0]


def policy_forward_batch(config: NetConfig, params: ParamVector, obs: np.ndarray) -> np.ndarray:
    _, _, logits = _forward_cache(config, params, _check_input(config, obs))
    return softmax(logits)


def bounded_forward_batch(config: NetConfig, params: ParamVector, x: np.ndarray) -> np.ndarray:
    _, _, raw = _forward_cache(config, params, _check_input(config, x))
    return config.r_max * sigmoid(raw)


def incentive_input(
    obs: np.ndarray, actions_others: tuple[int, ...], n_actions: int
) -> np.ndarray:
    """Incentive-head input: giver observation + one-hot of each other agent's action."""
    onehots = np.zeros(len(actions_others) * n_actions)
    for k, a in enumerate(actions_others):
        onehots[k * n_actions + a] = 1.0
    return np.concatenate([np.asarray(obs, dtype=np.float64), onehots])


def incentive_forward(
    config: NetConfig,
    params: ParamVector,
    obs_giver: np.ndarray,
    actions_others: tuple[int, ...],
    n_actions: int,
) -> np.ndarray:
    """Incentive per recipient, each in (0, r_max)."""
    x = incentive_input(obs_giver, actions_others, n_actions)
    return bounded_forward_batch(config, params, x[None, :])[0]


def score(config: NetConfig, params: ParamVector, obs: np.ndarray, action: int) -> ParamVector:
    """grad_params log pi(action | obs) via backprop through ReLU and softmax."""
    if not (0 <= action < config.output_dim):
        raise ContractViolation(f"action {action} out of range")
    flat = score_batch(config, params, _check_input(config, obs)[None, :], np.array([action]))
    return ParamVector(flat[0], params.layout)


def score_batch(
    config: NetConfig, params: ParamVector, obs: np.ndarray, actions: np.ndarray
) -> np.ndarray:
    """Per-sample score vectors grad log pi(a_b | obs_b), shape (B, n_params)."""
    obs = _check_input(config, obs)
    pres, acts, logits = _forward_cache(config, params, obs)
    probs = softmax(logits)
    d_out = -probs
    d_out[np.arange(len(actions)), np.asarray(actions)] += 1.0
    return _backward_per_sample(config, params, pres, acts, d_out)


def incentive_jacobian_vjp(
    config: NetConfig,
    params: ParamVector,
    obs_giver: np.ndarray,
    actions_others: tuple[int, ...],
    n_actions: int,
    cotangent: np.ndarray,
) -> ParamVector:
    """grad_params <incentive_forward(params, .), cotangent>."""
    x = incentive_input(obs_giver, actions_others, n_actions)
    flat = bounded_vjp_sum(config, params, x[None, :], np.asarray(cotangent)[None, :])
    return ParamVector(flat, params.layout)


def bounded_vjp_sum(
    config: NetConfig, params: ParamVector, x: np.ndarray, cotangents: np.ndarray
) -> np.ndarray:
    """Sum over the batch of VJPs through the bounded head, as a flat vector."""
    x = _check_input(config, x)
    cotangents = np.asarray(cotangents, dtype=np.float64)
    if cotangents.shape != (x.shape[0], config.output_dim):
        raise ContractViolation(
            f"cotangent shape {cotangents.shape} does not match "
            f"({x.shape[0]}, {config.output_dim})"
        )
    pres, acts, raw = _forward_cache(config, params, x)
    s = sigmoid(raw)
    d_out = cotangents * config.r_max * s * (1.0 - s)
    return _backward_sum(config, params, pres, acts, d_out)


def save_params(params: ParamVector, stem: str | Path) -> None:
    """Write <stem>.bin (little-endian float64) and <stem>.json (layout sidecar)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".bin").write_bytes(params.values.astype("<f8").tobytes())
    sidecar = {
        "dtype": "<f8",
        "length": params.n_params,
        "segments": [
            {"name": s.name, "offset": s.offset, "shape": list(s.shape)}
            for s in params.layout
        ],
    }
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_params(stem: str | Path) -> ParamVector:
    stem = Path(stem)
    sidecar = json.loads(stem.with_suffix(".json").read_text())
    values = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8").copy()
    layout = tuple(
        Segment(s["name"], s["offset"], tuple(s["shape"])) for s in sidecar["segments"]
    )
    return ParamVector(values, layout)
