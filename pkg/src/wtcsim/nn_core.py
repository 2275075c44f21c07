"""Minimal dense-network engine with exact analytic gradients.

Small fully-connected nets in float64 numpy, enough for the feedback
code's encoder/decoder and the mutual-information score networks.  The
smooth GELU activation keeps finite-difference gradient checks clean.
Parameter state is single-writer during training; inference is read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

CHECKPOINT_VERSION = 1

_GELU_SLOPE = 1.702  # sigmoid approximation of the Gaussian CDF


def gelu(x):
    return x * expit(_GELU_SLOPE * x)


def gelu_grad(x):
    s = expit(_GELU_SLOPE * x)
    return s + _GELU_SLOPE * x * s * (1.0 - s)


def _act_forward(tag, pre):
    """Activation value plus an aux term reused by the backward pass."""
    if tag == "linear":
        return pre, None
    if tag == "gelu":
        s = expit(_GELU_SLOPE * pre)
        return pre * s, s
    if tag == "tanh":
        t = np.tanh(pre)
        return t, t
    raise NetError(f"unknown activation {tag!r}")


def _act_grad(tag, pre, aux):
    if tag == "linear":
        return 1.0
    if tag == "gelu":
        return aux + _GELU_SLOPE * pre * aux * (1.0 - aux)
    if tag == "tanh":
        return 1.0 - aux * aux
    raise NetError(f"unknown activation {tag!r}")


_ACTIVATIONS = ("linear", "gelu", "tanh")


class NetError(ValueError):
    pass


@dataclass
class DenseNet:
    """Sequential dense layers: list of (W, b, activation tag)."""

    layers: list

    @property
    def widths(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [W.shape[1] for W, _, _ in self.layers]

    @property
    def num_params(self) -> int:
        return sum(W.size + b.size for W, b, _ in self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b, _ in self.layers:
            out.extend([W, b])
        return out

    def set_params(self, flat: list[np.ndarray]):
        for i in range(len(self.layers)):
            W, b, act = self.layers[i]
            self.layers[i] = (flat[2 * i].reshape(W.shape),
                              flat[2 * i + 1].reshape(b.shape), act)


def init_dense(widths, activations, rng: np.random.Generator) -> DenseNet:
    """Fan-in-scaled uniform initialization: U(-1/sqrt(fan_in), +)."""
    if len(activations) != len(widths) - 1:
        raise NetError("need one activation per layer")
    layers = []
    for d_in, d_out, act in zip(widths[:-1], widths[1:], activations):
        if act not in _ACTIVATIONS:
            raise NetError(f"unknown activation {act!r}")
        limit = 1.0 / np.sqrt(d_in)
        W = rng.uniform(-limit, limit, size=(d_in, d_out))
        b = rng.uniform(-limit, limit, size=d_out)
        layers.append((W, b, act))
    return DenseNet(layers)


def forward(net: DenseNet, x: np.ndarray):
    """Batch forward pass.  Returns (output, cache) with cache consumed by
    backward()."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layers[0][0].shape[0]:
        raise NetError(
            f"input width {x.shape} does not match net input {net.layers[0][0].shape[0]}"
        )
    cache = []
    h = x
    for W, b, act in net.layers:
        pre = h @ W + b
        out, aux = _act_forward(act, pre)
        cache.append((h, pre, aux))
        h = out
    return h, cache


def backward(net: DenseNet, upstream: np.ndarray, cache):
    """Exact gradients of the composed map.

    upstream is dL/d(output) with the same shape as the forward output.
    Returns (param_grads aligned with net.params(), input_grad).
    """
    if len(cache) != len(net.layers):
        raise NetError("cache does not match net (stale or wrong forward)")
    grads = [None] * (2 * len(net.layers))
    d = np.asarray(upstream, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        W, b, act = net.layers[i]
        h_in, pre, aux = cache[i]
        if h_in.shape[1] != W.shape[0] or pre.shape != d.shape:
            raise NetError("cache does not match net (stale or wrong forward)")
        dpre = d * _act_grad(act, pre, aux)
        grads[2 * i] = h_in.T @ dpre
        grads[2 * i + 1] = dpre.sum(axis=0)
        d = dpre @ W.T
    return grads, d


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise max-subtracted softmax."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LossStats:
    """Counters for numerically clamped loss terms."""

    clamped: int = 0


def cce_loss(probs: np.ndarray, labels: np.ndarray, stats: LossStats | None = None):
    """Mean negative log-probability of the true class (natural log).

    probs rows must sum to 1 within 1e-6; the returned gradient is with
    respect to the logits that produced probs via softmax.  Probabilities
    below 1e-12 at the true class are clamped and counted.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise NetError("probability rows must sum to 1")
    B = probs.shape[0]
    p_true = probs[np.arange(B), labels]
    n_clamp = int(np.sum(p_true < 1e-12))
    if n_clamp and stats is not None:
        stats.clamped += n_clamp
    loss = float(-np.mean(np.log(np.maximum(p_true, 1e-12))))
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    return loss, dlogits


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    skipped: int = 0


@dataclass
class TrainConfig:
    batch_size: int = 8192
    learning_rate: float = 1e-3
    steps: int = 10_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise NetError("batch size must be >= 1")
        if self.learning_rate <= 0:
            raise NetError("learning rate must be positive")


def optimizer_step(params, grads, state: AdamState, cfg: TrainConfig):
    """Adam update with global-norm gradient clipping before the moments.

    Non-finite gradients skip the step and increment state.skipped.
    Mutates params in place and returns them.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if any(not np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        return params
    if cfg.clip_norm and cfg.clip_norm > 0:
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if total > cfg.clip_norm:
            scale = cfg.clip_norm / total
            grads = [g * scale for g in grads]
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params


def save_net(path, net: DenseNet):
    """Versioned checkpoint; round-trips bitwise (float64 arrays in .npz)."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "widths": net.widths,
        "activations": [act for _, _, act in net.layers],
    }
    arrays = {}
    for i, (W, b, _) in enumerate(net.layers):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_net(path) -> DenseNet:
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    if meta["version"] != CHECKPOINT_VERSION:
        raise NetError(f"unsupported checkpoint version {meta['version']}")
    layers = []
    for i, act in enumerate(meta["activations"]):
        layers.append((data[f"W{i}"], data[f"b{i}"], act))
    return DenseNet(layers)
