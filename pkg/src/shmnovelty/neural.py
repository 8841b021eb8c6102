"""Dense networks in plain numpy: forward, reverse-mode gradients and Adam.

Weights are stored ``(out, in)`` so a layer computes ``x @ W.T + b`` on a
row-major batch.  Everything is float64.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidParameter, InvalidState, TrainingDiverged

ACTIVATIONS = ("linear", "leaky_relu", "sigmoid", "scaled_sigmoid")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

CHECKPOINT_MAGIC = b"SHMMLP\x00\x01"
CHECKPOINT_VERSION = 1

_versions = itertools.count(1)


def _sigmoid(z):
    # tanh form avoids overflow warnings for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "linear"
    param: float = 0.0  # leaky slope, or output scale for scaled_sigmoid

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.activation not in _ACT_CODE:
            raise InvalidParameter(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise InvalidParameter("bias length must equal the weight matrix row count")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def activate(self, z):
        if self.activation == "linear":
            return z
        if self.activation == "leaky_relu":
            return np.where(z > 0, z, self.param * z)
        if self.activation == "sigmoid":
            return _sigmoid(z)
        return self.param * _sigmoid(z)

    def activation_grad(self, z, a):
        """d activation / d z, given pre-activation z and output a."""
        if self.activation == "linear":
            return np.ones_like(z)
        if self.activation == "leaky_relu":
            return np.where(z > 0, 1.0, self.param)
        if self.activation == "sigmoid":
            return a * (1.0 - a)
        s = a / self.param
        return self.param * s * (1.0 - s)


@dataclass
class Mlp:
    layers: list[DenseLayer]
    version: int = field(default_factory=lambda: next(_versions), compare=False)

    def __post_init__(self):
        if not self.layers:
            raise InvalidParameter("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise InvalidParameter(f"layer widths do not chain: {a.n_out} -> {b.n_in}")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def sizes(self) -> list[int]:
        return [self.n_in] + [layer.n_out for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.biases]
        return out

    def touch(self) -> None:
        """Mark parameters as changed; forward caches taken earlier become stale."""
        self.version = next(_versions)

    def __call__(self, x):
        return forward(self, x)[0]

    def __eq__(self, other):
        if not isinstance(other, Mlp) or len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and a.param == b.param
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.biases, b.biases)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list  # input to every layer
    preacts: list
    outputs: list


def forward(net: Mlp, batch) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != net.n_in:
        raise InvalidParameter(f"batch width {x.shape[-1]} != network input {net.n_in}")
    cache = ForwardCache(id(net), net.version, [], [], [])
    for layer in net.layers:
        z = x @ layer.weights.T + layer.biases
        a = layer.activate(z)
        cache.inputs.append(x)
        cache.preacts.append(z)
        cache.outputs.append(a)
        x = a
    return x, cache


def backward(net: Mlp, cache: ForwardCache, loss_gradient,
             input_grad: bool = True) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Reverse-mode pass.

    Returns ``(grads, input_grad)`` where ``grads`` follows ``net.params()``
    ordering (W0, b0, W1, b1, ...) and ``input_grad`` is d loss / d input
    (``None`` when not requested).
    """
    if cache.net_id != id(net) or cache.version != net.version or len(cache.inputs) != len(net.layers):
        raise InvalidState("forward cache does not belong to this network state")
    delta = np.asarray(loss_gradient, dtype=np.float64)
    if delta.shape != cache.outputs[-1].shape:
        raise InvalidParameter(f"loss gradient shape {delta.shape} != output shape {cache.outputs[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        dz = delta * layer.activation_grad(cache.preacts[i], cache.outputs[i])
        grads[2 * i] = dz.T @ cache.inputs[i]
        grads[2 * i + 1] = dz.sum(axis=0)
        delta = dz @ layer.weights if (i > 0 or input_grad) else None
    return grads, delta


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """Bias-corrected Adam, applied in place to ``params`` (also returned)."""
    if len(params) != len(grads):
        raise InvalidParameter("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged("non-finite gradient")
    state.t += 1
    step = state.lr / (1.0 - state.beta1 ** state.t)
    root_c2 = np.sqrt(1.0 - state.beta2 ** state.t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise InvalidParameter(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        denom = np.sqrt(v)
        denom /= root_c2
        denom += state.eps
        p -= step * m / denom
    return params


def init_mlp(sizes, activations, seed=0) -> Mlp:
    """Glorot-uniform weights, zero biases.

    ``activations`` has one entry per layer, each a name or ``(name, param)``.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    sizes = list(sizes)
    if len(sizes) < 2 or len(activations) != len(sizes) - 1:
        raise InvalidParameter("need len(activations) == len(sizes) - 1 >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        name, param = (act, 0.0) if isinstance(act, str) else act
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        layers.append(DenseLayer(w, np.zeros(n_out), name, float(param)))
    return Mlp(layers)


def mlp_to_bytes(net: Mlp) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<QQ", CHECKPOINT_VERSION, len(net.layers))]
    for layer in net.layers:
        parts.append(struct.pack("<QQQd", layer.n_out, layer.n_in, _ACT_CODE[layer.activation], layer.param))
        parts.append(layer.weights.astype("<f8").tobytes(order="C"))
        parts.append(layer.biases.astype("<f8").tobytes())
    return b"".join(parts)


def mlp_from_bytes(buf: bytes) -> Mlp:
    view = memoryview(buf)
    if len(view) < 24 or bytes(view[:8]) != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    version, count = struct.unpack_from("<QQ", view, 8)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    off = 24
    layers = []
    for _ in range(count):
        if off + 32 > len(view):
            raise FormatError("truncated layer header", off)
        n_out, n_in, code, param = struct.unpack_from("<QQQd", view, off)
        if code >= len(ACTIVATIONS):
            raise FormatError(f"unknown activation code {code}", off + 16)
        off += 32
        nbytes = 8 * (n_out * n_in + n_out)
        if off + nbytes > len(view):
            raise FormatError("truncated layer payload", off)
        w = np.frombuffer(view, "<f8", n_out * n_in, off).reshape(n_out, n_in).astype(np.float64)
        b = np.frombuffer(view, "<f8", n_out, off + 8 * n_out * n_in).astype(np.float64)
        off += nbytes
        layers.append(DenseLayer(w, b, ACTIVATIONS[code], param))
    if off != len(view):
        raise FormatError("trailing bytes after last layer", off)
    return Mlp(layers)
