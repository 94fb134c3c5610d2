"""Small fully connected Q-networks in numpy (float64).

Weights are stored input-major (``W[l]`` has shape ``(fan_in, fan_out)``) so a
batch ``X`` of shape ``(B, fan_in)`` maps as ``X @ W + b``.  Hidden layers use
relu or tanh; the output layer is linear.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MLPSpec",
    "ParamSet",
    "GradientSet",
    "AdamState",
    "init_params",
    "forward",
    "backward",
    "adam_step",
    "sgd_step",
    "copy_into_target",
    "save_params",
    "load_params",
    "write_params",
    "read_params",
]

ACTIVATIONS = ("relu", "tanh")
MAGIC = b"FRLMLP1\x00"


@dataclass(frozen=True)
class MLPSpec:
    layer_sizes: tuple
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need >= 2 positive layer sizes, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    @property
    def shapes(self):
        s = self.layer_sizes
        return [(s[i], s[i + 1]) for i in range(len(s) - 1)]


class ParamSet:
    """Weights and biases of one MLP plus a role tag ("online" or "target").

    All parameters live in one contiguous float64 buffer (``data``) in the
    checkpoint order W0, b0, W1, b1, ...; ``weights`` and ``biases`` are views
    into it, so optimizers can update everything with a few vector ops.
    """

    def __init__(self, spec: MLPSpec, weights, biases, role="online"):
        self.spec = spec
        self.role = role
        shapes = spec.shapes
        if len(weights) != len(shapes) or len(biases) != len(shapes):
            raise ValueError("parameter count does not match spec")
        self.data = np.empty(sum(fi * fo + fo for fi, fo in shapes))
        self.weights, self.biases = [], []
        i = 0
        for (fi, fo), w, b in zip(shapes, weights, biases):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError(f"parameter shapes {w.shape}/{b.shape} do not match spec {(fi, fo)}")
            wv = self.data[i : i + fi * fo].reshape(fi, fo)
            i += fi * fo
            bv = self.data[i : i + fo]
            i += fo
            wv[...] = w
            bv[...] = b
            self.weights.append(wv)
            self.biases.append(bv)

    @classmethod
    def zeros(cls, spec, role="online"):
        return cls(spec, [np.zeros(s) for s in spec.shapes], [np.zeros(s[1]) for s in spec.shapes], role)

    def arrays(self):
        """Parameters in layer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self):
        return self.data.copy()

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != self.data.shape:
            raise ValueError(f"expected {self.data.size} parameters, got {vec.size}")
        self.data[...] = vec

    def copy(self, role=None):
        return ParamSet(self.spec, self.weights, self.biases, self.role if role is None else role)


class GradientSet(ParamSet):
    """Gradient arrays shaped like a :class:`ParamSet`."""

    def __init__(self, spec, weights, biases):
        super().__init__(spec, weights, biases, role="gradient")


def init_params(spec: MLPSpec, rng: np.random.Generator, role="online") -> ParamSet:
    """Uniform fan-in initialisation (He-style bound for relu), zero biases."""
    gain = 6.0 if spec.activation == "relu" else 3.0
    weights, biases = [], []
    for fi, fo in spec.shapes:
        bound = np.sqrt(gain / fi)
        weights.append(rng.uniform(-bound, bound, size=(fi, fo)))
        biases.append(np.zeros(fo))
    return ParamSet(spec, weights, biases, role)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _check_input(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.spec.n_in:
        raise ValueError(f"input width {x.shape[-1]} != network input {p.spec.n_in}")
    return x


def forward(p: ParamSet, x) -> np.ndarray:
    """Network output for one input vector or a ``(B, n_in)`` batch."""
    h = _check_input(p, x)
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w + b
        if i < last:
            h = _act(h, p.spec.activation)
    return h


def backward(p: ParamSet, inputs, targets, sample_weights=None, actions=None, huber=None,
             return_outputs=False):
    """Gradient of the weighted mean squared error.

    loss = mean_i  w_i * (y_i - t_i)^2

    With ``actions`` given, ``targets`` is one scalar per sample compared with
    output column ``actions[i]`` (the Q-learning case); otherwise ``targets``
    matches the full output.  ``huber=delta`` swaps the squared error for the
    Huber loss (0.5 e^2 inside delta, linear outside), whose per-sample error
    gradient is bounded by delta.

    Returns ``(GradientSet, loss)``, or ``(GradientSet, loss, outputs)`` with
    ``return_outputs`` so callers can reuse the forward pass.
    """
    x = _check_input(p, np.atleast_2d(inputs))
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("sample weights must be a nonnegative vector, one per sample")
    t = np.asarray(targets, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite targets")

    acts = [x]
    pre = []
    h = x
    last = len(p.weights) - 1
    for i, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ W + b
        pre.append(z)
        h = _act(z, p.spec.activation) if i < last else z
        acts.append(h)
    y = acts[-1]

    if actions is not None:
        idx = np.asarray(actions, dtype=np.intp)
        if t.shape != (n,) or idx.shape != (n,):
            raise ValueError("with actions, targets and actions must be length-B vectors")
        err = np.zeros_like(y)
        err[np.arange(n), idx] = y[np.arange(n), idx] - t
    else:
        t = t.reshape(y.shape) if t.size == y.size else t
        if t.shape != y.shape:
            raise ValueError(f"target shape {t.shape} != output shape {y.shape}")
        err = y - t

    if huber is None:
        per_sample = (err**2).sum(axis=1)
        derr = 2.0 * err
    else:
        a = np.abs(err)
        quad = a <= huber
        per_sample = np.where(quad, 0.5 * err**2, huber * (a - 0.5 * huber)).sum(axis=1)
        derr = np.where(quad, err, huber * np.sign(err))
    loss = float(np.dot(w, per_sample) / n)
    delta = derr * (w / n)[:, None]

    gw = [None] * len(p.weights)
    gb = [None] * len(p.weights)
    for i in range(last, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ p.weights[i].T
            if p.spec.activation == "relu":
                delta = delta * (pre[i - 1] > 0)
            else:
                delta = delta * (1.0 - acts[i] ** 2)
    g = GradientSet(p.spec, gw, gb)
    return (g, loss, y) if return_outputs else (g, loss)


class AdamState:
    """First/second moment buffers and step count for one ParamSet."""

    def __init__(self, p: ParamSet):
        self.m = np.zeros_like(p.data)
        self.v = np.zeros_like(p.data)
        self.t = 0


def adam_step(p, g, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction; returns ``p``."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    ga = g.data
    state.m *= beta1
    state.m += (1.0 - beta1) * ga
    state.v *= beta2
    state.v += (1.0 - beta2) * ga * ga
    p.data -= lr * (state.m / c1) / (np.sqrt(state.v / c2) + eps)
    return p


def sgd_step(p, g, lr=1e-2):
    p.data -= lr * g.data
    return p


def copy_into_target(online: ParamSet, target: ParamSet) -> None:
    if online.spec != target.spec:
        raise ValueError("online and target networks have different specs")
    target.data[...] = online.data


# Checkpoint layout (all little-endian):
#   8 bytes magic "FRLMLP1\0"
#   uint32 n_layers, then n_layers x uint32 layer sizes
#   uint8 activation (0 relu, 1 tanh), uint8 role (0 online, 1 target)
#   float64 parameters in layer order: W0 (row-major, fan_in x fan_out), b0, W1, b1, ...

_ROLES = ("online", "target")


def write_params(stream, p: ParamSet) -> None:
    sizes = p.spec.layer_sizes
    stream.write(MAGIC)
    stream.write(struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes))
    role = _ROLES.index(p.role) if p.role in _ROLES else 0
    stream.write(struct.pack("<BB", ACTIVATIONS.index(p.spec.activation), role))
    stream.write(p.flat().astype("<f8").tobytes())


def read_params(stream) -> ParamSet:
    if stream.read(8) != MAGIC:
        raise ValueError("not an MLP parameter block (bad magic)")
    (n,) = struct.unpack("<I", stream.read(4))
    sizes = struct.unpack(f"<{n}I", stream.read(4 * n))
    act, role = struct.unpack("<BB", stream.read(2))
    spec = MLPSpec(sizes, ACTIVATIONS[act])
    p = ParamSet.zeros(spec, _ROLES[role])
    data = stream.read(8 * p.data.size)
    if len(data) != 8 * p.data.size:
        raise ValueError("truncated parameter block")
    p.set_flat(np.frombuffer(data, dtype="<f8"))
    return p


def save_params(path, p: ParamSet) -> None:
    with open(path, "wb") as f:
        write_params(f, p)


def load_params(path) -> ParamSet:
    with open(path, "rb") as f:
        return read_params(f)


def params_to_bytes(p: ParamSet) -> bytes:
    buf = io.BytesIO()
    write_params(buf, p)
    return buf.getvalue()
