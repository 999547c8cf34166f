"""Affine + LeakyReLU feed-forward networks with hand-written reverse passes.

Row convention throughout: a batch is an ``(n, in_dim)`` array and a layer
computes ``h @ W.T + b`` with ``W`` shaped ``(out, in)``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SLOPE = 0.2
_MAGIC = b"MGL1"
_VERSION = 1


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a network.

    ``num_layers`` counts affine layers the way the experiments do: a
    2-layer network is a single affine map, a 5-layer one has three hidden
    layers of ``hidden_width`` units.
    """

    input_dim: int
    output_dim: int
    num_layers: int = 5
    hidden_width: int = 1024
    leaky_slope: float = DEFAULT_SLOPE
    init_seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"dimensions must be positive: {self}")
        if self.num_layers < 2:
            raise ValueError(f"num_layers must be >= 2, got {self.num_layers}")
        if self.num_layers > 2 and self.hidden_width < 1:
            raise ValueError(f"hidden_width must be positive, got {self.hidden_width}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")

    def widths(self) -> List[int]:
        return [self.input_dim] + [self.hidden_width] * (self.num_layers - 2) + [self.output_dim]


@dataclass
class Network:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    leaky_slope: float = DEFAULT_SLOPE
    spec: Optional[NetworkSpec] = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k} input {w.shape[1]} != previous output {self.weights[k - 1].shape[0]}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_layers(self) -> int:
        # affine layers plus the input layer
        return len(self.weights) + 1

    def copy(self) -> "Network":
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                       self.leaky_slope, self.spec)

    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: List[np.ndarray]) -> "Network":
        return Network(list(params[0::2]), list(params[1::2]), self.leaky_slope, self.spec)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.leaky_slope == other.leaky_slope
                and len(self.weights) == len(other.weights)
                and all(np.array_equal(a, b) for a, b in zip(self.params(), other.params())))


@dataclass
class GradientSet:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "GradientSet":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet([a + b for a, b in zip(self.weights, other.weights)],
                           [a + b for a, b in zip(self.biases, other.biases)])

    def scale(self, c: float) -> "GradientSet":
        return GradientSet([c * w for w in self.weights], [c * b for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def check_congruent(self, net: Network):
        if len(self.weights) != len(net.weights) or any(
                g.shape != p.shape for g, p in zip(self.params(), net.params())):
            raise ShapeError("gradient set does not match network shapes")


def glorot_init(spec: NetworkSpec, rng: Optional[np.random.Generator] = None) -> Network:
    """Glorot-uniform weights, zero biases. Deterministic in ``spec.init_seed``."""
    if rng is None:
        rng = np.random.default_rng(spec.init_seed)
    widths = spec.widths()
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(weights, biases, spec.leaky_slope, spec)


def _check_batch(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected batch of shape (n, {net.input_dim}), got {x.shape}")
    return x


def _leaky(a, slope):
    # valid because 0 < slope < 1
    return np.maximum(a, slope * a)


def _leaky_deriv(a, slope):
    return slope + (1.0 - slope) * (a > 0)


def forward_cache(net: Network, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Forward pass keeping layer inputs ``hs`` and pre-activations ``pre``."""
    h = _check_batch(net, x)
    hs, pre = [h], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = h @ w.T + b
        pre.append(a)
        if k < last:
            h = _leaky(a, net.leaky_slope)
            hs.append(h)
        else:
            h = a
    return h, hs, pre


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    return forward_cache(net, x)[0]


def hidden_features(net: Network, x: np.ndarray) -> np.ndarray:
    """Activations after the last hidden LeakyReLU."""
    if len(net.weights) < 2:
        raise ShapeError("network has no hidden layer")
    return forward_cache(net, x)[1][-1]


def backward(net: Network, hs, pre, out_cot: np.ndarray,
             feature_cot: Optional[np.ndarray] = None,
             need_input: bool = False) -> Tuple[GradientSet, Optional[np.ndarray]]:
    """Reverse pass for ``<out_cot, f(x)>`` (+ ``<feature_cot, features(x)>``).

    Returns parameter gradients and, if asked, the cotangent w.r.t. the input.
    """
    n_aff = len(net.weights)
    gw: List[np.ndarray] = [None] * n_aff
    gb: List[np.ndarray] = [None] * n_aff
    delta = np.asarray(out_cot, dtype=np.float64)
    if delta.shape != pre[-1].shape:
        raise ShapeError(f"cotangent shape {delta.shape} != output shape {pre[-1].shape}")
    for k in range(n_aff - 1, -1, -1):
        gw[k] = delta.T @ hs[k]
        gb[k] = delta.sum(axis=0)
        if k == 0 and not need_input:
            break
        dh = delta @ net.weights[k]
        if k == 0:
            return GradientSet(gw, gb), dh
        if feature_cot is not None and k == n_aff - 1:
            dh = dh + feature_cot
        delta = dh * _leaky_deriv(pre[k - 1], net.leaky_slope)
    return GradientSet(gw, gb), None


def param_grads(net: Network, x: np.ndarray, out_cot: np.ndarray) -> GradientSet:
    """Gradients of ``sum(out_cot * forward(net, x))`` w.r.t. every parameter."""
    _, hs, pre = forward_cache(net, x)
    return backward(net, hs, pre, out_cot)[0]


def input_vjp(net: Network, x: np.ndarray, out_cot: np.ndarray) -> np.ndarray:
    _, hs, pre = forward_cache(net, x)
    return backward(net, hs, pre, out_cot, need_input=True)[1]


def _input_grad_chain(net: Network, pre: List[np.ndarray]):
    """Per-row input gradients of a scalar-output net.

    Also returns ``ts[k]``: the gradient of the output w.r.t. the
    pre-activation of affine layer ``k`` (shape ``(n, out_k)``).
    """
    n = pre[0].shape[0]
    n_aff = len(net.weights)
    ts: List[np.ndarray] = [None] * n_aff
    t = np.ones((n, 1))
    ts[-1] = t
    for k in range(n_aff - 1, 0, -1):
        t = (t @ net.weights[k]) * _leaky_deriv(pre[k - 1], net.leaky_slope)
        ts[k - 1] = t
    return t @ net.weights[0], ts


def input_gradients(net: Network, x: np.ndarray) -> np.ndarray:
    """Row-wise gradient of a scalar-output network w.r.t. its input."""
    if net.output_dim != 1:
        raise ShapeError(f"input gradient needs a scalar output, got {net.output_dim}")
    _, _, pre = forward_cache(net, x)
    return _input_grad_chain(net, pre)[0]


def input_gradient(net: Network, x: np.ndarray) -> np.ndarray:
    return input_gradients(net, np.atleast_2d(x))[0]


def gradient_penalty_with_grads(net: Network, x_hat: np.ndarray, lambda_gp: float,
                                weight: float = 1.0, row_weights: Optional[np.ndarray] = None
                                ) -> Tuple[float, GradientSet]:
    """``lambda * mean((|grad_x D(x_hat)| - 1)^2)`` and its parameter gradient.

    The input gradient is ``W_1^T S_1 W_2^T ... S_{L-1} W_L^T`` with ``S_k``
    the (locally constant) activation-slope diagonals, so the penalty depends
    on the weights only; bias gradients are exactly zero away from kinks.
    For each layer the derivative of ``<u, grad_x D>`` is the outer product of
    the backward chain ``ts[k]`` and the forward tangent chain started at ``u``.

    ``weight`` multiplies both outputs. ``row_weights`` replaces the plain
    mean by a weighted sum over rows (used to fold several mixture pairs into
    one call).
    """
    if net.output_dim != 1:
        raise ShapeError(f"gradient penalty needs a scalar output, got {net.output_dim}")
    _, _, pre = forward_cache(net, x_hat)
    g, ts = _input_grad_chain(net, pre)
    n = g.shape[0]
    rw = np.full(n, 1.0 / n) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    rw = weight * rw
    norms = np.sqrt(np.sum(g * g, axis=1))
    zero = norms == 0.0
    if np.any(zero):
        log.warning("gradient penalty: %d row(s) with zero input-gradient norm", int(zero.sum()))
    penalty = lambda_gp * float(rw @ (norms - 1.0) ** 2)

    safe = np.where(zero, 1.0, norms)
    coef = np.where(zero, 0.0, 2.0 * lambda_gp * rw * (norms - 1.0) / safe)
    q = g * coef[:, None]
    gw: List[np.ndarray] = []
    last = len(net.weights) - 1
    for k, w in enumerate(net.weights):
        gw.append(ts[k].T @ q)
        if k < last:
            q = (q @ w.T) * _leaky_deriv(pre[k], net.leaky_slope)
    gb = [np.zeros_like(b) for b in net.biases]
    return penalty, GradientSet(gw, gb)


def scalar_net(weight: np.ndarray, bias: float = 0.0, slope: float = DEFAULT_SLOPE) -> Network:
    """2-layer critic ``x -> w.x + b``."""
    w = np.asarray(weight, dtype=np.float64).reshape(1, -1)
    return Network([w], [np.array([float(bias)])], slope)


# ---------------------------------------------------------------- checkpoints

def dumps(net: Network) -> bytes:
    out = [_MAGIC, struct.pack("<II", _VERSION, len(net.weights))]
    for w, b in zip(net.weights, net.biases):
        rows, cols = w.shape
        out.append(struct.pack("<II", rows, cols))
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    out.append(struct.pack("<d", net.leaky_slope))
    return b"".join(out)


def loads(data: bytes) -> Network:
    if data[:4] != _MAGIC:
        raise ValueError("not a network checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    weights, biases = [], []
    for _ in range(count):
        rows, cols = struct.unpack_from("<II", data, off)
        off += 8
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=rows, offset=off)
        off += 8 * rows
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    (slope,) = struct.unpack_from("<d", data, off)
    if off + 8 != len(data):
        raise ValueError("trailing bytes in network checkpoint")
    return Network(weights, biases, slope)


def save(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(net))


def load(path) -> Network:
    with open(path, "rb") as fh:
        return loads(fh.read())


def with_spec(net: Network, spec: NetworkSpec) -> Network:
    return replace(net, spec=spec)
