"""Adam with bias correction, one state per network."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import List

import numpy as np

from .net import GradientSet, Network, ShapeError

log = logging.getLogger(__name__)

_MAGIC = b"MGO1"
_VERSION = 1

# (beta1, beta2) presets
SYNTHETIC_BETAS = (0.5, 0.9)
CONDITIONAL_BETAS = (0.0, 0.9)


class NonFiniteGradient(ArithmeticError):
    pass


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    learning_rate: float
    beta1: float = SYNTHETIC_BETAS[0]
    beta2: float = SYNTHETIC_BETAS[1]
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_params(cls, params: List[np.ndarray], learning_rate: float, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   learning_rate, **kw)

    @classmethod
    def for_network(cls, net: Network, learning_rate: float, **kw) -> "AdamState":
        return cls.for_params(net.params(), learning_rate, **kw)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1): {self.beta1}, {self.beta2}")
        if self.eps <= 0 or self.learning_rate < 0:
            raise ValueError("eps must be positive and learning_rate non-negative")


def adam_update(state: AdamState, params: List[np.ndarray], grads: List[np.ndarray]) -> List[np.ndarray]:
    """One Adam step on a flat parameter list; mutates ``state``, returns new params.

    Non-finite gradients raise :class:`NonFiniteGradient` before anything
    changes, so the caller can skip the step.
    """
    if len(grads) != len(params) or len(params) != len(state.m) or any(
            g.shape != p.shape or m.shape != p.shape for g, p, m in zip(grads, params, state.m)):
        raise ShapeError("gradients, parameters and optimizer state are not congruent")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteGradient("non-finite gradient entries; step skipped")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    new = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        new.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
    return new


def adam_step(state: AdamState, net: Network, grads: GradientSet) -> Network:
    grads.check_congruent(net)
    return net.with_params(adam_update(state, net.params(), grads.params()))


# ---------------------------------------------------------------- checkpoints

def dumps(state: AdamState) -> bytes:
    out = [_MAGIC, struct.pack("<IIQ", _VERSION, len(state.m), state.t),
           struct.pack("<dddd", state.learning_rate, state.beta1, state.beta2, state.eps)]
    for m, v in zip(state.m, state.v):
        m2 = np.atleast_2d(m) if m.ndim == 1 else m
        rows, cols = (1, m.shape[0]) if m.ndim == 1 else m.shape
        out.append(struct.pack("<III", m.ndim, rows, cols))
        out.append(np.ascontiguousarray(m2, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(out)


def loads(data: bytes) -> AdamState:
    if data[:4] != _MAGIC:
        raise ValueError("not an optimizer checkpoint (bad magic)")
    version, count, t = struct.unpack_from("<IIQ", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported optimizer checkpoint version {version}")
    off = 20
    lr, b1, b2, eps = struct.unpack_from("<dddd", data, off)
    off += 32
    ms, vs = [], []
    for _ in range(count):
        ndim, rows, cols = struct.unpack_from("<III", data, off)
        off += 12
        shape = (cols,) if ndim == 1 else (rows, cols)
        size = rows * cols
        ms.append(np.frombuffer(data, "<f8", size, off).reshape(shape).astype(np.float64))
        off += 8 * size
        vs.append(np.frombuffer(data, "<f8", size, off).reshape(shape).astype(np.float64))
        off += 8 * size
    return AdamState(ms, vs, lr, b1, b2, eps, t)
