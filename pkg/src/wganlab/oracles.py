"""Independent checks used by the test-suite and the ``oracle`` subcommand.

Nothing here shares code with the paths it verifies: the matrix square root
is Denman-Beavers rather than an eigendecomposition, gradients are central
finite differences, and the accuracy bound is checked by enumeration.
"""

from __future__ import annotations

from typing import Callable, List

import numpy as np

from . import net as nn
from .metrics import DiscreteDistributionPair, brute_force_tv_and_optacc, classifier_accuracy


def denman_beavers_sqrtm(a: np.ndarray, iters: int = 100, tol: float = 1e-14) -> np.ndarray:
    y = np.array(a, dtype=np.float64)
    z = np.eye(a.shape[0])
    for _ in range(iters):
        y_next = 0.5 * (y + np.linalg.inv(z))
        z = 0.5 * (z + np.linalg.inv(y))
        done = np.max(np.abs(y_next - y)) <= tol * max(1.0, np.max(np.abs(y_next)))
        y = y_next
        if done:
            break
    return y


def frechet_distance_db(m1, c1, m2, c2) -> float:
    """Frechet distance with ``(C1 C2)^{1/2}`` taken by Denman-Beavers directly."""
    diff = np.asarray(m1) - np.asarray(m2)
    root = denman_beavers_sqrtm(c1 @ c2)
    return float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * np.trace(root))


def random_spd(dim: int, rng: np.random.Generator, jitter: float = 0.1) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    return a @ a.T / dim + jitter * np.eye(dim)


def central_difference(f: Callable[[], float], arrays: List[np.ndarray], step: float = 1e-5) -> List[np.ndarray]:
    """Central differences of ``f()`` w.r.t. every entry of ``arrays`` (perturbed in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Largest entrywise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor), initial=0.0))


def kink_margin(net: nn.Network, x: np.ndarray) -> float:
    """Smallest absolute hidden pre-activation: distance of ``x`` from a kink."""
    _, _, pre = nn.forward_cache(net, x)
    hidden = pre[:-1]
    return float(min(np.min(np.abs(a)) for a in hidden)) if hidden else np.inf


def random_smooth_case(rng: np.random.Generator, max_width: int = 16, max_layers: int = 5,
                       n: int = 4, margin: float = 1e-3):
    """A random scalar-output net and batch whose pre-activations stay clear of kinks."""
    while True:
        layers = int(rng.integers(2, max_layers + 1))
        width = int(rng.integers(2, max_width + 1))
        d = int(rng.integers(1, 6))
        spec = nn.NetworkSpec(d, 1, layers, width, init_seed=int(rng.integers(2**63)))
        net = nn.glorot_init(spec)
        net = net.with_params([p + 0.1 * rng.standard_normal(p.shape) for p in net.params()])
        x = rng.standard_normal((n, d))
        if kink_margin(net, x) > margin:
            return net, x


def gradient_check(rng: np.random.Generator, lambda_gp: float = 10.0, step: float = 1e-5) -> float:
    """Worst relative error over output and penalty gradients for one random case."""
    net, x = random_smooth_case(rng)
    cot = rng.standard_normal((x.shape[0], 1))
    params = [p.copy() for p in net.params()]

    def probe():
        return float(np.sum(cot * nn.forward(net.with_params(params), x)))

    def penalty():
        return nn.gradient_penalty_with_grads(net.with_params(params), x, lambda_gp)[0]

    worst = 0.0
    g = nn.param_grads(net, x, cot)
    for a, b in zip(g.params(), central_difference(probe, params, step)):
        worst = max(worst, relative_error(a, b))
    _, gp = nn.gradient_penalty_with_grads(net, x, lambda_gp)
    for a, b in zip(gp.params(), central_difference(penalty, params, step)):
        worst = max(worst, relative_error(a, b))
    return worst


def accuracy_bound_violations(rng: np.random.Generator, pairs: int = 1000, classifiers: int = 100,
                           max_support: int = 6):
    """Counts (bound violations, optimal-rule equality failures) over random discrete pairs."""
    violations = equality_failures = 0
    for _ in range(pairs):
        m = int(rng.integers(1, max_support + 1))
        p = rng.dirichlet(np.ones(m))
        q = rng.dirichlet(np.ones(m))
        p /= p.sum()
        q /= q.sum()
        pair = DiscreteDistributionPair(p, q)
        try:
            tv, opt = brute_force_tv_and_optacc(pair)
        except AssertionError:
            equality_failures += 1
            continue
        rules = rng.integers(0, 2, size=(classifiers, m)).astype(bool)
        for rule in rules:
            if tv < 2.0 * classifier_accuracy(pair, rule) - 1.0 - 1e-12:
                violations += 1
    return violations, equality_failures
