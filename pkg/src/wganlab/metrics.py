"""Evaluation metrics for generators trained on synthetic data.

Samplers passed to the trainers here are callables ``sampler(n, rng)``
returning an ``(n, d)`` array.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from . import net as nn
from .data import MomentStats
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

Sampler = Callable[[int, np.random.Generator], np.ndarray]

EVAL_SAMPLES = 25_600
FRECHET_SAMPLES = 50_000
K_ESTIMATOR = "max_interpolate_grad_norm"


class NotPSDError(ValueError):
    pass


class TrainingDiverged(ArithmeticError):
    pass


@dataclass
class MetricReport:
    frechet_distance: float = float("nan")
    critic_gap: float = float("nan")
    wasserstein_estimate: float = float("nan")
    lipschitz_estimate: float = float("nan")
    judge_accuracy: float = float("nan")
    tv_lower_bound: float = float("nan")
    judge_accuracy_train: float = float("nan")
    wasserstein_estimate_train: float = float("nan")
    frechet_samples: int = 0
    eval_samples: int = 0
    k_estimator: str = K_ESTIMATOR

    def as_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- moments

def empirical_moments(samples: np.ndarray) -> MomentStats:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two samples as rows of a 2-d array")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    return MomentStats(mean, 0.5 * (cov + cov.T))


def _psd_sqrt(c: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (c + c.T))
    floor = -1e-6 * max(1.0, float(np.max(np.abs(vals))) if vals.size else 1.0)
    if vals.size and vals.min() < floor:
        raise NotPSDError(f"{what} has eigenvalue {vals.min():.3g}")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def trace_sqrt_product(c1: np.ndarray, c2: np.ndarray) -> float:
    """``tr((C1 C2)^{1/2})`` through the symmetric form ``sqrt(C1) C2 sqrt(C1)``."""
    s1 = _psd_sqrt(c1, "first covariance")
    m = s1 @ c2 @ s1
    vals = np.linalg.eigvalsh(0.5 * (m + m.T))
    floor = -1e-6 * max(1.0, float(np.max(np.abs(vals))))
    if vals.min() < floor:
        raise NotPSDError(f"sqrt(C1) C2 sqrt(C1) has eigenvalue {vals.min():.3g}")
    return float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))


def frechet_distance(a: MomentStats, b: MomentStats) -> float:
    if a.mean.shape != b.mean.shape or a.covariance.shape != b.covariance.shape:
        raise ValueError("moment statistics have different dimensions")
    _psd_sqrt(b.covariance, "second covariance")
    diff = a.mean - b.mean
    tr = np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * trace_sqrt_product(a.covariance, b.covariance)
    return max(0.0, float(diff @ diff + tr))


# ---------------------------------------------------------------- critic

@dataclass(frozen=True)
class AuxTrainConfig:
    """Training schedule for the independent critic and the Judge."""

    iterations: int = 100_000
    batch_size: int = 256
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    lambda_gp: float = 10.0
    num_layers: int = 5
    hidden_width: int = 1024


def _aux_net(dim: int, cfg: AuxTrainConfig, rng: np.random.Generator) -> nn.Network:
    spec = nn.NetworkSpec(dim, 1, cfg.num_layers, cfg.hidden_width)
    return nn.glorot_init(spec, rng)


def interpolate(x_real: np.ndarray, x_fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise ``eps * real + (1 - eps) * fake`` with ``eps ~ U[0, 1]`` per row."""
    eps = rng.uniform(size=(x_real.shape[0], 1))
    return eps * x_real + (1.0 - eps) * x_fake


def wgan_gp_critic_grads(critic: nn.Network, x_real, x_fake, x_hat, lambda_gp: float,
                         weight: float = 1.0):
    """Loss ``mean D(fake) - mean D(real) + GP`` (times ``weight``) and its gradients."""
    n_r, n_f = x_real.shape[0], x_fake.shape[0]
    x = np.concatenate([x_real, x_fake])
    out, hs, pre = nn.forward_cache(critic, x)
    cot = np.concatenate([np.full((n_r, 1), -weight / n_r), np.full((n_f, 1), weight / n_f)])
    grads, _ = nn.backward(critic, hs, pre, cot)
    gap = float(out[:n_r].mean() - out[n_r:].mean())
    loss = -weight * gap
    if lambda_gp:
        pen, pg = nn.gradient_penalty_with_grads(critic, x_hat, lambda_gp, weight)
        loss += pen
        grads = grads + pg
    return loss, gap, grads


def _orient(critic: nn.Network, xr: np.ndarray, xf: np.ndarray) -> nn.Network:
    """Negate the output layer if the critic starts with a negative gap.

    With 1-d inputs the two-sided penalty walls off a spurious optimum of
    slope near -1: reaching the right sign means passing through zero
    input gradient, which the penalty resists harder than the gap pulls.
    Glorot init is sign-symmetric, so the flip leaves its law unchanged.
    """
    if nn.forward(critic, xr).mean() >= nn.forward(critic, xf).mean():
        return critic
    out = critic.copy()
    out.weights[-1] = -out.weights[-1]
    out.biases[-1] = -out.biases[-1]
    return out


def train_independent_critic(real_sampler: Sampler, fake_sampler: Sampler, cfg: AuxTrainConfig,
                             rng: np.random.Generator, dim: Optional[int] = None) -> nn.Network:
    """Fit a fresh critic with the WGAN-GP objective against frozen samplers."""
    if dim is None:
        dim = real_sampler(1, np.random.default_rng(0)).shape[1]
    critic = _aux_net(dim, cfg, rng)
    opt = AdamState.for_network(critic, cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2)
    for it in range(cfg.iterations):
        xr = real_sampler(cfg.batch_size, rng)
        xf = fake_sampler(cfg.batch_size, rng)
        xh = interpolate(xr, xf, rng)
        if it == 0:
            critic = _orient(critic, xr, xf)
        loss, _, grads = wgan_gp_critic_grads(critic, xr, xf, xh, cfg.lambda_gp)
        if not np.isfinite(loss):
            raise TrainingDiverged("independent critic loss is not finite")
        critic = adam_step(opt, critic, grads)
    return critic


def wasserstein_estimate(critic: nn.Network, real_sampler: Sampler, fake_sampler: Sampler,
                         rng: np.random.Generator, n: int = EVAL_SAMPLES,
                         chunk: int = 4096) -> Tuple[float, float]:
    """Critic gap divided by the largest input-gradient norm seen on interpolates.

    Returns ``(estimate, k)``.
    """
    xr = real_sampler(n, rng)
    xf = fake_sampler(n, rng)
    xh = interpolate(xr, xf, rng)
    dr = np.concatenate([nn.forward(critic, xr[i:i + chunk]) for i in range(0, n, chunk)])
    df = np.concatenate([nn.forward(critic, xf[i:i + chunk]) for i in range(0, n, chunk)])
    gap = float(dr.mean() - df.mean())
    k = 0.0
    for i in range(0, n, chunk):
        g = nn.input_gradients(critic, xh[i:i + chunk])
        k = max(k, float(np.sqrt(np.max(np.sum(g * g, axis=1)))))
    if k <= 1e-12:
        raise ValueError(f"critic Lipschitz estimate too small: {k}")
    return max(0.0, gap) / k, k


# ---------------------------------------------------------------- judge

def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def judge_loss_grads(judge: nn.Network, x_real, x_fake):
    """Mean logistic loss with real labelled 1, fake labelled 0."""
    x = np.concatenate([x_real, x_fake])
    y = np.concatenate([np.ones((x_real.shape[0], 1)), np.zeros((x_fake.shape[0], 1))])
    s, hs, pre = nn.forward_cache(judge, x)
    loss = float(np.mean(np.logaddexp(0.0, s) - y * s))
    grads, _ = nn.backward(judge, hs, pre, (_sigmoid(s) - y) / x.shape[0])
    return loss, grads


def train_judge(real_sampler: Sampler, fake_sampler: Sampler, cfg: AuxTrainConfig,
                rng: np.random.Generator, dim: Optional[int] = None) -> nn.Network:
    if dim is None:
        dim = real_sampler(1, np.random.default_rng(0)).shape[1]
    judge = _aux_net(dim, cfg, rng)
    opt = AdamState.for_network(judge, cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2)
    half = max(1, cfg.batch_size // 2)
    for _ in range(cfg.iterations):
        loss, grads = judge_loss_grads(judge, real_sampler(half, rng), fake_sampler(half, rng))
        if not np.isfinite(loss):
            raise TrainingDiverged("judge loss is not finite")
        judge = adam_step(opt, judge, grads)
    return judge


def classification_accuracy(score_real: np.ndarray, score_fake: np.ndarray) -> float:
    """Fraction correct when a score >= 0 (probability >= 0.5) means "real"."""
    correct = np.count_nonzero(score_real >= 0) + np.count_nonzero(score_fake < 0)
    return correct / (score_real.size + score_fake.size)


def judge_accuracy(judge, real_sampler: Sampler, fake_sampler: Sampler, rng: np.random.Generator,
                   n: int = EVAL_SAMPLES) -> float:
    """Accuracy on ``n`` real and ``n`` fake fresh samples.

    ``judge`` is a logit network or any callable mapping a batch to logits.
    """
    score = judge if callable(judge) else (lambda x: nn.forward(judge, x))
    return classification_accuracy(np.ravel(score(real_sampler(n, rng))), np.ravel(score(fake_sampler(n, rng))))


def tv_lower_bound(acc: float) -> float:
    if not 0.0 <= acc <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {acc}")
    return max(0.0, 2.0 * acc - 1.0)


# ---------------------------------------------------------------- discrete oracle

@dataclass(frozen=True)
class DiscreteDistributionPair:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p, q = np.asarray(self.p, float), np.asarray(self.q, float)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("p and q must be vectors on a common support")
        for v in (p, q):
            if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
                raise ValueError("not a probability vector")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


def classifier_accuracy(pair: DiscreteDistributionPair, predicts_real: np.ndarray) -> float:
    """Expected accuracy of a deterministic classifier under equal priors."""
    r = np.asarray(predicts_real, bool)
    return 0.5 * float(pair.p[r].sum()) + 0.5 * float(pair.q[~r].sum())


def brute_force_tv_and_optacc(pair: DiscreteDistributionPair) -> Tuple[float, float]:
    """Total variation and the accuracy of the rule "real iff p >= q"."""
    tv = 0.5 * float(np.abs(pair.p - pair.q).sum())
    opt = 0.5 * float(np.maximum(pair.p, pair.q).sum())
    by_rule = classifier_accuracy(pair, pair.p >= pair.q)
    if abs(opt - by_rule) > 1e-12 or abs(opt - (0.5 + 0.5 * tv)) > 1e-12:
        raise AssertionError(f"optimal accuracy {opt} (rule: {by_rule}) != 1/2 + tv/2 = {0.5 + 0.5 * tv}")
    return tv, opt
