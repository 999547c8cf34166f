"""Mixtures of WGAN-GP generators and critics.

Loss orientation inside the mixture objectives: a critic's loss is
``+D`` on fakes and ``-D`` on reals, the generator's loss is ``-D``, so a
single generator/critic pair reduces exactly to plain WGAN-GP.

Fake batches are organised as ``routes[i][j]``: the samples generator ``i``
sends to critic ``j``. With full routing every pair gets its own batch; in
split mode each generator's batch is cut into ``n_D`` equal parts.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import net as nn
from .data import GaussianMixtureSpec, RealSampler
from .metrics import interpolate
from .optim import AdamState, adam_step, adam_update

log = logging.getLogger(__name__)


class RoutingError(ValueError):
    pass


# ---------------------------------------------------------------- weights

def mixture_weights(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("mixture logits must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def entropy_regularizer(weights, n: Optional[int] = None) -> float:
    """``-(1/n) * sum(log w)``; minimal (``log n``) at the uniform mixture."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("entropy regularizer needs strictly positive weights")
    n = w.size if n is None else n
    return float(-np.sum(np.log(w)) / n)


def logit_grad(weights: np.ndarray, grad_w: np.ndarray, entropy: bool = True) -> np.ndarray:
    """Pull ``dL/dw`` back through the softmax, adding the entropy term's gradient."""
    g = weights * (grad_w - weights @ grad_w)
    if entropy:
        g = g + weights - 1.0 / weights.size
    return g


# ---------------------------------------------------------------- model

@dataclass
class MixtureModel:
    generators: List[nn.Network]
    discriminators: List[nn.Network]
    gen_logits: np.ndarray = None
    disc_logits: np.ndarray = None

    def __post_init__(self):
        if not self.generators or not self.discriminators:
            raise ValueError("need at least one generator and one discriminator")
        if self.gen_logits is None:
            self.gen_logits = np.zeros(len(self.generators))
        if self.disc_logits is None:
            self.disc_logits = np.zeros(len(self.discriminators))
        self.gen_logits = np.asarray(self.gen_logits, dtype=np.float64)
        self.disc_logits = np.asarray(self.disc_logits, dtype=np.float64)
        if self.gen_logits.shape != (self.n_g,) or self.disc_logits.shape != (self.n_d,):
            raise ValueError("one logit per network is required")
        g0 = self.generators[0]
        if any(g.input_dim != g0.input_dim or g.output_dim != g0.output_dim for g in self.generators):
            raise ValueError("generators must share input and output dimensions")
        d0 = self.discriminators[0]
        if any(d.input_dim != d0.input_dim or d.output_dim != d0.output_dim for d in self.discriminators):
            raise ValueError("discriminators must share input and output dimensions")

    @property
    def n_g(self) -> int:
        return len(self.generators)

    @property
    def n_d(self) -> int:
        return len(self.discriminators)

    @property
    def gen_weights(self) -> np.ndarray:
        return mixture_weights(self.gen_logits)

    @property
    def disc_weights(self) -> np.ndarray:
        return mixture_weights(self.disc_logits)

    @property
    def noise_dim(self) -> int:
        return self.generators[0].input_dim

    def copy(self) -> "MixtureModel":
        return MixtureModel([g.copy() for g in self.generators], [d.copy() for d in self.discriminators],
                            self.gen_logits.copy(), self.disc_logits.copy())

    def __eq__(self, other):
        return (isinstance(other, MixtureModel)
                and self.generators == other.generators and self.discriminators == other.discriminators
                and np.array_equal(self.gen_logits, other.gen_logits)
                and np.array_equal(self.disc_logits, other.disc_logits))


def build_mixture(n_g: int, n_d: int, gen_spec: nn.NetworkSpec, disc_spec: nn.NetworkSpec,
                  seed_for) -> MixtureModel:
    """Glorot-initialise every network; ``seed_for(role, index)`` supplies init seeds."""
    gens = [nn.glorot_init(_reseed(gen_spec, seed_for("gen", i))) for i in range(n_g)]
    discs = [nn.glorot_init(_reseed(disc_spec, seed_for("disc", j))) for j in range(n_d)]
    return MixtureModel(gens, discs)


def _reseed(spec: nn.NetworkSpec, seed: int) -> nn.NetworkSpec:
    return nn.NetworkSpec(spec.input_dim, spec.output_dim, spec.num_layers, spec.hidden_width,
                          spec.leaky_slope, seed)


def weighted_critic(model: MixtureModel, x: np.ndarray) -> np.ndarray:
    """``sum_j v_j D_j(x)`` for every row."""
    v = model.disc_weights
    return sum(v[j] * nn.forward(d, x)[:, 0] for j, d in enumerate(model.discriminators))


def mixture_sample(model: MixtureModel, n: int, rng: np.random.Generator,
                   return_index: bool = False):
    """Rows drawn from ``sum_i w_i p_{g_i}``: pick a generator per row, then push noise through it."""
    idx = rng.choice(model.n_g, size=n, p=model.gen_weights)
    z = rng.standard_normal((n, model.noise_dim))
    out = np.empty((n, model.generators[0].output_dim))
    for i, g in enumerate(model.generators):
        rows = idx == i
        if rows.any():
            out[rows] = nn.forward(g, z[rows])
    return (out, idx) if return_index else out


# ---------------------------------------------------------------- routing / scheduling

def split_batches(fake_batches: Sequence[np.ndarray], n_d: int) -> List[List[np.ndarray]]:
    """Cut each generator's batch into ``n_d`` equal parts; part ``j`` goes to critic ``j``."""
    routes = []
    for i, b in enumerate(fake_batches):
        if b.shape[0] % n_d:
            raise RoutingError(f"batch of generator {i + 1} ({b.shape[0]}) is not divisible by n_D={n_d}")
        m = b.shape[0] // n_d
        routes.append([b[j * m:(j + 1) * m] for j in range(n_d)])
    return routes


def device_assignment(index: int, device_count: int) -> int:
    """1-based device hosting network ``index`` (also 1-based)."""
    if index < 1 or device_count < 1:
        raise ValueError("index and device_count are 1-based positive integers")
    return (index - 1) % device_count + 1


def class_partition(num_classes: int, n_g: int) -> List[List[int]]:
    """Classes (1-based) each generator is responsible for.

    ``n_g <= K``: contiguous tiles of ``K / n_g`` classes. ``n_g > K``: one class
    each, wrapping around cyclically.
    """
    if num_classes < 1 or n_g < 1:
        raise ValueError("num_classes and n_g must be positive")
    if n_g > num_classes:
        return [[(i % num_classes) + 1] for i in range(n_g)]
    if num_classes % n_g:
        raise ValueError(f"{num_classes} classes cannot be split evenly across {n_g} generators")
    per = num_classes // n_g
    return [list(range(i * per + 1, (i + 1) * per + 1)) for i in range(n_g)]


# ---------------------------------------------------------------- WGAN losses

def wgan_critic_gap(discriminators: Sequence[nn.Network], weights, real: np.ndarray, fake: np.ndarray) -> float:
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ValueError("empty batch")
    if real.shape[1] != fake.shape[1]:
        raise ValueError("real and fake batches have different widths")
    gap = 0.0
    for v, d in zip(weights, discriminators):
        gap += v * (nn.forward(d, real).mean() - nn.forward(d, fake).mean())
    return float(gap)


def _real_partner(real: np.ndarray, m: int, j: int) -> np.ndarray:
    """Real rows paired with an ``m``-row fake batch for interpolation."""
    if m == real.shape[0]:
        return real
    start = (j * m) % real.shape[0]
    idx = (start + np.arange(m)) % real.shape[0]
    return real[idx]


def make_interpolates(real: np.ndarray, routes, rng: np.random.Generator):
    """``x_hat[i][j]`` between the shared real batch and ``routes[i][j]``."""
    return [[interpolate(_real_partner(real, f.shape[0], j), f, rng) for j, f in enumerate(row)]
            for row in routes]


def _check_routes(routes, n_g, n_d):
    if len(routes) != n_g or any(len(row) != n_d for row in routes):
        raise RoutingError(f"expected {n_g}x{n_d} routed fake batches")


@dataclass
class DiscLoss:
    loss: float
    grads: List[nn.GradientSet]
    logit_grad: np.ndarray
    critic_gap: float


def _disc_contribution(d: nn.Network, j: int, real, routes, x_hats, w, v_j, lambda_gp):
    """Critic ``j``'s share: (dL/dv_j, gradient set, gap) with params gradients scaled by ``v_j``."""
    n_r = real.shape[0]
    parts = [real] + [routes[i][j] for i in range(len(routes))]
    x = np.concatenate(parts)
    out, hs, pre = nn.forward_cache(d, x)
    out = out[:, 0]
    cot = np.empty(x.shape[0])
    cot[:n_r] = -v_j / n_r
    dr = out[:n_r].mean()
    dv = -dr
    gap_fake = 0.0
    off = n_r
    for i in range(len(routes)):
        m = routes[i][j].shape[0]
        cot[off:off + m] = v_j * w[i] / m
        df = out[off:off + m].mean()
        dv += w[i] * df
        gap_fake += w[i] * df
        off += m
    grads, _ = nn.backward(d, hs, pre, cot[:, None])
    if lambda_gp:
        xh = np.concatenate([x_hats[i][j] for i in range(len(routes))])
        rw = np.concatenate([np.full(x_hats[i][j].shape[0], w[i] / x_hats[i][j].shape[0])
                             for i in range(len(routes))])
        pen, pg = nn.gradient_penalty_with_grads(d, xh, lambda_gp, row_weights=rw)
        grads = grads + pg.scale(v_j)
        dv += pen
    return dv, grads, dr - gap_fake


def discriminator_loss(model: MixtureModel, real: np.ndarray, routes, x_hats, lambda_gp: float,
                       pool=None, device_count: int = 1) -> DiscLoss:
    """Mixture critic loss, its gradients and the weighted critic gap.

    ``sum_j sum_i v_j w_i E[D_j(x_ij)] - sum_j v_j E[D_j(x_r)]
    + sum_j sum_i v_j w_i GP_ij - (1/n_D) sum_j log v_j``.
    """
    _check_routes(routes, model.n_g, model.n_d)
    w, v = model.gen_weights, model.disc_weights

    def job(js):
        return [_disc_contribution(model.discriminators[j], j, real, routes, x_hats, w, v[j], lambda_gp)
                for j in js]

    parts = _run_by_device(job, model.n_d, pool, device_count)
    dv = np.array([parts[j][0] for j in range(model.n_d)])
    loss = float(v @ dv) + entropy_regularizer(v)
    gap = float(sum(v[j] * parts[j][2] for j in range(model.n_d)))
    return DiscLoss(loss, [parts[j][1] for j in range(model.n_d)], logit_grad(v, dv), gap)


def _run_by_device(job, count: int, pool, device_count: int) -> Dict[int, tuple]:
    """Run ``job`` over 0-based indices grouped by device; results keyed by index."""
    groups: Dict[int, List[int]] = {}
    for k in range(count):
        groups.setdefault(device_assignment(k + 1, device_count), []).append(k)
    out: Dict[int, tuple] = {}
    if pool is None:
        for dev in sorted(groups):
            out.update(zip(groups[dev], job(groups[dev])))
    else:
        futures = {dev: pool.submit(job, groups[dev]) for dev in sorted(groups)}
        for dev in sorted(groups):
            out.update(zip(groups[dev], futures[dev].result()))
    return out


@dataclass
class GenLoss:
    loss: float
    grads: List[nn.GradientSet]
    logit_grad: np.ndarray


def _gen_contribution(g: nn.Network, i: int, model: MixtureModel, noise, w_i, v):
    """Generator ``i``'s share: (dL/dw_i, gradient set)."""
    zs = np.concatenate(noise[i])
    fake, hs, pre = nn.forward_cache(g, zs)
    cot = np.zeros_like(fake)
    dw = 0.0
    off = 0
    for j, d in enumerate(model.discriminators):
        m = noise[i][j].shape[0]
        x = fake[off:off + m]
        out, dhs, dpre = nn.forward_cache(d, x)
        dw += -v[j] * out.mean()
        _, cin = nn.backward(d, dhs, dpre, np.full((m, 1), -v[j] * w_i / m), need_input=True)
        cot[off:off + m] = cin
        off += m
    grads, _ = nn.backward(g, hs, pre, cot)
    return dw, grads


def generator_loss(model: MixtureModel, noise, pool=None, device_count: int = 1) -> GenLoss:
    """``sum_j sum_i v_j w_i E[-D_j(G_i(z_ij))] - (1/n_G) sum_i log w_i``.

    ``noise[i][j]`` is the noise generator ``i`` turns into the batch for critic ``j``.
    """
    _check_routes(noise, model.n_g, model.n_d)
    w, v = model.gen_weights, model.disc_weights

    def job(is_):
        return [_gen_contribution(model.generators[i], i, model, noise, w[i], v) for i in is_]

    parts = _run_by_device(job, model.n_g, pool, device_count)
    dw = np.array([parts[i][0] for i in range(model.n_g)])
    loss = float(w @ dw) + entropy_regularizer(w)
    return GenLoss(loss, [parts[i][1] for i in range(model.n_g)], logit_grad(w, dw))


# ---------------------------------------------------------------- conditional (multi-hinge) losses

def multihinge_loss(scores, label: int) -> float:
    """``max(0, 1 - s_y + max_{k != y} s_k)`` for one ``(K+1)``-score vector; class 0 is fake."""
    s = np.asarray(scores, dtype=np.float64)
    if not 0 <= label < s.size:
        raise ValueError(f"label {label} outside 0..{s.size - 1}")
    other = np.max(np.delete(s, label))
    return float(max(0.0, 1.0 - s[label] + other))


d_multihinge_loss = multihinge_loss
g_multihinge_loss = multihinge_loss


def multihinge_batch(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean hinge over rows and its (sub)gradient w.r.t. the scores."""
    n, c = scores.shape
    labels = np.asarray(labels, dtype=int)
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError("label out of range")
    rows = np.arange(n)
    masked = scores.copy()
    masked[rows, labels] = -np.inf
    other_idx = np.argmax(masked, axis=1)
    margin = 1.0 - scores[rows, labels] + scores[rows, other_idx]
    active = margin > 0
    grad = np.zeros_like(scores)
    grad[rows[active], labels[active]] -= 1.0 / n
    grad[rows[active], other_idx[active]] += 1.0 / n
    return float(np.mean(np.where(active, margin, 0.0))), grad


def feature_matching_loss(fake_features: np.ndarray, real_features: np.ndarray) -> float:
    return feature_matching_grad(fake_features, real_features)[0]


def feature_matching_grad(fake_features: np.ndarray, real_features: np.ndarray):
    """L1 distance of mean features and its gradient w.r.t. each fake feature row."""
    if fake_features.shape[0] == 0 or real_features.shape[0] == 0:
        raise ValueError("empty batch")
    if fake_features.shape[1] != real_features.shape[1]:
        raise ValueError("feature widths differ")
    diff = fake_features.mean(axis=0) - real_features.mean(axis=0)
    g = np.broadcast_to(np.sign(diff) / fake_features.shape[0], fake_features.shape)
    return float(np.abs(diff).sum()), np.array(g)


def conditional_d_loss(d: nn.Network, real, real_labels, fake):
    """Hinge loss of one ``(K+1)``-way critic; reals carry their class, fakes class 0."""
    x = np.concatenate([real, fake])
    out, hs, pre = nn.forward_cache(d, x)
    n_r = real.shape[0]
    lr_, gr = multihinge_batch(out[:n_r], real_labels)
    lf, gf = multihinge_batch(out[n_r:], np.zeros(fake.shape[0], dtype=int))
    grads, _ = nn.backward(d, hs, pre, np.concatenate([gr, gf]))
    return lr_ + lf, grads


def conditional_g_terms(d: nn.Network, real, fake, targets, lambda_fm: float):
    """Hinge-at-target plus ``lambda_fm`` feature matching for fakes seen by one critic.

    Returns the loss and its gradient w.r.t. the fake inputs.
    """
    real_feat = nn.hidden_features(d, real)
    out, hs, pre = nn.forward_cache(d, fake)
    mh, g_scores = multihinge_batch(out, targets)
    fm, g_feat = feature_matching_grad(hs[-1], real_feat)
    _, cin = nn.backward(d, hs, pre, g_scores, feature_cot=lambda_fm * g_feat, need_input=True)
    return mh + lambda_fm * fm, cin


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    total_iterations: int = 100_000
    critic_steps_per_iter: int = 5
    lambda_gp: float = 10.0
    lr_g: float = 1e-5
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    split_batches: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.total_iterations < 0 or self.critic_steps_per_iter < 1:
            raise ValueError("batch_size and critic_steps_per_iter must be positive")
        if self.lambda_gp < 0 or self.lr_g < 0 or self.lr_d < 0:
            raise ValueError("lambda_gp and learning rates must be non-negative")


@dataclass(frozen=True)
class ConditionalConfig:
    num_classes: int
    lambda_fm: float = 0.05

    def __post_init__(self):
        if self.num_classes < 1 or self.lambda_fm < 0:
            raise ValueError("num_classes must be positive and lambda_fm non-negative")


@dataclass
class IterationRecord:
    iteration: int
    critic_gap: float
    gen_weights: np.ndarray
    disc_weights: np.ndarray
    g_loss: float = float("nan")
    d_loss: float = float("nan")
    skipped: int = 0


class Trainer:
    """Owns a mixture, its optimizers and random streams, and runs the update schedule.

    Each iteration: draw reals; every generator emits its fakes for every
    critic; one generator step; one critic step on the same batches; then
    ``critic_steps_per_iter - 1`` further rounds of (fresh reals, fresh fakes,
    critic step).
    """

    def __init__(self, model: MixtureModel, sampler: RealSampler, cfg: TrainConfig,
                 rng: np.random.Generator, conditional: Optional[ConditionalConfig] = None,
                 device_count: int = 1, workers: int = 1):
        self.model = model
        self.sampler = sampler
        self.cfg = cfg
        self.rng = rng
        self.conditional = conditional
        self.device_count = device_count
        self.pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        kw = dict(beta1=cfg.beta1, beta2=cfg.beta2)
        self.g_opt = [AdamState.for_network(g, cfg.lr_g, **kw) for g in model.generators]
        self.d_opt = [AdamState.for_network(d, cfg.lr_d, **kw) for d in model.discriminators]
        self.gl_opt = AdamState.for_params([model.gen_logits], cfg.lr_g, **kw)
        self.dl_opt = AdamState.for_params([model.disc_logits], cfg.lr_d, **kw)
        self.iteration = 0
        self.g_updates = np.zeros(model.n_g, dtype=int)
        self.d_updates = np.zeros(model.n_d, dtype=int)
        self.skipped = 0
        if conditional is not None:
            self._setup_conditional()
        elif cfg.split_batches:
            self._check_split()

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    # -- batches

    def _check_split(self):
        if self.cfg.batch_size % self.model.n_d:
            raise RoutingError(f"batch size {self.cfg.batch_size} not divisible by n_D={self.model.n_d}")

    def _noise(self):
        """Noise per (generator, critic) route, drawn in index order."""
        m, b = self.model, self.cfg.batch_size
        if self.cfg.split_batches:
            return split_batches([self.rng.standard_normal((b, m.noise_dim)) for _ in range(m.n_g)], m.n_d)
        return [[self.rng.standard_normal((b, m.noise_dim)) for _ in range(m.n_d)] for _ in range(m.n_g)]

    def _fakes(self, noise):
        out = []
        for g, row in zip(self.model.generators, noise):
            out.append([nn.forward(g, z) for z in row])
        return out

    # -- steps

    def _generator_step(self, noise) -> float:
        res = generator_loss(self.model, noise, self.pool, self.device_count)
        if not (np.isfinite(res.loss) and all(g.is_finite() for g in res.grads) and np.all(np.isfinite(res.logit_grad))):
            self._flag("generator")
            return res.loss
        m = self.model
        m.generators = [adam_step(o, g, gr) for o, g, gr in zip(self.g_opt, m.generators, res.grads)]
        m.gen_logits = adam_update(self.gl_opt, [m.gen_logits], [res.logit_grad])[0]
        self.g_updates += 1
        return res.loss

    def _discriminator_step(self, real, routes) -> Tuple[float, float]:
        x_hats = make_interpolates(real, routes, self.rng)
        res = discriminator_loss(self.model, real, routes, x_hats, self.cfg.lambda_gp, self.pool, self.device_count)
        if not (np.isfinite(res.loss) and all(g.is_finite() for g in res.grads) and np.all(np.isfinite(res.logit_grad))):
            self._flag("discriminator")
            return res.loss, res.critic_gap
        m = self.model
        m.discriminators = [adam_step(o, d, gr) for o, d, gr in zip(self.d_opt, m.discriminators, res.grads)]
        m.disc_logits = adam_update(self.dl_opt, [m.disc_logits], [res.logit_grad])[0]
        self.d_updates += 1
        return res.loss, res.critic_gap

    def _flag(self, what):
        self.skipped += 1
        log.warning("iteration %d: non-finite %s loss/gradients, step skipped", self.iteration, what)

    def step(self) -> IterationRecord:
        if self.conditional is not None:
            return self._conditional_step()
        cfg, m = self.cfg, self.model
        skipped0 = self.skipped
        real = self.sampler.sample(cfg.batch_size, self.rng)
        noise = self._noise()
        routes = self._fakes(noise)
        g_loss = self._generator_step(noise)
        gaps, d_losses = [], []
        for r in range(cfg.critic_steps_per_iter):
            if r:
                real = self.sampler.sample(cfg.batch_size, self.rng)
                routes = self._fakes(self._noise())
            d_loss, gap = self._discriminator_step(real, routes)
            gaps.append(gap)
            d_losses.append(d_loss)
        self.iteration += 1
        return IterationRecord(self.iteration, float(np.mean(gaps)), m.gen_weights, m.disc_weights,
                               g_loss, float(np.mean(d_losses)), self.skipped - skipped0)

    # -- conditional mode

    def _setup_conditional(self):
        m, c = self.model, self.conditional
        if not isinstance(self.sampler.spec, GaussianMixtureSpec):
            raise ValueError("conditional mode needs a labelled Gaussian-mixture dataset")
        if self.sampler.spec.num_components != c.num_classes:
            raise ValueError("num_classes must equal the number of mixture components")
        if any(d.output_dim != c.num_classes + 1 for d in m.discriminators):
            raise ValueError("conditional critics need K+1 outputs")
        if m.noise_dim < self.sampler.dim + c.num_classes:
            raise ValueError("conditional generators take noise plus a one-hot class code")
        if not self.cfg.split_batches:
            raise ValueError("conditional mode uses split batches")
        self._check_split()
        self.classes = class_partition(c.num_classes, m.n_g)

    def _conditional_noise(self):
        m, k, b = self.model, self.conditional.num_classes, self.cfg.batch_size
        zs, ys = [], []
        for i in range(m.n_g):
            y = self.rng.choice(self.classes[i], size=b)
            z = self.rng.standard_normal((b, m.noise_dim - k))
            zs.append(np.concatenate([z, np.eye(k)[y - 1]], axis=1))
            ys.append(y)
        return split_batches(zs, m.n_d), [np.split(y, m.n_d) for y in ys]

    def _conditional_step(self) -> IterationRecord:
        cfg, m, lam = self.cfg, self.model, self.conditional.lambda_fm
        skipped0 = self.skipped
        real, labels = self.sampler.sample(cfg.batch_size, self.rng, with_labels=True)
        noise, targets = self._conditional_noise()

        # generator step: each critic scores the combined fakes routed to it
        caches = [nn.forward_cache(g, np.concatenate(noise[i])) for i, g in enumerate(m.generators)]
        fakes = [np.split(c[0], m.n_d) for c in caches]
        cots = [np.zeros_like(c[0]) for c in caches]
        part = cfg.batch_size // m.n_d
        g_loss = 0.0
        for j, d in enumerate(m.discriminators):
            x = np.concatenate([fakes[i][j] for i in range(m.n_g)])
            t = np.concatenate([targets[i][j] for i in range(m.n_g)])
            loss, cin = conditional_g_terms(d, real, x, t, lam)
            g_loss += loss / m.n_d
            for i in range(m.n_g):
                cots[i][j * part:(j + 1) * part] = cin[i * part:(i + 1) * part] / m.n_d
        grads = [nn.backward(g, c[1], c[2], cot)[0] for g, c, cot in zip(m.generators, caches, cots)]
        if all(gr.is_finite() for gr in grads):
            m.generators = [adam_step(o, g, gr) for o, g, gr in zip(self.g_opt, m.generators, grads)]
            self.g_updates += 1
        else:
            self._flag("generator")

        d_losses = []
        for r in range(cfg.critic_steps_per_iter):
            if r:
                real, labels = self.sampler.sample(cfg.batch_size, self.rng, with_labels=True)
                noise, targets = self._conditional_noise()
                fakes = self._fakes(noise)
            res = [conditional_d_loss(d, real, labels, np.concatenate([fakes[i][j] for i in range(m.n_g)]))
                   for j, d in enumerate(m.discriminators)]
            d_losses.append(float(np.mean([l for l, _ in res])))
            if all(gr.is_finite() for _, gr in res):
                m.discriminators = [adam_step(o, d, gr) for o, d, (_, gr) in zip(self.d_opt, m.discriminators, res)]
                self.d_updates += 1
            else:
                self._flag("discriminator")
        self.iteration += 1
        return IterationRecord(self.iteration, float("nan"), m.gen_weights, m.disc_weights,
                               g_loss, float(np.mean(d_losses)), self.skipped - skipped0)


def train_iteration(trainer: Trainer) -> IterationRecord:
    return trainer.step()
