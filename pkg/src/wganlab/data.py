"""Synthetic ground-truth distributions.

Two families: equal-weight Gaussian mixtures centred on the first ``k``
standard basis vectors, and the pushforward of standard Gaussian noise through
a frozen, randomly initialised network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from . import net as nn

DEFAULT_VARIANCE = 0.09


@dataclass(frozen=True)
class MomentStats:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class GaussianMixtureSpec:
    dim: int = 1024
    num_components: int = 3
    component_variance: float = DEFAULT_VARIANCE

    def __post_init__(self):
        if self.dim < 1 or self.num_components < 1:
            raise ValueError("dim and num_components must be positive")
        if self.num_components > self.dim:
            raise ValueError(f"need num_components <= dim, got {self.num_components} > {self.dim}")
        if self.component_variance < 0:
            raise ValueError("component_variance must be non-negative")

    @property
    def centers(self) -> np.ndarray:
        return np.eye(self.num_components, self.dim)


@dataclass(frozen=True)
class RandomNetTargetSpec:
    """Data produced by a frozen Glorot-initialised network ``R`` fed with noise."""

    dim: int = 1024
    num_layers: int = 2
    hidden_width: int = 1024
    seed: int = 0
    noise_dim: Optional[int] = None
    leaky_slope: float = nn.DEFAULT_SLOPE

    @property
    def z_dim(self) -> int:
        return self.noise_dim or self.dim

    def net_spec(self) -> nn.NetworkSpec:
        return nn.NetworkSpec(self.z_dim, self.dim, self.num_layers, self.hidden_width,
                              self.leaky_slope, self.seed)

    def network(self) -> nn.Network:
        return nn.glorot_init(self.net_spec())


DatasetSpec = Union[GaussianMixtureSpec, RandomNetTargetSpec]


@dataclass(frozen=True)
class Infinite:
    pass


@dataclass(frozen=True)
class Finite:
    size: int
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("finite training set needs at least one sample")


TrainingSetMode = Union[Infinite, Finite]


@dataclass(frozen=True)
class NoiseSpec:
    dim: int

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim))


def check_noise_dim(noise_dim: int, data_dim: int):
    if noise_dim < data_dim:
        raise ValueError(f"noise dimension {noise_dim} is below data dimension {data_dim}")


def sample_gaussian_mixture(spec: GaussianMixtureSpec, n: int, rng: np.random.Generator
                            ) -> Tuple[np.ndarray, np.ndarray]:
    """Fresh draws and their 1-based component labels."""
    if n < 1:
        raise ValueError("n must be >= 1")
    labels = rng.integers(0, spec.num_components, size=n)
    x = rng.standard_normal((n, spec.dim)) * np.sqrt(spec.component_variance)
    x[np.arange(n), labels] += 1.0
    return x, labels + 1


def sample_target_net(spec: RandomNetTargetSpec, n: int, rng: np.random.Generator,
                      target: Optional[nn.Network] = None) -> np.ndarray:
    if target is None:
        target = spec.network()
    return nn.forward(target, NoiseSpec(spec.z_dim).sample(n, rng))


def true_moments(spec: DatasetSpec) -> MomentStats:
    if isinstance(spec, RandomNetTargetSpec):
        if spec.num_layers != 2:
            raise ValueError("closed-form moments only exist for an affine target")
        r = spec.network()
        w = r.weights[0]
        return MomentStats(r.biases[0].copy(), w @ w.T)
    k = spec.num_components
    mean = np.zeros(spec.dim)
    mean[:k] = 1.0 / k
    cov = spec.component_variance * np.eye(spec.dim)
    centred = spec.centers - mean
    cov += centred.T @ centred / k
    return MomentStats(mean, cov)


def component_label(x: np.ndarray, spec: GaussianMixtureSpec) -> np.ndarray:
    """1-based index of the nearest centre; ties go to the smallest index.

    ``|x - e_i|^2 = |x|^2 - 2 x_i + 1``, so the nearest centre is the
    largest of the first ``k`` coordinates; argmax returns the first maximum.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    lab = np.argmax(x[:, :spec.num_components], axis=1) + 1
    return int(lab[0]) if single else lab


class RealSampler:
    """Draws training batches for a dataset under a training-set mode.

    ``labels`` are 1-based component indices for Gaussian mixtures and
    ``None`` for network targets.
    """

    def __init__(self, spec: DatasetSpec, mode: TrainingSetMode = Infinite()):
        self.spec = spec
        self.mode = mode
        self._target = spec.network() if isinstance(spec, RandomNetTargetSpec) else None
        self.pool: Optional[np.ndarray] = None
        self.pool_labels: Optional[np.ndarray] = None
        if isinstance(mode, Finite):
            self.pool, self.pool_labels = self._fresh(mode.size, np.random.default_rng(mode.seed))

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def target(self) -> Optional[nn.Network]:
        return self._target

    def _fresh(self, n, rng):
        if isinstance(self.spec, GaussianMixtureSpec):
            return sample_gaussian_mixture(self.spec, n, rng)
        return sample_target_net(self.spec, n, rng, self._target), None

    def sample(self, n: int, rng: np.random.Generator, with_labels: bool = False):
        if n < 1:
            raise ValueError("n must be >= 1")
        if self.pool is not None:
            idx = rng.integers(0, self.pool.shape[0], size=n)
            x = self.pool[idx]
            lab = None if self.pool_labels is None else self.pool_labels[idx]
        else:
            x, lab = self._fresh(n, rng)
        return (x, lab) if with_labels else x

    def fresh(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draws from the underlying law, ignoring any finite pool (a test set)."""
        return self._fresh(n, rng)[0]


def sample_real(spec: DatasetSpec, mode: TrainingSetMode, n: int, rng: np.random.Generator,
                with_labels: bool = False):
    return RealSampler(spec, mode).sample(n, rng, with_labels)


def pool_to_csv(sampler: RealSampler, path) -> None:
    if sampler.pool is None:
        raise ValueError("sampler has no finite pool")
    cols = [f"x{i}" for i in range(sampler.dim)]
    data = sampler.pool
    if sampler.pool_labels is not None:
        cols = ["label"] + cols
        data = np.column_stack([sampler.pool_labels, data])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
