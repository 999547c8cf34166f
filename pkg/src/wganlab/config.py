"""Experiment configuration: sectioned ``key = value`` files with dotted overrides."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Iterable, Optional

from . import net as nn
from .data import Finite, GaussianMixtureSpec, Infinite, RandomNetTargetSpec
from .metrics import AuxTrainConfig
from .mixgan import ConditionalConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    name: str = ""
    device_count: int = 1
    frechet_every: int = 500
    frechet_samples: int = 50_000
    eval_samples: int = 25_600
    mode_samples: int = 10_000


@dataclass(frozen=True)
class DataSection:
    kind: str = "gaussian_mixture"        # or "random_net"
    dim: int = 1024
    num_components: int = 3
    component_variance: float = 0.09
    noise_dim: int = 0                    # 0 -> same as dim
    target_layers: int = 2
    target_width: int = 1024
    target_seed: int = 0
    training_set: str = "infinite"        # or "finite"
    training_set_size: int = 0
    training_set_seed: int = 0


@dataclass(frozen=True)
class MixtureSection:
    n_g: int = 1
    n_d: int = 1


@dataclass(frozen=True)
class NetSection:
    num_layers: int = 5
    hidden_width: int = 1024
    leaky_slope: float = nn.DEFAULT_SLOPE


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 256
    total_iterations: int = 100_000
    critic_steps_per_iter: int = 5
    lambda_gp: float = 10.0
    lr_g: float = 1e-5
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    split_batches: bool = False


@dataclass(frozen=True)
class ConditionalSection:
    enabled: bool = False
    lambda_fm: float = 0.05


@dataclass(frozen=True)
class AuxSection:
    iterations: int = 100_000
    batch_size: int = 256
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    lambda_gp: float = 10.0
    num_layers: int = 5
    hidden_width: int = 1024


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    mixture: MixtureSection = field(default_factory=MixtureSection)
    generator: NetSection = field(default_factory=NetSection)
    discriminator: NetSection = field(default_factory=NetSection)
    train: TrainSection = field(default_factory=TrainSection)
    conditional: ConditionalSection = field(default_factory=ConditionalSection)
    judge: AuxSection = field(default_factory=AuxSection)
    critic: AuxSection = field(default_factory=AuxSection)

    # -- derived objects

    @property
    def noise_dim(self) -> int:
        return self.data.noise_dim or self.data.dim

    @property
    def generator_input_dim(self) -> int:
        extra = self.data.num_components if self.conditional.enabled else 0
        return self.noise_dim + extra

    def dataset(self):
        d = self.data
        if d.kind == "gaussian_mixture":
            return GaussianMixtureSpec(d.dim, d.num_components, d.component_variance)
        return RandomNetTargetSpec(d.dim, d.target_layers, d.target_width, d.target_seed, self.noise_dim,
                                   self.generator.leaky_slope)

    def training_mode(self):
        if self.data.training_set == "finite":
            return Finite(self.data.training_set_size, self.data.training_set_seed)
        return Infinite()

    def gen_spec(self) -> nn.NetworkSpec:
        g = self.generator
        return nn.NetworkSpec(self.generator_input_dim, self.data.dim, g.num_layers, g.hidden_width, g.leaky_slope)

    def disc_spec(self) -> nn.NetworkSpec:
        d = self.discriminator
        out = self.data.num_components + 1 if self.conditional.enabled else 1
        return nn.NetworkSpec(self.data.dim, out, d.num_layers, d.hidden_width, d.leaky_slope)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.batch_size, t.total_iterations, t.critic_steps_per_iter, t.lambda_gp,
                           t.lr_g, t.lr_d, t.beta1, t.beta2, t.split_batches)

    def conditional_config(self) -> Optional[ConditionalConfig]:
        if not self.conditional.enabled:
            return None
        return ConditionalConfig(self.data.num_components, self.conditional.lambda_fm)

    def judge_config(self) -> AuxTrainConfig:
        return _aux(self.judge)

    def critic_config(self) -> AuxTrainConfig:
        return _aux(self.critic)

    def run_name(self) -> str:
        if self.run.name:
            return self.run.name
        ds = f"{self.data.num_components}gauss" if self.data.kind == "gaussian_mixture" else "randnet"
        return f"{ds}{self.data.dim}_{self.mixture.n_g}G{self.mixture.n_d}D_{self.run.seed}"


def _aux(s: AuxSection) -> AuxTrainConfig:
    return AuxTrainConfig(s.iterations, s.batch_size, s.learning_rate, s.beta1, s.beta2, s.lambda_gp,
                          s.num_layers, s.hidden_width)


SECTIONS = [f.name for f in fields(ExperimentConfig)]


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Raise :class:`ConfigError` on anything the runner cannot honour."""
    d, m, t = cfg.data, cfg.mixture, cfg.train
    try:
        if d.kind not in ("gaussian_mixture", "random_net"):
            raise ConfigError(f"data.kind must be gaussian_mixture or random_net, got {d.kind!r}")
        if d.training_set not in ("infinite", "finite"):
            raise ConfigError(f"data.training_set must be infinite or finite, got {d.training_set!r}")
        if d.training_set == "finite" and d.training_set_size < 1:
            raise ConfigError("a finite training set needs data.training_set_size >= 1")
        if m.n_g < 1 or m.n_d < 1:
            raise ConfigError("mixture sizes must be positive")
        if cfg.noise_dim < d.dim:
            raise ConfigError(f"noise dimension {cfg.noise_dim} is below data dimension {d.dim}")
        if cfg.generator.num_layers > 2 and cfg.generator.hidden_width < cfg.generator_input_dim:
            raise ConfigError("generator hidden width must be at least its input dimension")
        if d.kind == "random_net" and d.target_layers > 2 and d.target_width < cfg.noise_dim:
            raise ConfigError("target network hidden width must be at least its input dimension")
        if t.split_batches and t.batch_size % m.n_d:
            raise ConfigError(f"train.batch_size {t.batch_size} is not divisible by n_D={m.n_d}")
        if cfg.conditional.enabled:
            if d.kind != "gaussian_mixture":
                raise ConfigError("conditional mode needs a Gaussian-mixture dataset")
            if not t.split_batches:
                raise ConfigError("conditional mode needs train.split_batches = true")
        if cfg.run.device_count < 1 or cfg.run.frechet_every < 1:
            raise ConfigError("run.device_count and run.frechet_every must be positive")
        if cfg.run.frechet_samples < 2 or cfg.run.eval_samples < 1:
            raise ConfigError("too few evaluation samples")
        cfg.dataset()
        cfg.gen_spec()
        cfg.disc_spec()
        cfg.train_config()
        cfg.judge_config()
        cfg.critic_config()
        cfg.conditional_config()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


# ---------------------------------------------------------------- text form

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(kind, raw: str, where: str):
    try:
        if kind is bool or kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None


def render(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    for name in SECTIONS:
        sec = getattr(cfg, name)
        cp[name] = {f.name: _fmt(getattr(sec, f.name)) for f in fields(sec)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def apply_overrides(cfg: ExperimentConfig, overrides: Dict[str, str]) -> ExperimentConfig:
    """Apply ``{"section.key": "value"}`` string overrides."""
    for dotted, raw in overrides.items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} is not of the form section.key")
        sec_name, key = dotted.split(".", 1)
        if sec_name not in SECTIONS:
            raise ConfigError(f"unknown config section {sec_name!r}")
        sec = getattr(cfg, sec_name)
        ftypes = {f.name: f.type for f in fields(sec)}
        if key not in ftypes:
            raise ConfigError(f"unknown key {dotted!r}")
        sec = replace(sec, **{key: _convert(ftypes[key], raw, dotted)})
        cfg = replace(cfg, **{sec_name: sec})
    return cfg


def parse(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    overrides = {}
    for sec in cp.sections():
        for key, raw in cp[sec].items():
            overrides[f"{sec}.{key}"] = raw
    return apply_overrides(base or ExperimentConfig(), overrides)


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse(fh.read())


def save(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(render(cfg))


def parse_override_args(args: Iterable[str]) -> Dict[str, str]:
    """``["--train.lr_g", "1e-4", "--run.seed=3"]`` -> ``{"train.lr_g": "1e-4", "run.seed": "3"}``."""
    out: Dict[str, str] = {}
    args = list(args)
    k = 0
    while k < len(args):
        a = args[k]
        if not a.startswith("--") or "." not in a:
            raise ConfigError(f"unrecognised argument {a!r}")
        key = a[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if k + 1 >= len(args):
                raise ConfigError(f"missing value for {a}")
            k += 1
            val = args[k]
        out[key] = val
        k += 1
    return out


# ---------------------------------------------------------------- presets

def paper_preset(**overrides) -> ExperimentConfig:
    """Full-scale protocol: 1024-dim data, 5-layer 1024-wide nets, 100k iterations (long-running)."""
    return apply_overrides(ExperimentConfig(), {k: str(v) for k, v in overrides.items()})


def desk_preset(dim: int = 64, **overrides) -> ExperimentConfig:
    """Laptop-scale version of the protocol.

    Data variances and centres are unchanged; networks shrink with the data
    dimension (Judge and critic keep five layers), and learning rates are
    raised tenfold with the same generator/critic ratio so that a few
    thousand iterations show the trends.
    """
    cfg = ExperimentConfig(
        run=RunSection(frechet_every=500, frechet_samples=50_000, eval_samples=25_600),
        data=DataSection(dim=dim, target_width=dim),
        generator=NetSection(num_layers=3, hidden_width=dim),
        discriminator=NetSection(num_layers=3, hidden_width=dim),
        train=TrainSection(batch_size=64, total_iterations=10_000, lr_g=1e-4, lr_d=1e-3),
        judge=AuxSection(iterations=3000, batch_size=128, learning_rate=1e-3, num_layers=5, hidden_width=dim),
        critic=AuxSection(iterations=3000, batch_size=128, learning_rate=1e-3, num_layers=5, hidden_width=dim),
    )
    return apply_overrides(cfg, {k: str(v) for k, v in overrides.items()})


PRESETS = {
    "paper": paper_preset,
    "desk": desk_preset,
    "desk16": lambda **kw: desk_preset(16, **kw),
}
