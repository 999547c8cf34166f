"""Run directories: training, checkpoints, final evaluation and suites.

A run directory holds ``config.ini`` (the resolved configuration),
``metrics.csv`` (one row per iteration), ``report.csv``/``report.json``
(final metrics), ``checkpoints/`` (one binary file per network and optimizer
plus ``manifest.json``) and, for Gaussian mixtures, ``modes.csv``.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import config as cf
from . import metrics as mt
from . import net as nn
from . import optim
from .data import GaussianMixtureSpec, RealSampler, component_label, true_moments
from .mixgan import MixtureModel, Trainer, build_mixture, mixture_sample, weighted_critic
from .seeding import derive_seed, stream

log = logging.getLogger(__name__)

OUT_ENV = "MIXGAN_OUT"


class SuiteError(ValueError):
    pass


def output_root(default="runs") -> Path:
    return Path(os.environ.get(OUT_ENV) or default)


def _f(x) -> str:
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------- model construction

def init_model(cfg: cf.ExperimentConfig) -> MixtureModel:
    seed = cfg.run.seed
    return build_mixture(cfg.mixture.n_g, cfg.mixture.n_d, cfg.gen_spec(), cfg.disc_spec(),
                         lambda role, i: derive_seed(seed, "init", 0 if role == "gen" else 1, i))


def make_sampler(cfg: cf.ExperimentConfig) -> RealSampler:
    return RealSampler(cfg.dataset(), cfg.training_mode())


def fake_sampler(model: MixtureModel, cfg: cf.ExperimentConfig):
    """Unconditional draws from the mixture (conditional generators get a uniform class)."""
    if not cfg.conditional.enabled:
        return lambda n, rng: mixture_sample(model, n, rng)
    k = cfg.data.num_components

    def draw(n, rng):
        idx = rng.choice(model.n_g, size=n, p=model.gen_weights)
        z = rng.standard_normal((n, cfg.noise_dim))
        y = rng.integers(0, k, size=n)
        zin = np.concatenate([z, np.eye(k)[y]], axis=1)
        out = np.empty((n, cfg.data.dim))
        for i, g in enumerate(model.generators):
            rows = idx == i
            if rows.any():
                out[rows] = nn.forward(g, zin[rows])
        return out
    return draw


def frechet_to_truth(model: MixtureModel, cfg: cf.ExperimentConfig, rng: np.random.Generator,
                     sampler: Optional[RealSampler] = None) -> float:
    spec = cfg.dataset()
    n = cfg.run.frechet_samples
    try:
        target = true_moments(spec)
    except ValueError:
        target = mt.empirical_moments((sampler or make_sampler(cfg)).fresh(n, rng))
    return mt.frechet_distance(target, mt.empirical_moments(fake_sampler(model, cfg)(n, rng)))


# ---------------------------------------------------------------- logging

def log_header(cfg: cf.ExperimentConfig) -> List[str]:
    return (["iteration", "critic_gap", "frechet_distance"]
            + [f"gen_weight_{i + 1}" for i in range(cfg.mixture.n_g)]
            + [f"disc_weight_{j + 1}" for j in range(cfg.mixture.n_d)]
            + ["g_loss", "d_loss", "skipped"])


def _log_row(it, gap, fd, gw, dw, g_loss, d_loss, skipped):
    return [str(it), _f(gap), _f(fd)] + [_f(x) for x in gw] + [_f(x) for x in dw] + [_f(g_loss), _f(d_loss), str(skipped)]


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(directory: Path, trainer: Trainer) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    m = trainer.model
    files = {"generators": [], "discriminators": [], "gen_opt": [], "disc_opt": []}
    for i, (g, o) in enumerate(zip(m.generators, trainer.g_opt)):
        nn.save(g, directory / f"gen_{i + 1}.mgl")
        (directory / f"gen_{i + 1}.mgo").write_bytes(optim.dumps(o))
        files["generators"].append(f"gen_{i + 1}.mgl")
        files["gen_opt"].append(f"gen_{i + 1}.mgo")
    for j, (d, o) in enumerate(zip(m.discriminators, trainer.d_opt)):
        nn.save(d, directory / f"disc_{j + 1}.mgl")
        (directory / f"disc_{j + 1}.mgo").write_bytes(optim.dumps(o))
        files["discriminators"].append(f"disc_{j + 1}.mgl")
        files["disc_opt"].append(f"disc_{j + 1}.mgo")
    (directory / "gen_logits.mgo").write_bytes(optim.dumps(trainer.gl_opt))
    (directory / "disc_logits.mgo").write_bytes(optim.dumps(trainer.dl_opt))
    manifest = {
        "iteration": trainer.iteration,
        "gen_logits": [float(x) for x in m.gen_logits],
        "disc_logits": [float(x) for x in m.disc_logits],
        "g_updates": [int(x) for x in trainer.g_updates],
        "d_updates": [int(x) for x in trainer.d_updates],
        "files": files,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_model(directory: Path) -> MixtureModel:
    manifest = json.loads((directory / "manifest.json").read_text())
    gens = [nn.load(directory / f) for f in manifest["files"]["generators"]]
    discs = [nn.load(directory / f) for f in manifest["files"]["discriminators"]]
    return MixtureModel(gens, discs, np.array(manifest["gen_logits"]), np.array(manifest["disc_logits"]))


def _check_model_matches(model: MixtureModel, cfg: cf.ExperimentConfig):
    gs, ds = cfg.gen_spec(), cfg.disc_spec()
    if (model.n_g, model.n_d) != (cfg.mixture.n_g, cfg.mixture.n_d):
        raise cf.ConfigError("checkpoint mixture size does not match the configuration")
    if model.generators[0].input_dim != gs.input_dim or model.generators[0].num_layers != gs.num_layers \
            or model.discriminators[0].num_layers != ds.num_layers or model.discriminators[0].output_dim != ds.output_dim:
        raise cf.ConfigError("checkpoint architecture does not match the configuration")


# ---------------------------------------------------------------- evaluation

def evaluate(model: MixtureModel, cfg: cf.ExperimentConfig, sampler: Optional[RealSampler] = None) -> mt.MetricReport:
    """Final metrics: Frechet distance, critic gap, independent critic, Judge.

    Every random draw comes from streams derived from the root seed, so
    evaluating the same checkpoint twice gives identical numbers. With a
    finite training set the Judge and critic train against the pool; the
    ``*_train`` fields score them on the pool, the plain fields on fresh data.
    """
    seed = cfg.run.seed
    sampler = sampler or make_sampler(cfg)
    fake = fake_sampler(model, cfg)
    n = cfg.run.eval_samples
    train_real = sampler.sample
    test_real = sampler.fresh
    rep = mt.MetricReport(frechet_samples=cfg.run.frechet_samples, eval_samples=n)
    rep.frechet_distance = frechet_to_truth(model, cfg, stream(seed, "eval-frechet"), sampler)

    if not cfg.conditional.enabled:
        rng = stream(seed, "eval-gap")
        rep.critic_gap = float(weighted_critic(model, test_real(n, rng)).mean()
                               - weighted_critic(model, fake(n, rng)).mean())

    critic = mt.train_independent_critic(train_real, fake, cfg.critic_config(), stream(seed, "critic"), cfg.data.dim)
    rep.wasserstein_estimate, rep.lipschitz_estimate = mt.wasserstein_estimate(
        critic, test_real, fake, stream(seed, "critic-eval"), n)
    judge = mt.train_judge(train_real, fake, cfg.judge_config(), stream(seed, "judge"), cfg.data.dim)
    rep.judge_accuracy = mt.judge_accuracy(judge, test_real, fake, stream(seed, "judge-eval"), n)
    rep.tv_lower_bound = mt.tv_lower_bound(rep.judge_accuracy)
    if sampler.pool is not None:
        rep.judge_accuracy_train = mt.judge_accuracy(judge, train_real, fake, stream(seed, "judge-eval-train"), n)
        rep.wasserstein_estimate_train = mt.wasserstein_estimate(
            critic, train_real, fake, stream(seed, "critic-eval-train"), n)[0]
    return rep


def report_record(rep: mt.MetricReport) -> Dict[str, object]:
    """JSON-safe dict of a report (NaN -> None)."""
    return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in rep.as_dict().items()}


def write_report(run_dir: Path, rep: mt.MetricReport) -> None:
    d = rep.as_dict()
    with open(run_dir / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(d))
        w.writerow([repr(v) if isinstance(v, float) else v for v in d.values()])
    (run_dir / "report.json").write_text(json.dumps(report_record(rep), indent=2))


def read_report(run_dir: Path) -> Dict[str, object]:
    return json.loads((Path(run_dir) / "report.json").read_text())


# ---------------------------------------------------------------- mode assignment

@dataclass
class ModeReport:
    histograms: np.ndarray        # (n_G, k) label counts per generator
    majority: List[int]           # 1-based majority component per generator
    shares: np.ndarray            # generator weights w_i
    bijection: bool

    def rows(self):
        for i, h in enumerate(self.histograms):
            yield [i + 1, self.majority[i], repr(float(self.shares[i]))] + [int(c) for c in h]


def mode_assignment_report(model: MixtureModel, spec: GaussianMixtureSpec, rng: np.random.Generator,
                           n: int = 10_000, class_codes: Optional[int] = None) -> ModeReport:
    """Histogram of nearest-centre labels over ``n`` samples of each generator."""
    if not isinstance(spec, GaussianMixtureSpec):
        raise ValueError("mode assignment needs a Gaussian-mixture dataset")
    k = spec.num_components
    hist = np.zeros((model.n_g, k), dtype=int)
    for i, g in enumerate(model.generators):
        z = rng.standard_normal((n, g.input_dim - (class_codes or 0)))
        if class_codes:
            z = np.concatenate([z, np.eye(class_codes)[rng.integers(0, class_codes, n)]], axis=1)
        lab = component_label(nn.forward(g, z), spec)
        hist[i] = np.bincount(lab - 1, minlength=k)
    majority = [int(np.argmax(h)) + 1 for h in hist]
    bijection = model.n_g == k and sorted(majority) == list(range(1, k + 1))
    return ModeReport(hist, majority, model.gen_weights, bijection)


def write_modes(run_dir: Path, rep: ModeReport) -> None:
    with open(run_dir / "modes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generator", "majority_component", "weight"]
                   + [f"component_{c + 1}" for c in range(rep.histograms.shape[1])])
        w.writerows(rep.rows())
        w.writerow(["bijection", str(rep.bijection).lower(), "", *[""] * rep.histograms.shape[1]])


# ---------------------------------------------------------------- run

@dataclass
class RunResult:
    run_dir: Path
    model: MixtureModel
    report: Optional[mt.MetricReport]
    modes: Optional[ModeReport]
    trainer: Trainer


def run_experiment(cfg: cf.ExperimentConfig, out_root=None, workers: int = 1, evaluate_final: bool = True,
                   progress=None) -> RunResult:
    """Train, checkpoint and evaluate one configuration under ``out_root/run_name``."""
    cf.validate(cfg)
    run_dir = Path(out_root or output_root()) / cfg.run_name()
    run_dir.mkdir(parents=True, exist_ok=True)
    cf.save(cfg, run_dir / "config.ini")

    seed = cfg.run.seed
    sampler = make_sampler(cfg)
    model = init_model(cfg)
    trainer = Trainer(model, sampler, cfg.train_config(), stream(seed, "train"), cfg.conditional_config(),
                      cfg.run.device_count, workers)
    total = cfg.train.total_iterations
    every = cfg.run.frechet_every
    try:
        with open(run_dir / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(log_header(cfg))
            fd0 = frechet_to_truth(trainer.model, cfg, stream(seed, "frechet", 0), sampler)
            w.writerow(_log_row(0, None, fd0, trainer.model.gen_weights, trainer.model.disc_weights, None, None, 0))
            for it in range(1, total + 1):
                rec = trainer.step()
                fd = None
                if it % every == 0 or it == total:
                    fd = frechet_to_truth(trainer.model, cfg, stream(seed, "frechet", it), sampler)
                w.writerow(_log_row(it, rec.critic_gap, fd, rec.gen_weights, rec.disc_weights,
                                    rec.g_loss, rec.d_loss, rec.skipped))
                if progress is not None and fd is not None:
                    progress(it, fd, rec)
    finally:
        trainer.close()
    save_checkpoint(run_dir / "checkpoints", trainer)

    modes = None
    if isinstance(sampler.spec, GaussianMixtureSpec):
        codes = cfg.data.num_components if cfg.conditional.enabled else None
        modes = mode_assignment_report(trainer.model, sampler.spec, stream(seed, "modes"), cfg.run.mode_samples, codes)
        write_modes(run_dir, modes)
    report = None
    if evaluate_final:
        report = evaluate(trainer.model, cfg, sampler)
        write_report(run_dir, report)
    return RunResult(run_dir, trainer.model, report, modes, trainer)


def evaluate_run(run_dir) -> mt.MetricReport:
    """Recompute the final report of a finished run from its checkpoints."""
    run_dir = Path(run_dir)
    cfg = cf.validate(cf.load(run_dir / "config.ini"))
    model = load_model(run_dir / "checkpoints")
    _check_model_matches(model, cfg)
    return evaluate(model, cfg)


# ---------------------------------------------------------------- suites

FACTORS = {
    "mixture": ("mixture.n_g", "mixture.n_d"),
    "depth": ("generator.num_layers", "discriminator.num_layers"),
    "width": ("generator.hidden_width", "discriminator.hidden_width"),
    "trainset": ("data.training_set_size",),
    "target": ("generator.num_layers",),
}

REPORT_COLUMNS = [f.name for f in fields(mt.MetricReport)]


def suite_grid(base: cf.ExperimentConfig, factor: str, values: Sequence) -> List[cf.ExperimentConfig]:
    """One config per value of ``factor``, everything else (incl. Judge/critic) shared."""
    if factor not in FACTORS:
        raise SuiteError(f"unknown factor {factor!r}; choose from {sorted(FACTORS)}")
    out = []
    for v in values:
        ov = {k: str(v) for k in FACTORS[factor]}
        if factor == "trainset":
            ov["data.training_set"] = "infinite" if int(v) == 0 else "finite"
        if factor == "target":
            ov["data.kind"] = "random_net"
        cfg = cf.apply_overrides(base, ov)
        cfg = cf.apply_overrides(cfg, {"run.name": f"{factor}_{v}_s{cfg.run.seed}"})
        out.append(cfg)
    return out


def check_fairness(configs: Sequence[cf.ExperimentConfig]) -> None:
    if not configs:
        raise SuiteError("empty suite")
    j0, c0 = configs[0].judge, configs[0].critic
    for c in configs[1:]:
        if c.judge != j0 or c.critic != c0:
            raise SuiteError("Judge and independent critic must be identical across a suite")


def run_suite(configs: Sequence[cf.ExperimentConfig], factor: str, labels: Sequence, out_root=None,
              workers: int = 1) -> Path:
    """Run every config and write ``suite_<factor>.csv`` comparing final metrics."""
    check_fairness(configs)
    for c in configs:
        cf.validate(c)
    root = Path(out_root or output_root())
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, c in zip(labels, configs):
        res = run_experiment(c, root, workers)
        rows.append([factor, str(label), c.run_name()] + [res.report.as_dict()[k] for k in REPORT_COLUMNS]
                    + ["" if res.modes is None else str(res.modes.bijection).lower()])
    path = root / f"suite_{factor}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["factor", "value", "run"] + REPORT_COLUMNS + ["mode_bijection"])
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return path


def _cell(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else v


def aggregate_reports(run_dirs: Sequence, out_path) -> Path:
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run"] + REPORT_COLUMNS)
        for d in run_dirs:
            rep = read_report(d)
            w.writerow([Path(d).name] + [_cell(rep[k]) for k in REPORT_COLUMNS])
    return Path(out_path)
