"""Command-line entry point.

Subcommands: ``train``, ``suite``, ``eval``, ``project``, ``oracle``, ``report``.
Any ``--section.key VALUE`` flag overrides the matching configuration key.
Exit codes: 0 success, 2 configuration error, 3 oracle violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cf
from . import metrics as mt
from . import oracles, runner, viz
from .mixgan import mixture_sample
from .seeding import stream

EXIT_OK, EXIT_CONFIG, EXIT_ORACLE = 0, 2, 3

SUITE_VALUES = {
    "mixture": [1, 3, 5, 10],
    "depth": [2, 3, 5],
    "width": [64, 128, 256],
    "trainset": [256, 1024, 4096, 0],
    "target": [2, 3, 5],
}


def _config_from(args, extra) -> cf.ExperimentConfig:
    if args.config:
        cfg = cf.load(args.config)
    else:
        cfg = cf.PRESETS[args.preset]()
    return cf.validate(cf.apply_overrides(cfg, cf.parse_override_args(extra)))


def cmd_train(args, extra) -> int:
    cfg = _config_from(args, extra)

    def progress(it, fd, rec):
        logging.info("iter %d  frechet %.5g  gap %.5g", it, fd, rec.critic_gap)

    res = runner.run_experiment(cfg, args.out, workers=args.workers, evaluate_final=not args.no_eval,
                                progress=progress)
    print(res.run_dir)
    if res.report is not None:
        print(json.dumps(runner.report_record(res.report), indent=2))
    return EXIT_OK


def cmd_suite(args, extra) -> int:
    base = _config_from(args, extra)
    values = [int(v) for v in args.values.split(",")] if args.values else SUITE_VALUES[args.factor]
    configs = runner.suite_grid(base, args.factor, values)
    print(runner.run_suite(configs, args.factor, values, args.out, args.workers))
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    rep = runner.report_record(runner.evaluate_run(args.run_dir))
    print(json.dumps(rep, indent=2))
    if args.check:
        if runner.read_report(args.run_dir) != rep:
            print("recomputed report differs from the stored one", file=sys.stderr)
            return 1
    return EXIT_OK


def cmd_project(args, extra) -> int:
    run_dir = Path(args.run_dir)
    cfg = cf.load(run_dir / "config.ini")
    model = runner.load_model(run_dir / "checkpoints")
    manifest = json.loads((run_dir / "checkpoints" / "manifest.json").read_text())
    frame = viz.plane_basis(cfg.data.dim)
    rng = stream(cfg.run.seed, "project")
    real = runner.make_sampler(cfg).fresh(args.samples, rng)
    if cfg.conditional.enabled:
        fake = runner.fake_sampler(model, cfg)(args.samples, rng)
        idx = None
    else:
        fake, idx = mixture_sample(model, args.samples, rng, return_index=True)
    rxy, fxy = viz.project(real, frame), viz.project(fake, frame)
    grid = None
    if not cfg.conditional.enabled:
        grid = viz.contour_grid(model.discriminators, model.disc_weights, frame,
                                viz.default_bounds(rxy, fxy), args.resolution)
    stem = f"{manifest['iteration']}_projection"
    viz.write_csv(run_dir / f"{stem}.csv", rxy, fxy, idx, grid)
    viz.render_svg(run_dir / f"{stem}.svg", rxy, fxy, grid, title=cfg.run_name())
    print(run_dir / f"{stem}.csv")
    return EXIT_OK


def run_oracles(seed: int = 0, pairs: int = 1000, classifiers: int = 100, sqrtm_cases: int = 100,
                grad_cases: int = 50) -> dict:
    rng = np.random.default_rng(seed)
    viol, eq_fail = oracles.accuracy_bound_violations(rng, pairs, classifiers)
    worst_fd = 0.0
    for _ in range(sqrtm_cases):
        c1, c2 = oracles.random_spd(8, rng), oracles.random_spd(8, rng)
        m1, m2 = rng.standard_normal(8), rng.standard_normal(8)
        a = mt.frechet_distance(mt.MomentStats(m1, c1), mt.MomentStats(m2, c2))
        worst_fd = max(worst_fd, abs(a - oracles.frechet_distance_db(m1, c1, m2, c2)))
    worst_grad = max(oracles.gradient_check(rng) for _ in range(grad_cases))
    return {
        "accuracy_bound_violations": viol,
        "optimal_rule_failures": eq_fail,
        "sqrtm_max_abs_error": worst_fd,
        "gradient_max_rel_error": worst_grad,
        "ok": viol == 0 and eq_fail == 0 and worst_fd < 1e-8 and worst_grad < 1e-4,
    }


def cmd_oracle(args, extra) -> int:
    res = run_oracles(args.seed)
    print(json.dumps(res, indent=2))
    return EXIT_OK if res["ok"] else EXIT_ORACLE


def cmd_report(args, extra) -> int:
    dirs = [Path(d) for d in args.run_dirs]
    print(runner.aggregate_reports(dirs, args.output))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixgan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--preset", default="desk", choices=sorted(cf.PRESETS))
        sp.add_argument("--out", help="output root (default: $MIXGAN_OUT or ./runs)")
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("train", help="run one configuration")
    with_config(sp)
    sp.add_argument("--no-eval", action="store_true", help="skip the Judge/critic phase")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("suite", help="run a one-factor grid")
    with_config(sp)
    sp.add_argument("--factor", required=True, choices=sorted(runner.FACTORS))
    sp.add_argument("--values", help="comma-separated factor values")
    sp.set_defaults(func=cmd_suite)

    sp = sub.add_parser("eval", help="recompute final metrics from checkpoints")
    sp.add_argument("run_dir")
    sp.add_argument("--check", action="store_true", help="fail if the result differs from report.json")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("project", help="emit plane-projection CSV/SVG for a run")
    sp.add_argument("run_dir")
    sp.add_argument("--samples", type=int, default=2000)
    sp.add_argument("--resolution", type=int, default=viz.GRID_RESOLUTION)
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("oracle", help="run the independent correctness oracles")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("report", help="aggregate report.json files into one CSV")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--output", default="reports.csv")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if extra and args.command not in ("train", "suite"):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        return args.func(args, extra)
    except (cf.ConfigError, runner.SuiteError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
