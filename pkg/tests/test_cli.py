import csv
import json

import numpy as np
import pytest

from wganlab import cli, runner
from wganlab import config as cf
from wganlab.data import GaussianMixtureSpec, RandomNetTargetSpec
from wganlab.seeding import derive_seed, stream

TINY = {
    "train.total_iterations": 12, "train.batch_size": 16, "run.frechet_every": 5,
    "run.frechet_samples": 2000, "run.eval_samples": 400, "run.mode_samples": 300,
    "judge.iterations": 15, "critic.iterations": 15, "judge.batch_size": 32, "critic.batch_size": 32,
}


def tiny(**extra):
    return cf.desk_preset(16, **{**TINY, **extra})


def tiny_args(**extra):
    out = []
    for k, v in {**TINY, **extra}.items():
        out += [f"--{k}", str(v)]
    return out


def test_streams_are_label_specific():
    assert derive_seed(0, "train") == derive_seed(0, "train")
    assert derive_seed(0, "train") != derive_seed(0, "judge")
    assert derive_seed(0, "train", 1) != derive_seed(0, "train", 2)
    assert derive_seed(0, "train") != derive_seed(1, "train")
    assert np.array_equal(stream(5, "x", 3).standard_normal(4), stream(5, "x", 3).standard_normal(4))


def test_train_writes_self_describing_run(tmp_path, capsys):
    code = cli.main(["train", "--preset", "desk16", "--out", str(tmp_path)] + tiny_args(**{"mixture.n_g": 2, "mixture.n_d": 2}))
    assert code == 0
    run = tmp_path / "3gauss16_2G2D_0"
    for name in ("config.ini", "metrics.csv", "report.json", "report.csv", "modes.csv", "checkpoints/manifest.json",
                 "checkpoints/gen_2.mgl", "checkpoints/disc_1.mgo"):
        assert (run / name).exists(), name
    rows = list(csv.DictReader(open(run / "metrics.csv")))
    assert [r["iteration"] for r in rows] == [str(i) for i in range(13)]
    assert [r["iteration"] for r in rows if r["frechet_distance"]] == ["0", "5", "10", "12"]
    assert list(rows[0])[:5] == ["iteration", "critic_gap", "frechet_distance", "gen_weight_1", "gen_weight_2"]
    manifest = json.loads((run / "checkpoints/manifest.json").read_text())
    assert manifest["g_updates"] == [12, 12] and manifest["d_updates"] == [60, 60]
    capsys.readouterr()
    assert cli.main(["eval", str(run), "--check"]) == 0
    assert cli.main(["project", str(run), "--samples", "50", "--resolution", "4"]) == 0
    assert (run / "12_projection.csv").exists() and (run / "12_projection.svg").exists()
    assert cli.main(["report", str(run), "--output", str(tmp_path / "all.csv")]) == 0
    lines = (tmp_path / "all.csv").read_text().splitlines()
    assert lines[0].startswith("run,frechet_distance") and len(lines) == 2


def test_env_var_sets_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("MIXGAN_OUT", str(tmp_path / "env"))
    assert cli.main(["train", "--preset", "desk16", "--no-eval"] + tiny_args(**{"train.total_iterations": 2})) == 0
    assert (tmp_path / "env" / "3gauss16_1G1D_0" / "metrics.csv").exists()


def test_same_seed_identical_logs(tmp_path):
    a = runner.run_experiment(tiny(), tmp_path / "a", evaluate_final=False)
    b = runner.run_experiment(tiny(), tmp_path / "b", evaluate_final=False)
    assert (a.run_dir / "metrics.csv").read_bytes() == (b.run_dir / "metrics.csv").read_bytes()
    c = runner.run_experiment(tiny(**{"run.seed": 1}), tmp_path / "c", evaluate_final=False)
    assert (a.run_dir / "metrics.csv").read_bytes() != (c.run_dir / "metrics.csv").read_bytes()


def test_parallel_workers_reproduce_single_worker(tmp_path):
    cfg = tiny(**{"mixture.n_g": 3, "mixture.n_d": 3, "run.device_count": 3})
    a = runner.run_experiment(cfg, tmp_path / "a", workers=1, evaluate_final=False)
    b = runner.run_experiment(cfg, tmp_path / "b", workers=3, evaluate_final=False)
    assert (a.run_dir / "metrics.csv").read_bytes() == (b.run_dir / "metrics.csv").read_bytes()


def test_zero_iterations_reports_initial_model(tmp_path):
    res = runner.run_experiment(tiny(**{"train.total_iterations": 0}), tmp_path)
    assert res.trainer.iteration == 0
    assert res.model == runner.init_model(tiny())
    assert np.isfinite(res.report.frechet_distance) and 0 <= res.report.judge_accuracy <= 1
    assert res.report.tv_lower_bound == max(0.0, 2 * res.report.judge_accuracy - 1)


def test_random_net_and_finite_runs(tmp_path):
    res = runner.run_experiment(tiny(**{"data.kind": "random_net", "generator.num_layers": 2}), tmp_path)
    assert res.modes is None and np.isfinite(res.report.frechet_distance)
    res = runner.run_experiment(tiny(**{"data.training_set": "finite", "data.training_set_size": 32}), tmp_path)
    assert np.isfinite(res.report.judge_accuracy_train) and np.isfinite(res.report.wasserstein_estimate_train)


def test_conditional_run(tmp_path):
    cfg = tiny(**{"conditional.enabled": "true", "train.split_batches": "true", "generator.hidden_width": 19,
                  "mixture.n_g": 3, "mixture.n_d": 3, "train.batch_size": 18, "train.beta1": 0.0})
    res = runner.run_experiment(cfg, tmp_path)
    assert res.modes is not None and res.modes.histograms.shape == (3, 3)
    assert res.report.critic_gap != res.report.critic_gap  # NaN: no scalar critic in this mode
    assert json.loads((res.run_dir / "report.json").read_text())["critic_gap"] is None
    assert cli.main(["eval", str(res.run_dir), "--check"]) == 0


def test_mode_report_shapes():
    cfg = tiny(**{"mixture.n_g": 10})
    model = runner.init_model(cfg)
    spec = cfg.dataset()
    rep = runner.mode_assignment_report(model, spec, np.random.default_rng(0), 200)
    assert rep.histograms.shape == (10, 3) and np.all(rep.histograms.sum(axis=1) == 200)
    assert not rep.bijection
    one = runner.mode_assignment_report(runner.init_model(tiny()), spec, np.random.default_rng(0), 200)
    assert one.histograms.shape == (1, 3) and not one.bijection
    with pytest.raises(ValueError):
        runner.mode_assignment_report(model, RandomNetTargetSpec(dim=16), np.random.default_rng(0), 10)


def test_ideal_three_generators_form_bijection():
    from wganlab import net as nn
    from wganlab.mixgan import MixtureModel
    spec = GaussianMixtureSpec(dim=8, num_components=3)
    gens = []
    for c in (2, 0, 1):
        b = np.zeros(8)
        b[c] = 1.0
        gens.append(nn.Network([0.3 * np.eye(8)], [b]))
    model = MixtureModel(gens, [nn.scalar_net(np.ones(8))])
    rep = runner.mode_assignment_report(model, spec, np.random.default_rng(1), 2000)
    assert rep.bijection and rep.majority == [3, 1, 2]


def test_suite_fairness_and_grid(tmp_path):
    base = tiny()
    configs = runner.suite_grid(base, "mixture", [1, 2])
    assert [(c.mixture.n_g, c.mixture.n_d) for c in configs] == [(1, 1), (2, 2)]
    runner.check_fairness(configs)
    unfair = [configs[0], cf.apply_overrides(configs[1], {"judge.hidden_width": "32"})]
    with pytest.raises(runner.SuiteError):
        runner.run_suite(unfair, "mixture", [1, 2], tmp_path)
    assert not any(tmp_path.iterdir())
    grid = runner.suite_grid(base, "trainset", [64, 0])
    assert [c.data.training_set for c in grid] == ["finite", "infinite"]
    path = runner.run_suite(runner.suite_grid(tiny(**{"train.total_iterations": 2}), "depth", [2, 3]), "depth",
                            [2, 3], tmp_path)
    rows = list(csv.DictReader(open(path)))
    assert [r["value"] for r in rows] == ["2", "3"] and rows[0]["mode_bijection"] == "false"


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["train", "--preset", "desk16", "--out", str(tmp_path), "--data.dim", "2"]) == 2
    assert cli.main(["train", "--preset", "desk16", "--out", str(tmp_path), "--train.bogus", "1"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["eval", str(tmp_path), "--data.dim", "3"])


def test_oracle_subcommand_small():
    res = cli.run_oracles(seed=1, pairs=50, classifiers=20, sqrtm_cases=10, grad_cases=3)
    assert res["ok"] and res["accuracy_bound_violations"] == 0


def test_oracle_exit_code_on_violation(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_oracles", lambda seed: {"ok": False})
    assert cli.main(["oracle"]) == 3
