import csv
import json

import numpy as np
import pytest
import yaml

from amploco import cli, jetdyn
from amploco.ppo import TRAJECTORY_COLUMNS

TINY = ["ppo.actors=2", "ppo.horizon=16", "ppo.minibatch=16", "ppo.epochs=1", "ppo.hidden=[8]",
        "amp.hidden=[8]", "amp.batch=16", "task.max_steps=30", "iterations=2", "checkpoint_every=0"]


@pytest.fixture(scope="module")
def prior_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("priors")
    assert cli.main(["gen-priors", "--out", str(out), "--walk", "2", "--fly", "2", "--seed", "7"]) == 0
    return out


@pytest.fixture
def config(tmp_path, prior_dir):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump({"output_dir": str(tmp_path / "run"),
                                 "amp": {"priors": [str(prior_dir / "walk.prior"),
                                                    str(prior_dir / "fly.prior")]}}))
    return p


def _overrides(extra=()):
    return [a for o in list(TINY) + list(extra) for a in ("--override", o)]


class TestGenPriors:
    def test_files_and_manifest(self, prior_dir):
        assert (prior_dir / "walk.prior").is_file() and (prior_dir / "fly.prior").is_file()
        manifest = json.loads((prior_dir / "manifest.json").read_text())
        assert manifest["walk"]["clips"] == 2 and manifest["seed"] == 7

    def test_byte_identical(self, prior_dir, tmp_path):
        assert cli.main(["gen-priors", "--out", str(tmp_path), "--walk", "2", "--fly", "2", "--seed", "7"]) == 0
        for name in ("walk.prior", "fly.prior"):
            assert (tmp_path / name).read_bytes() == (prior_dir / name).read_bytes()

    def test_no_fly(self, tmp_path):
        assert cli.main(["gen-priors", "--out", str(tmp_path), "--walk", "1", "--fly", "0"]) == 0
        assert not (tmp_path / "fly.prior").exists()
        assert json.loads((tmp_path / "manifest.json").read_text())["fly"]["file"] is None

    def test_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AMPLOCO_OUTPUT_ROOT", str(tmp_path))
        assert cli.main(["gen-priors", "--out", "p", "--walk", "1", "--fly", "1"]) == 0
        assert (tmp_path / "p" / "walk.prior").is_file()


class TestFitJet:
    def test_noiseless(self, tmp_path):
        out = tmp_path / "jet.yaml"
        assert cli.main(["fit-jet", "--synthetic", "--out", str(out)]) == 0
        report = json.loads((tmp_path / "jet_report.json").read_text())
        assert report["rmse_n"] < 1e-3 and "mae_n" in report
        params = jetdyn.JetParams.from_dict(yaml.safe_load(out.read_text()))
        np.testing.assert_allclose(params.coefficients, report["true_coefficients"], rtol=1e-4)

    def test_noisy(self, tmp_path):
        assert cli.main(["fit-jet", "--synthetic", "--noise", "5", "--seed", "1",
                         "--out", str(tmp_path / "j.yaml"), "--report", str(tmp_path / "r.json")]) == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert 3.0 <= report["mae_n"] <= 6.0 and report["evaluated_on"] == "held-out logs"

    def test_from_log_files(self, tmp_path):
        logs = tmp_path / "logs"
        assert cli.main(["fit-jet", "--synthetic", "--save-logs", str(logs), "--n-logs", "2",
                         "--out", str(tmp_path / "a.yaml")]) == 0
        assert cli.main(["fit-jet", "--logs", str(logs / "train_*.txt"), "--out", str(tmp_path / "b.yaml")]) == 0

    def test_rank_deficient(self, tmp_path, capsys):
        log = jetdyn.simulate_log(jetdyn.calibrate_default(), np.full(400, 0.5), 0.01)
        jetdyn.save_log(log, tmp_path / "flat.txt")
        code = cli.main(["fit-jet", "--logs", str(tmp_path / "flat.txt"), "--out", str(tmp_path / "x.yaml")])
        assert code == 3
        assert "widen the throttle profile" in capsys.readouterr().err

    def test_missing_logs(self, tmp_path):
        assert cli.main(["fit-jet", "--logs", str(tmp_path / "none_*.txt")]) == 3


class TestTrainEval:
    def test_train_and_eval(self, config, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["train", str(config), *_overrides()]) == 0
        rows = (out / "metrics.jsonl").read_text().splitlines()
        assert len(rows) == 2
        resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
        assert resolved["ppo"]["actors"] == 2

        # re-running from the resolved snapshot reproduces the log
        assert cli.main(["train", str(out / "resolved_config.yaml"), "--out", str(tmp_path / "again")]) == 0
        assert (tmp_path / "again" / "metrics.jsonl").read_bytes() == (out / "metrics.jsonl").read_bytes()

        report_path = tmp_path / "eval" / "report.json"
        assert cli.main(["eval", str(out / "checkpoint_final.npz"), "--config", str(config), *_overrides(),
                         "--episodes", "1", "--trajectories", "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert len(report["episodes"]) == 1
        assert all(0 <= e["duration_fraction"] <= 1 for e in report["episodes"])
        traj = tmp_path / "eval" / "trajectories" / "trajectory_000.txt"
        assert traj.read_text().splitlines()[0] == "# " + " ".join(TRAJECTORY_COLUMNS)

    def test_config_error_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("seed: 1\n")
        assert cli.main(["train", str(p)]) == 2
        assert "amp.priors" in capsys.readouterr().err

    def test_eval_mismatch(self, config, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["train", str(config), *_overrides(["iterations=1"])]) == 0
        code = cli.main(["eval", str(out / "checkpoint_final.npz"), "--config", str(config),
                         *_overrides(["scan.cells=3"]), "--episodes", "1"])
        assert code == 3


class TestAblate:
    def test_single_variant(self, config, prior_dir, tmp_path):
        out = tmp_path / "abl"
        assert cli.main(["ablate", str(config), *_overrides(), "--walk-priors", str(prior_dir / "walk.prior"),
                         "--fly-priors", str(prior_dir / "fly.prior"), "--variants", "both",
                         "--iterations", "1", "--episodes", "1", "--out", str(out)]) == 0
        report = json.loads((out / "ablation_report.json").read_text())
        assert [r["variant"] for r in report["rows"]] == ["both"]
        assert report["rows"][0]["reward_fraction"] == 1.0
        with open(out / "ablation_table.csv") as fh:
            assert list(csv.DictReader(fh))[0]["variant"] == "both"

    def test_missing_prior(self, config, tmp_path):
        assert cli.main(["ablate", str(config), "--variants", "walk_only", "--out", str(tmp_path)]) == 2


class TestPlot:
    def test_metrics_and_trajectory(self, tmp_path):
        metrics = tmp_path / "metrics.jsonl"
        metrics.write_text("".join(json.dumps({"env_steps": 100 * k, "mean_task": 0.1 * k, "mean_total": 0.2,
                                               "ep_length": 10.0 * k}) + "\n" for k in range(1, 6)))
        traj = tmp_path / "t.txt"
        data = np.zeros((4, len(TRAJECTORY_COLUMNS)))
        data[:, 0] = np.arange(4) / 60
        np.savetxt(traj, data, header=" ".join(TRAJECTORY_COLUMNS))
        assert cli.main(["plot", str(metrics), str(traj), "--out", str(tmp_path / "plots")]) == 0
        svg = (tmp_path / "plots" / "metrics_reward.svg").read_text()
        first = svg[svg.index("<polyline"):]
        points = first[first.index('points="') + 8:].split('"')[0].split()
        assert len(points) == 5
        assert (tmp_path / "plots" / "t_thrust.svg").is_file() and (tmp_path / "plots" / "t_height.svg").is_file()

    def test_deterministic(self, tmp_path):
        metrics = tmp_path / "m.jsonl"
        metrics.write_text(json.dumps({"env_steps": 1, "mean_task": 0.5, "mean_total": 0.5}) + "\n")
        outs = []
        for k in range(2):
            assert cli.main(["plot", str(metrics), "--out", str(tmp_path / str(k))]) == 0
            outs.append((tmp_path / str(k) / "m_reward.svg").read_bytes())
        assert outs[0] == outs[1]

    def test_empty_metrics(self, tmp_path):
        empty = tmp_path / "e.jsonl"
        empty.write_text("")
        assert cli.main(["plot", str(empty), "--out", str(tmp_path / "plots")]) == 3
        assert not (tmp_path / "plots").exists()

    def test_malformed_trajectory(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("1 2 3\n")
        assert cli.main(["plot", str(bad), "--out", str(tmp_path / "plots")]) == 3
