import json
import os

import numpy as np
import pytest

from hedgebench import cli, market, stats

TINY_CONFIG = """
heston.n_steps = 15
sim.n_train_paths = 96
sim.n_val_paths = 32
sim.seed = 77
train.epochs = 2
train.batch_size = 16
train.seed = 5
net.hidden_dim = 6
"""


@pytest.fixture()
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return str(path)


def run_cli(*argv):
    return cli.main(list(argv))


class TestSimulate:
    def test_writes_paths_csv(self, tmp_path, cfg_file):
        out = str(tmp_path / "paths.csv")
        assert run_cli("simulate", "--config", cfg_file, "--out", out) == 0
        batch = market.read_paths(out)
        assert batch.n_paths == 128
        assert batch.seed == 77

    def test_seed_override(self, tmp_path, cfg_file):
        out_a = str(tmp_path / "a.csv")
        out_b = str(tmp_path / "b.csv")
        run_cli("simulate", "--config", cfg_file, "--out", out_a, "--seed", "1")
        run_cli("simulate", "--config", cfg_file, "--out", out_b, "--seed", "2")
        a = market.read_paths(out_a)
        b = market.read_paths(out_b)
        assert not np.array_equal(a.prices, b.prices)

    def test_bad_config_fails_nonzero(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("heston.rho = -2\n")
        rc = run_cli("simulate", "--config", str(bad), "--out", str(tmp_path / "x.csv"))
        assert rc != 0


class TestTrainEvaluateCompare:
    def test_full_command_chain(self, tmp_path, cfg_file):
        paths = str(tmp_path / "paths.csv")
        assert run_cli("simulate", "--config", cfg_file, "--out", paths) == 0

        model_a = str(tmp_path / "model_a.json")
        curve_a = str(tmp_path / "curve_a.csv")
        assert run_cli("train", "--config", cfg_file, "--paths", paths,
                       "--optimizer", "adam", "--model-out", model_a,
                       "--curve-out", curve_a) == 0
        model_b = str(tmp_path / "model_b.json")
        curve_b = str(tmp_path / "curve_b.csv")
        assert run_cli("train", "--config", cfg_file, "--paths", paths,
                       "--optimizer", "kfac", "--model-out", model_b,
                       "--curve-out", curve_b) == 0

        report_a = str(tmp_path / "report_a.json")
        report_b = str(tmp_path / "report_b.json")
        assert run_cli("evaluate", "--model", model_a, "--paths", paths,
                       "--report-out", report_a) == 0
        assert run_cli("evaluate", "--model", model_b, "--paths", paths,
                       "--report-out", report_b) == 0

        out = str(tmp_path / "comparison.txt")
        assert run_cli("compare", "--report-a", report_a, "--report-b", report_b,
                       "--out", out) == 0
        text = open(out).read()
        assert "Performance metrics" in text
        assert os.path.exists(out + ".histogram.csv")

        lines = open(curve_a).read().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_mean_pnl,val_mean_cost,seconds"
        assert len(lines) == 3
        # standalone train records real wall-clock seconds
        assert float(lines[1].split(",")[-1]) > 0.0

    def test_wrong_path_count_fails(self, tmp_path, cfg_file):
        paths = str(tmp_path / "paths.csv")
        run_cli("simulate", "--config", cfg_file, "--out", paths)
        other = tmp_path / "other.cfg"
        other.write_text(TINY_CONFIG + "sim.n_train_paths = 50\n")
        rc = run_cli("train", "--config", str(other), "--paths", paths,
                     "--model-out", str(tmp_path / "m.json"),
                     "--curve-out", str(tmp_path / "c.csv"))
        assert rc != 0


class TestPipeline:
    EXPECTED_FILES = {
        "paths_train.csv", "paths_val.csv",
        "model_adam.json", "model_kfac.json",
        "curve_adam.csv", "curve_kfac.csv",
        "report_adam.json", "report_kfac.json",
        "eval_adam.csv", "eval_kfac.csv",
        "comparison.txt", "histogram.csv", "levels.csv", "manifest.json",
    }

    def test_artifact_set_and_manifest(self, tmp_path, cfg_file):
        out_dir = str(tmp_path / "run")
        assert run_cli("pipeline", "--config", cfg_file, "--out-dir", out_dir) == 0
        assert set(os.listdir(out_dir)) == self.EXPECTED_FILES
        manifest = json.load(open(os.path.join(out_dir, "manifest.json")))
        assert set(manifest["files"]) == self.EXPECTED_FILES - {"manifest.json"}
        assert cli.verify_manifest(out_dir) == []
        assert manifest["seeds"] == {"sim": 77, "train": 5}
        diag = manifest["diagnostics"]
        assert -1.0 < diag["level_series_correlation"] < 0.0

    def test_bit_identical_reruns(self, tmp_path, cfg_file):
        dir_a = str(tmp_path / "a")
        dir_b = str(tmp_path / "b")
        assert run_cli("pipeline", "--config", cfg_file, "--out-dir", dir_a) == 0
        assert run_cli("pipeline", "--config", cfg_file, "--out-dir", dir_b) == 0
        man_a = json.load(open(os.path.join(dir_a, "manifest.json")))
        man_b = json.load(open(os.path.join(dir_b, "manifest.json")))
        assert man_a["files"] == man_b["files"]
        for name in self.EXPECTED_FILES - {"manifest.json"}:
            with open(os.path.join(dir_a, name), "rb") as fa, \
                 open(os.path.join(dir_b, name), "rb") as fb:
                assert fa.read() == fb.read(), name
        man_a.pop("timings")
        man_b.pop("timings")
        assert man_a == man_b

    def test_pipeline_curves_zero_wall_clock(self, tmp_path, cfg_file):
        out_dir = str(tmp_path / "run")
        run_cli("pipeline", "--config", cfg_file, "--out-dir", out_dir)
        lines = open(os.path.join(out_dir, "curve_adam.csv")).read().splitlines()
        assert all(line.endswith(",0.0") for line in lines[1:])

    def test_paired_training_contract(self, tmp_path, cfg_file):
        # both optimizers start from identical initial weights: epoch-1
        # curves diverge but the recorded init seed is shared
        out_dir = str(tmp_path / "run")
        run_cli("pipeline", "--config", cfg_file, "--out-dir", out_dir)
        model_a = json.load(open(os.path.join(out_dir, "model_adam.json")))
        model_b = json.load(open(os.path.join(out_dir, "model_kfac.json")))
        assert model_a["train_seed"] == model_b["train_seed"]
        assert model_a["norm_stats"] == model_b["norm_stats"]

    def test_failure_leaves_partial_and_stage_name(self, tmp_path, cfg_file, capsys, monkeypatch):
        out_dir = str(tmp_path / "run")

        def boom(curve, destination):
            with open(destination, "w") as fh:
                fh.write("half a file")
            raise RuntimeError("disk gremlin")

        monkeypatch.setattr(cli, "write_curve", boom)
        rc = run_cli("pipeline", "--config", cfg_file, "--out-dir", out_dir)
        assert rc != 0
        err = capsys.readouterr().err
        assert "train-adam" in err
        leftovers = os.listdir(out_dir)
        assert "curve_adam.csv.partial" in leftovers
        assert "curve_adam.csv" not in leftovers
        assert "manifest.json" not in leftovers

    def test_comparison_reports_convergence_epochs(self, tmp_path, cfg_file):
        out_dir = str(tmp_path / "run")
        run_cli("pipeline", "--config", cfg_file, "--out-dir", out_dir)
        text = open(os.path.join(out_dir, "comparison.txt")).read()
        assert "Epochs to validation loss" in text


class TestThreadsEnv:
    def test_worker_cap_does_not_change_results(self, tmp_path, cfg_file, monkeypatch):
        out_a = str(tmp_path / "a.csv")
        monkeypatch.setenv("HEDGEBENCH_THREADS", "1")
        run_cli("simulate", "--config", cfg_file, "--out", out_a)
        out_b = str(tmp_path / "b.csv")
        monkeypatch.setenv("HEDGEBENCH_THREADS", "3")
        run_cli("simulate", "--config", cfg_file, "--out", out_b)
        assert open(out_a).read() == open(out_b).read()

    def test_invalid_value_rejected(self, tmp_path, cfg_file, monkeypatch):
        monkeypatch.setenv("HEDGEBENCH_THREADS", "many")
        rc = run_cli("simulate", "--config", cfg_file, "--out", str(tmp_path / "x.csv"))
        assert rc != 0


def test_report_provenance_survives_cli_round_trip(tmp_path, cfg_file):
    out_dir = str(tmp_path / "run")
    run_cli("pipeline", "--config", cfg_file, "--out-dir", out_dir)
    report = stats.read_report(os.path.join(out_dir, "report_kfac.json"))
    assert report.provenance["optimizer"] == "kfac"
    assert "config_hash" in report.provenance
