"""Command-line interface: subcommands, exit codes, error format."""

import json
import subprocess
import sys

import numpy as np
import pytest

from cfdistill.als import load_embedding, item_vector
from cfdistill.cli import main
from cfdistill.experiment import write_results_csv
from cfdistill.fileio import load_float_table, write_wav
from cfdistill.transfer import ExperimentResult

from conftest import make_tiny_manifest


def write_manifest(tmp_path, manifest):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest), encoding="utf-8")
    return path


class TestGenerateWorld:
    def test_writes_world_files(self, tmp_path, capsys):
        config = tmp_path / "world.json"
        config.write_text(json.dumps({"n_users": 10, "n_items": 12, "seed": 1}))
        out = tmp_path / "world"
        assert main(["generate-world", str(config), str(out)]) == 0
        assert (out / "logs.tsv").exists()
        assert (out / "labels.csv").exists()
        assert len(list((out / "audio").glob("*.f32"))) == 12
        assert "12 items" in capsys.readouterr().out

    def test_seed_override(self, tmp_path):
        config = tmp_path / "world.json"
        config.write_text(json.dumps({"n_users": 10, "n_items": 12, "seed": 1}))
        main(["generate-world", str(config), str(tmp_path / "a")])
        main(["generate-world", str(config), str(tmp_path / "b"), "--seed", "2"])
        a = (tmp_path / "a" / "logs.tsv").read_text()
        b = (tmp_path / "b" / "logs.tsv").read_text()
        assert a != b


class TestAlsFit:
    def test_three_line_log_round_trip(self, tmp_path):
        logs = tmp_path / "logs.tsv"
        logs.write_text("u1\ti1\nu1\ti2\t3\nu2\ti1\n", encoding="utf-8")
        out = tmp_path / "emb.ftab"
        assert main(["als-fit", str(logs), str(out), "--seed", "5"]) == 0
        emb = load_embedding(out)
        assert item_vector(emb, "i1").shape == (40,)
        assert item_vector(emb, "i2").shape == (40,)

    def test_config_override(self, tmp_path):
        logs = tmp_path / "logs.tsv"
        logs.write_text("u1\ti1\nu2\ti2\n", encoding="utf-8")
        cfg = tmp_path / "als.json"
        cfg.write_text(json.dumps({"n_factors": 6, "n_iterations": 2}))
        out = tmp_path / "emb.ftab"
        assert main(["als-fit", str(logs), str(out), "--config", str(cfg)]) == 0
        emb = load_embedding(out)
        assert emb.n_factors == 6

    def test_missing_file_is_single_line_error(self, tmp_path, capsys):
        code = main(["als-fit", str(tmp_path / "nope.tsv"), str(tmp_path / "o.ftab")])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("cfdistill: error:")
        assert err.count("\n") == 1


class TestFeatures:
    def test_extracts_and_indexes(self, tmp_path):
        audio = tmp_path / "audio"
        audio.mkdir()
        rng = np.random.default_rng(0)
        for name in ("a", "b"):
            write_wav(audio / f"{name}.wav", rng.normal(size=30000) * 0.05, 16000)
        out = tmp_path / "cache"
        assert main(["features", str(audio), str(out)]) == 0
        index = json.loads((out / "index.json").read_text())
        assert set(index) == {"a", "b"}
        _, grid, meta = load_float_table(out / index["a"]["path"])
        assert grid.shape == (96, 80)
        assert meta["item_id"] == "a"

    def test_wrong_sample_rate_rejected(self, tmp_path, capsys):
        audio = tmp_path / "audio"
        audio.mkdir()
        write_wav(audio / "x.wav", np.zeros(1000), 22050)
        assert main(["features", str(audio), str(tmp_path / "out")]) == 1
        assert "sample rate" in capsys.readouterr().err


class TestManifestCommands:
    def test_run_writes_results(self, tmp_path, capsys):
        manifest = write_manifest(tmp_path, make_tiny_manifest())
        out = tmp_path / "out"
        assert main(["run", str(manifest), "--out", str(out), "--deterministic"]) == 0
        assert (out / "results.csv").exists()
        assert "2 result rows" in capsys.readouterr().out

    def test_train_estimator_then_task(self, tmp_path):
        manifest = write_manifest(tmp_path, make_tiny_manifest())
        out = tmp_path / "out"
        assert main(["train-estimator", str(manifest), "--out", str(out), "--deterministic"]) == 0
        assert (out / "checkpoints" / "cf_estimator.npz").exists()
        assert main(["train-task", str(manifest), "--out", str(out), "--deterministic"]) == 0
        assert (out / "results.csv").exists()

    def test_train_task_without_estimator_fails_with_stage(self, tmp_path, capsys):
        manifest = write_manifest(tmp_path, make_tiny_manifest())
        code = main(["train-task", str(manifest), "--out", str(tmp_path / "out"), "--deterministic"])
        assert code == 1
        err = capsys.readouterr().err
        assert "stage=tasks" in err and err.count("\n") == 1

    def test_output_dir_from_manifest(self, tmp_path):
        m = make_tiny_manifest(output_dir=str(tmp_path / "from_manifest"))
        manifest = write_manifest(tmp_path, m)
        assert main(["run", str(manifest), "--deterministic"]) == 0
        assert (tmp_path / "from_manifest" / "results.csv").exists()

    def test_missing_output_dir_is_error(self, tmp_path, capsys):
        manifest = write_manifest(tmp_path, make_tiny_manifest())
        assert main(["run", str(manifest)]) == 1
        assert "output directory" in capsys.readouterr().err

    def test_invalid_manifest_is_single_line_error(self, tmp_path, capsys):
        manifest = write_manifest(tmp_path, {"schema_version": 99})
        assert main(["run", str(manifest), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("cfdistill: error:") and err.count("\n") == 1


class TestEvaluate:
    def _results_file(self, tmp_path):
        rows = [
            ("genre", ExperimentResult("base", 8, 0, 0, "accuracy", 0.5, 3, 0.0)),
            ("genre", ExperimentResult("base", 8, 1, 0, "accuracy", 0.7, 3, 0.0)),
            ("genre", ExperimentResult("kd", 8, 0, 0, "accuracy", 0.6, 3, 0.0)),
            ("genre", ExperimentResult("kd", 8, 1, 0, "accuracy", 0.9, 3, 0.0)),
        ]
        path = tmp_path / "results.csv"
        write_results_csv(path, rows)
        return path

    def test_prints_means_and_t_test(self, tmp_path, capsys):
        path = self._results_file(tmp_path)
        assert main(["evaluate", str(path)]) == 0
        out = capsys.readouterr().out
        assert "mean base: 0.600000" in out
        assert "mean kd: 0.750000" in out
        assert "t=3.0000" in out
        assert "mean_diff=+0.150000" in out

    def test_missing_results_file(self, tmp_path, capsys):
        assert main(["evaluate", str(tmp_path / "none.csv")]) == 1
        assert capsys.readouterr().err.startswith("cfdistill: error:")


class TestUsage:
    def test_unknown_subcommand_exits_nonzero_with_usage(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_console_script_entry_point(self, tmp_path):
        rows = [("genre", ExperimentResult("base", 8, 0, 0, "accuracy", 0.5, 3, 0.0)),
                ("genre", ExperimentResult("base", 8, 1, 0, "accuracy", 0.6, 3, 0.0))]
        path = tmp_path / "results.csv"
        write_results_csv(path, rows)
        proc = subprocess.run(
            [sys.executable, "-m", "cfdistill.cli", "evaluate", str(path)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "mean base" in proc.stdout
