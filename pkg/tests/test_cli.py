"""
Command Line Tests

Exit codes, error lines and the files each command writes.
"""

import json

import pytest


@pytest.fixture
def config_file(tmp_path, tiny_run_config_dict):
    """Tiny run config writing under tmp_path/runs"""
    data = dict(tiny_run_config_dict, output_dir=str(tmp_path / "runs"))
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    return path


@pytest.mark.unit
class TestArguments:
    """Test flag parsing and validation errors"""

    def test_parse_positions(self):
        """Test slot lists and the empty set"""
        from featshift.cli import parse_positions

        assert parse_positions("0,1,2") == [0, 1, 2]
        assert parse_positions("{3,4}") == [3, 4]
        assert parse_positions("") == []
        assert parse_positions("none") == []

    def test_parse_positions_garbage(self):
        """Test non-numeric slots"""
        from featshift.cli import parse_positions
        from featshift.errors import ConfigValidationError

        with pytest.raises(ConfigValidationError):
            parse_positions("a,b")

    def test_parse_set(self):
        """Test --set values are parsed as YAML scalars and lists"""
        from featshift.cli import parse_set

        overrides = parse_set(["augmentor.p=0.3", "sweep.values=[8, 16]", "training.held_out=warm"])
        assert overrides == {"augmentor.p": 0.3, "sweep.values": [8, 16], "training.held_out": "warm"}

    def test_parse_set_without_equals(self):
        """Test malformed --set items"""
        from featshift.cli import parse_set
        from featshift.errors import ConfigValidationError

        with pytest.raises(ConfigValidationError):
            parse_set(["augmentor.p"])

    def test_flags_override_config(self, config_file):
        """Test dedicated flags win over --set and the file"""
        from featshift.cli import build_parser, resolve_config

        args = build_parser().parse_args(
            ["train", "--config", str(config_file), "--set", "augmentor.p=0.2", "--p", "0.7", "--positions", "1"]
        )
        config = resolve_config(args)
        assert config.augmentor.p == 0.7
        assert config.network.insert_positions == [1]

    def test_p_out_of_range(self, config_file, capsys):
        """Test --p 1.5 is a validation error"""
        from featshift.cli import EXIT_VALIDATION, main

        assert main(["train", "--config", str(config_file), "--p", "1.5"]) == EXIT_VALIDATION
        err = capsys.readouterr().err
        assert err.startswith("error: augmentor.p")
        assert len(err.strip().splitlines()) == 1

    def test_unknown_sweep(self, config_file, capsys):
        """Test sweep names outside the four sweeps"""
        from featshift.cli import EXIT_VALIDATION, main

        assert main(["ablate", "--config", str(config_file), "--sweep", "lr"]) == EXIT_VALIDATION
        assert capsys.readouterr().err.startswith("error:")

    def test_unknown_command(self, capsys):
        """Test usage errors share the validation exit code"""
        from featshift.cli import EXIT_VALIDATION, main

        assert main(["evaluate"]) == EXIT_VALIDATION
        assert capsys.readouterr().err.startswith("error:")

    def test_unknown_config_key(self, tmp_path, capsys):
        """Test a config file with an unknown key"""
        from featshift.cli import EXIT_VALIDATION, main

        path = tmp_path / "bad.yaml"
        path.write_text("training:\n  epochz: 3\n")
        assert main(["train", "--config", str(path)]) == EXIT_VALIDATION
        assert "training.epochz" in capsys.readouterr().err

    def test_bad_log_level(self, config_file):
        """Test unknown logging levels"""
        from featshift.cli import EXIT_VALIDATION, main

        assert main(["train", "--config", str(config_file), "--log-level", "chatty"]) == EXIT_VALIDATION

    def test_run_directory_collision(self, config_file):
        """Test a rerun within one timestamp gets a suffix and --force reuses the directory"""
        from featshift.cli import build_parser, resolve_config, run_directory

        config = resolve_config(build_parser().parse_args(["train", "--config", str(config_file)]))
        first = run_directory(config, "train", stamp="20260101-000000-000000")
        second = run_directory(config, "train", stamp="20260101-000000-000000")
        assert second != first
        assert second.name == f"{first.name}-2"
        assert run_directory(config, "train", force=True, stamp="20260101-000000-000000") == first


@pytest.mark.integration
class TestCommands:
    """Test commands end to end on the tiny benchmark"""

    def test_generate_data(self, config_file, tmp_path, capsys):
        """Test export, refusal to overwrite and --force"""
        from featshift.cli import EXIT_OK, EXIT_VALIDATION, main

        assert main(["generate-data", "--config", str(config_file)]) == EXIT_OK
        out_dir = next((tmp_path / "runs").glob("dataset-*"))
        assert (out_dir / "manifest.json").exists()
        assert (out_dir / "photo.images.f32").exists()

        capsys.readouterr()
        assert main(["generate-data", "--config", str(config_file)]) == EXIT_VALIDATION
        assert "--force" in capsys.readouterr().err
        assert main(["generate-data", "--config", str(config_file), "--force"]) == EXIT_OK

    def test_train_from_exported_dataset(self, config_file, tmp_path):
        """Test training on a dataset written by generate-data"""
        from featshift.cli import EXIT_OK, main

        assert main(["generate-data", "--config", str(config_file)]) == EXIT_OK
        manifest = next((tmp_path / "runs").glob("dataset-*")) / "manifest.json"
        code = main(["train", "--config", str(config_file), "--set", f"dataset.manifest={manifest}"])
        assert code == EXIT_OK

    def test_train(self, config_file, tmp_path, capsys):
        """Test report, metrics, checkpoint and config echo"""
        from featshift.cli import EXIT_OK, main

        assert main(["train", "--config", str(config_file), "--seed", "3"]) == EXIT_OK
        report_path = capsys.readouterr().out.strip().splitlines()[-1]
        run_dir = tmp_path / "runs" / report_path.split("/")[-2]
        report = json.loads((run_dir / "report.json").read_text())
        assert report["seed"] == 3
        assert (run_dir / "metrics.json").exists()
        assert (run_dir / "params.bin").exists()
        assert json.loads((run_dir / "config.json").read_text())["training"]["seed"] == 3

    def test_ablate_p(self, config_file, tmp_path):
        """Test a two-point p sweep writes runs, plot data and gaps"""
        from featshift.analyze import read_plot_data
        from featshift.cli import EXIT_OK, main

        code = main(["ablate", "--config", str(config_file), "--sweep", "p", "--set", "sweep.values=[0.0, 1.0]"])
        assert code == EXIT_OK
        run_dir = next((tmp_path / "runs").glob("ablate-p-*"))
        runs = (run_dir / "runs.csv").read_text().splitlines()
        assert len(runs) == 3
        plot = read_plot_data(run_dir / "plot.csv")
        assert plot["x"].tolist() == [0.0, 1.0]
        assert json.loads((run_dir / "gaps.json").read_text()) == {}

    def test_ablate_all_failed(self, config_file, tmp_path):
        """Test a sweep whose every run fails exits with the runtime code"""
        from featshift.cli import EXIT_OK, EXIT_RUNTIME, main

        assert main(["generate-data", "--config", str(config_file)]) == EXIT_OK
        dataset_dir = next((tmp_path / "runs").glob("dataset-*"))
        images = dataset_dir / "photo.images.f32"
        images.write_bytes(images.read_bytes()[:-4])

        code = main(
            [
                "ablate",
                "--config",
                str(config_file),
                "--set",
                f"dataset.manifest={dataset_dir / 'manifest.json'}",
                "--set",
                "sweep.values=[0.5]",
            ]
        )
        assert code == EXIT_RUNTIME
        run_dir = next((tmp_path / "runs").glob("ablate-p-*"))
        runs = json.loads((run_dir / "runs.json").read_text())
        assert runs["runs"][0]["error"].startswith("DatasetError")
        assert not (run_dir / "plot.csv").exists()

    def test_train_twice_same_metrics(self, config_file, tmp_path, capsys):
        """Test two identity runs with one seed write byte-identical metrics"""
        from pathlib import Path

        from featshift.cli import EXIT_OK, main

        argv = ["train", "--config", str(config_file), "--aug", "identity", "--seed", "7"]
        assert main(argv) == EXIT_OK
        first = Path(capsys.readouterr().out.strip().splitlines()[-1]).parent
        assert main(argv) == EXIT_OK
        second = Path(capsys.readouterr().out.strip().splitlines()[-1]).parent
        assert first != second
        assert (first / "metrics.json").read_bytes() == (second / "metrics.json").read_bytes()

    def test_corrupted_manifest(self, config_file, tmp_path, capsys):
        """Test a manifest missing a file key fails and names the key"""
        from featshift.cli import EXIT_OK, main

        assert main(["generate-data", "--config", str(config_file)]) == EXIT_OK
        manifest = next((tmp_path / "runs").glob("dataset-*")) / "manifest.json"
        data = json.loads(manifest.read_text())
        del data["files"]["photo"]["shape"]
        manifest.write_text(json.dumps(data))

        capsys.readouterr()
        code = main(["train", "--config", str(config_file), "--set", f"dataset.manifest={manifest}"])
        assert code != EXIT_OK
        assert "manifest.files.photo.shape" in capsys.readouterr().err

    def test_eval_batch_size_validated(self, config_file):
        """Test a zero evaluation chunk is a validation error"""
        from featshift.cli import EXIT_VALIDATION, main

        assert main(["train", "--config", str(config_file), "--set", "training.eval_batch_size=0"]) == EXIT_VALIDATION

    def test_analyze_shift(self, config_file, tmp_path):
        """Test per-class shift files for the baseline and the augmented model"""
        from featshift.analyze import read_plot_data
        from featshift.cli import EXIT_OK, main

        assert main(["analyze-shift", "--config", str(config_file), "--slot", "1"]) == EXIT_OK
        run_dir = next((tmp_path / "runs").glob("analyze-shift-*"))
        shift = read_plot_data(run_dir / "shift.csv")
        assert set(shift["model_tag"]) == {"baseline", "DSU"}
        assert set(shift["slot"]) == {1}
        assert (run_dir / "shift_summary.csv").exists()
