"""
Training Tests

Run determinism, reports, learning-rate schedule and sweeps on the tiny
benchmark from conftest.
"""

from dataclasses import replace

import numpy as np
import pytest


@pytest.mark.unit
class TestTrainConfig:
    """Test TrainConfig validation"""

    def test_unknown_held_out(self, tiny_train_config):
        """Test a held-out domain missing from the manifest"""
        from featshift.errors import ConfigValidationError

        with pytest.raises(ConfigValidationError) as exc_info:
            replace(tiny_train_config, held_out="painting").validate()
        assert exc_info.value.key == "training.held_out"

    @pytest.mark.parametrize(
        "field_name, value, key",
        [
            ("batch_size", 0, "training.batch_size"),
            ("epochs", 0, "training.epochs"),
            ("lr", 0.0, "training.lr"),
            ("momentum", 1.0, "training.momentum"),
            ("val_fraction", 1.0, "training.val_fraction"),
        ],
    )
    def test_invalid_fields(self, tiny_train_config, field_name, value, key):
        """Test out-of-range training settings name their key"""
        from featshift.errors import ConfigValidationError

        with pytest.raises(ConfigValidationError) as exc_info:
            replace(tiny_train_config, **{field_name: value}).validate()
        assert exc_info.value.key == key

    def test_degenerate_batch(self, tiny_train_config):
        """Test batch size 1 with a batch-statistics augmentor is flagged"""
        from featshift.augment import AugmentorConfig

        assert replace(tiny_train_config, batch_size=1).degenerate_batch
        assert not replace(tiny_train_config, batch_size=2).degenerate_batch
        assert not replace(tiny_train_config, batch_size=1, aug=AugmentorConfig(kind="Identity")).degenerate_batch
        assert not replace(tiny_train_config, batch_size=1, aug=AugmentorConfig(kind="DSU", p=0.0)).degenerate_batch


@pytest.mark.unit
class TestSchedule:
    """Test the learning-rate schedule and the optimizer step"""

    def test_cosine_lr(self):
        """Test cosine decay from the base rate"""
        from featshift.train import cosine_lr

        assert cosine_lr(0.1, 0, 10) == pytest.approx(0.1)
        assert cosine_lr(0.1, 5, 10) == pytest.approx(0.05)
        assert cosine_lr(0.1, 9, 10) < cosine_lr(0.1, 8, 10)

    def test_sgd_step(self, tiny_spec):
        """Test one momentum step with weight decay"""
        from featshift.net import build
        from featshift.train import sgd_step

        params = build(tiny_spec, 0)
        w = params.tensors["conv0.weight"]
        grads = {w: np.ones(w.shape, dtype=w.dtype)}
        velocity = {name: np.zeros(t.shape, dtype=t.dtype) for name, t in params.tensors.items()}
        updated = sgd_step(params, grads, velocity, lr=0.1, momentum=0.9, weight_decay=0.0)

        np.testing.assert_allclose(updated.tensors["conv0.weight"].data, w.data - 0.1, rtol=1e-6)
        np.testing.assert_array_equal(velocity["conv0.weight"], 1.0)
        np.testing.assert_array_equal(updated.tensors["conv0.bias"].data, params.tensors["conv0.bias"].data)
        assert params.tensors["conv0.weight"] is w


@pytest.mark.integration
class TestTrainRun:
    """Test complete training runs on the tiny benchmark"""

    def test_report_contents(self, tiny_train_config, tmp_path):
        """Test the report carries both accuracies, epochs and the config echo"""
        import json

        from featshift.train import train_run

        report = train_run(tiny_train_config)
        assert len(report.epochs) == 2
        assert 0.0 <= report.out_of_domain_accuracy <= 1.0
        assert 0.0 <= report.in_domain_accuracy <= 1.0
        assert report.held_out == "sketch"
        assert report.parameter_count == 592
        assert report.augment["invocations"] > 0
        assert np.isfinite(report.final_train_loss)

        report.to_json(tmp_path / "report.json")
        data = json.loads((tmp_path / "report.json").read_text())
        assert data["config"]["aug"]["kind"] == "DSU"
        assert data["params_fingerprint"] == report.params_fingerprint

    def test_same_seed_same_metrics(self, tiny_train_config):
        """Test two runs of one config agree exactly"""
        from featshift.train import train_run

        first = train_run(tiny_train_config)
        second = train_run(tiny_train_config)
        assert first.metrics() == second.metrics()

    def test_p_zero_reproduces_identity(self, tiny_train_config):
        """Test a gate that never fires trains the same network as no augmentor"""
        from featshift.augment import AugmentorConfig
        from featshift.train import train_run

        never = train_run(replace(tiny_train_config, aug=AugmentorConfig(kind="DSU", p=0.0)))
        plain = train_run(replace(tiny_train_config, aug=AugmentorConfig(kind="Identity")))
        assert never.params_fingerprint == plain.params_fingerprint
        assert never.epochs == plain.epochs
        assert never.out_of_domain_accuracy == plain.out_of_domain_accuracy
        assert never.augment["fired"] == 0

    def test_no_insert_positions_reproduces_identity(self, tiny_train_config):
        """Test DSU with no slots trains bit-for-bit the same network as no augmentor"""
        from featshift.augment import AugmentorConfig
        from featshift.train import train_run

        slotless = replace(tiny_train_config.net, insert_positions=())
        unplugged = train_run(replace(tiny_train_config, net=slotless, aug=AugmentorConfig(kind="DSU", p=1.0)))
        plain = train_run(replace(tiny_train_config, aug=AugmentorConfig(kind="Identity")))
        assert unplugged.params_fingerprint == plain.params_fingerprint
        assert unplugged.epochs == plain.epochs
        assert unplugged.in_domain_accuracy == plain.in_domain_accuracy
        assert unplugged.out_of_domain_accuracy == plain.out_of_domain_accuracy
        assert unplugged.augment["invocations"] == 0

    def test_identity_loss_decreases(self, tiny_train_config):
        """Test full-batch descent without augmentation lowers the loss every epoch"""
        from featshift.augment import AugmentorConfig
        from featshift.train import train_run

        cfg = replace(
            tiny_train_config,
            aug=AugmentorConfig(kind="Identity"),
            epochs=6,
            batch_size=512,
            lr=0.02,
            momentum=0.0,
            weight_decay=0.0,
            val_fraction=0.0,
        )
        losses = [record["train_loss"] for record in train_run(cfg).epochs]
        assert len(losses) == 6
        assert all(later < earlier for earlier, later in zip(losses, losses[1:])), losses

    def test_progress_callback(self, tiny_train_config):
        """Test the callback receives one record per epoch"""
        from featshift.train import train_run

        seen = []
        train_run(tiny_train_config, progress=seen.append)
        assert [r["epoch"] for r in seen] == [0, 1]

    def test_degenerate_batch_warning(self, tiny_train_config):
        """Test batch size 1 runs and records a warning"""
        from featshift.train import train_run

        report = train_run(replace(tiny_train_config, epochs=1, batch_size=1))
        assert len(report.warnings) == 1
        assert "batch_size=1" in report.warnings[0]

    def test_corruption_metrics(self, tiny_train_config):
        """Test corrupted held-out accuracies are keyed kind@severity"""
        from featshift.train import train_run

        report = train_run(replace(tiny_train_config, epochs=1, corruptions=[("gaussian_noise", 2)]))
        assert set(report.corrupted_accuracy) == {"gaussian_noise@2"}

    def test_no_validation_split(self, tiny_train_config):
        """Test val_fraction 0 leaves the in-domain accuracy empty"""
        from featshift.train import train_run

        report = train_run(replace(tiny_train_config, epochs=1, val_fraction=0.0))
        assert report.in_domain_accuracy is None


@pytest.mark.integration
class TestSweeps:
    """Test sweep scheduling and failure isolation"""

    def test_format_slots(self):
        """Test slot sets become stable tags"""
        from featshift.train import format_slots

        assert format_slots([2, 0, 1]) == "{0,1,2}"
        assert format_slots([]) == "{}"

    def test_sweep_p_rejects_out_of_range(self, tiny_train_config):
        """Test p outside [0, 1] fails before any run"""
        from featshift.errors import ConfigValidationError
        from featshift.train import sweep_p

        with pytest.raises(ConfigValidationError) as exc_info:
            sweep_p(tiny_train_config, [0.5, 1.5])
        assert exc_info.value.key == "sweep.values"

    def test_sweep_batch_rejects_single_samples(self, tiny_train_config):
        """Test batch sizes below 2 are refused"""
        from featshift.errors import ConfigValidationError
        from featshift.train import sweep_batch

        with pytest.raises(ConfigValidationError):
            sweep_batch(tiny_train_config, [1, 8])

    def test_sweep_p_tags(self, tiny_train_config):
        """Test one tagged entry per p and seed"""
        from featshift.train import sweep_p

        result = sweep_p(replace(tiny_train_config, epochs=1), [0.0, 1.0], seeds=[0, 1])
        assert len(result) == 4
        assert [(e.tags["p"], e.tags["seed"]) for e in result] == [(0.0, 0), (1.0, 0), (0.0, 1), (1.0, 1)]
        assert all(e.success for e in result)
        assert all(e.tags["method"] == "DSU" for e in result)

    def test_sweep_batch_pairs_identity(self, tiny_train_config):
        """Test every batch size runs the method and the Identity baseline"""
        from featshift.train import sweep_batch

        result = sweep_batch(replace(tiny_train_config, epochs=1), [4])
        assert [e.tags["method"] for e in result] == ["DSU", "Identity"]
        assert all(e.tags["batch_size"] == 4 for e in result)

    def test_sweep_positions_tags(self, tiny_train_config):
        """Test slot sets are tagged and the empty set is allowed"""
        from featshift.train import sweep_positions

        result = sweep_positions(replace(tiny_train_config, epochs=1), [[], [2, 0]])
        assert [e.tags["positions"] for e in result] == ["{}", "{0,2}"]

    def test_failed_run_is_recorded(self, tiny_train_config, tmp_path):
        """Test a run that raises is kept with its error and the sweep goes on"""
        from featshift.train import run_sweep

        good = replace(tiny_train_config, epochs=1)
        bad = replace(good, dataset=str(tmp_path / "missing"))
        result = run_sweep("mixed", [({"run": "bad"}, bad), ({"run": "good"}, good)])

        assert [e.success for e in result] == [False, True]
        assert result[0].error
        assert len(result.filter_failed()) == 1

    def test_jobs_must_be_positive(self, tiny_train_config):
        """Test jobs below 1 are refused"""
        from featshift.errors import ConfigValidationError
        from featshift.train import run_sweep

        with pytest.raises(ConfigValidationError):
            run_sweep("x", [({}, tiny_train_config)], jobs=0)

    def test_paired_gap(self, tiny_train_config):
        """Test the gap is the difference of method means"""
        from featshift.train import paired_gap, sweep_method

        result = sweep_method(replace(tiny_train_config, epochs=1), kinds=["Identity", "DSU"])
        gap = paired_gap(result)
        df = result.to_dataframe().set_index("method")
        expected = df.loc["DSU", "out_of_domain_accuracy"] - df.loc["Identity", "out_of_domain_accuracy"]
        assert set(gap) == {"DSU"}
        assert gap["DSU"] == pytest.approx(expected)

    def test_paired_gap_without_baseline(self, tiny_train_config):
        """Test no baseline runs gives no gaps"""
        from featshift.results import SweepResult
        from featshift.train import paired_gap

        assert paired_gap(SweepResult(name="empty")) == {}
