"""
Test suite for the pipeline configuration and the command-line stages.
"""

import json
import os
import sys
import tempfile
from unittest.mock import patch

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from cli.main import EXIT_OK, EXIT_VALIDATION, main
from cli.pipeline_config import DEFAULTS, PipelineConfig, parse_override
from cli.commands import subsample_indices
from shared.artifact_utils import ArtifactDigest, manifest_path, read_manifest
from shared.config import Config
from shared.dataset_io import read_dataset
from shared.errors import ConfigValidationError

SMOKE_CONFIG = os.path.join(os.path.dirname(__file__), '..', 'configs', 'smoke.json')

MOVING_WELL = ["--set", "system.system_id=MovingWell", "--set", "system.h=null", "--set", "system.k=null"]


def run_cli(root: str, *args: str) -> int:
    """Run the CLI against a temporary output root with the smoke config."""
    with patch.object(Config, 'OUTPUT_ROOT', root), patch.object(Config, 'THREADS', 2):
        return main([*args, "--config", SMOKE_CONFIG, "--output-root", root])


class TestPipelineConfig:
    """Test configuration loading and validation."""

    def test_defaults_validate(self):
        """Test the built-in defaults are a valid configuration."""
        config = PipelineConfig().validate()
        assert config.get("system.h") == 8.0
        assert config.master_seed == 0

    def test_unknown_field(self):
        """Test unknown fields are named in the error."""
        with pytest.raises(ConfigValidationError) as info:
            PipelineConfig({"couple": {"kapa": 1.0}})
        assert info.value.field == "couple.kapa"

    def test_overrides(self):
        """Test dot-path overrides parse JSON values."""
        assert parse_override("couple.kappa=20") == ("couple.kappa", 20)
        assert parse_override("system.system_id=MovingWell") == ("system.system_id", "MovingWell")
        assert parse_override("couple.center=null") == ("couple.center", None)
        config = PipelineConfig.load(None, ["couple.kappa=20", "analyze.sample_sizes=[10, 20]"])
        assert config.get("couple.kappa") == 20
        assert config.get("analyze.sample_sizes") == [10, 20]
        with pytest.raises(ConfigValidationError):
            parse_override("couple.kappa")
        with pytest.raises(ConfigValidationError):
            PipelineConfig.load(None, ["couple.grid=3"])

    def test_field_validation(self):
        """Test validation errors name the offending field."""
        cases = [
            ({"system": {"system_id": "MovingWell"}}, "system.h"),
            ({"simulate": {"n_steps": 0}}, "simulate.n_steps"),
            ({"schedule": {"sigma_max": 0.001}}, "schedule.sigma_max"),
            ({"couple": {"fast_bias_centers": [0.0, 1.0]}}, "couple.fast_bias_centers"),
            ({"analyze": {"sample_sizes": [10, 10]}}, "analyze.sample_sizes"),
            ({"analyze": {"n_experiments": 1}}, "analyze.n_experiments"),
            ({"label": {"subsample": Config.MAX_DMAP_POINTS + 1}}, "label.subsample"),
            ({"train": {"dataset": "/nonexistent/labeled.bin"}}, "train.dataset"),
        ]
        for data, field in cases:
            with pytest.raises(ConfigValidationError) as info:
                PipelineConfig(data).validate()
            assert info.value.field == field

    def test_digest(self):
        """Test the config digest tracks content."""
        a = PipelineConfig()
        b = PipelineConfig.load(None, ["master_seed=1"])
        assert a.digest() == PipelineConfig().digest()
        assert a.digest() != b.digest()
        assert a.to_dict() == PipelineConfig(json.loads(json.dumps(DEFAULTS))).to_dict()

    def test_missing_config_file(self):
        """Test a missing config file is a validation error."""
        with pytest.raises(ConfigValidationError, match="does not exist"):
            PipelineConfig.load("/nonexistent/run.json")


class TestCommandLine:
    """Test stages through the command-line entry point."""

    def test_missing_output_directory(self, caplog):
        """Test a missing output directory exits 2 naming the path."""
        with tempfile.TemporaryDirectory() as temp_dir:
            code = run_cli(temp_dir, "simulate", "--set", "output_dir=absent")
            assert code == EXIT_VALIDATION
            assert os.path.join(temp_dir, "absent") in caplog.text

    def test_invalid_override(self):
        """Test invalid overrides exit 2."""
        with tempfile.TemporaryDirectory() as temp_dir:
            assert run_cli(temp_dir, "simulate", "--set", "simulate.bogus=1") == EXIT_VALIDATION
            assert run_cli(temp_dir, "simulate", "--mkdir", "--set", "simulate.dt=-1") == EXIT_VALIDATION

    def test_simulate_and_label(self):
        """Test simulate writes a dataset and known_slow labels copy x1."""
        with tempfile.TemporaryDirectory() as temp_dir:
            assert run_cli(temp_dir, "simulate", "--mkdir", *MOVING_WELL) == EXIT_OK
            out = os.path.join(temp_dir, "smoke")
            dataset = read_dataset(os.path.join(out, "dataset.bin"))
            assert dataset.data.shape == (20 * 100, 2)
            assert dataset.dt == 0.01
            assert os.path.exists(os.path.join(out, "dataset.csv"))

            assert run_cli(temp_dir, "label", *MOVING_WELL) == EXIT_OK
            labeled = read_dataset(os.path.join(out, "labeled.bin")).data
            assert np.array_equal(labeled[:, 2], labeled[:, 0])
            manifest = read_manifest(os.path.join(out, "labeled.bin"))
            upstream = os.path.join(out, "dataset.bin")
            assert manifest["inputs"] == {upstream: ArtifactDigest.of_file(upstream)}
            assert manifest["provenance"]["label_name"] == "x1"

    def test_stale_artifact(self, caplog):
        """Test a modified upstream artifact exits 2 with both digests."""
        with tempfile.TemporaryDirectory() as temp_dir:
            assert run_cli(temp_dir, "simulate", "--mkdir") == EXIT_OK
            path = os.path.join(temp_dir, "smoke", "dataset.bin")
            recorded = read_manifest(path)["sha256"]
            with open(path, "ab") as f:
                f.write(b"\0" * 16)
            actual = ArtifactDigest.of_file(path)

            caplog.clear()
            assert run_cli(temp_dir, "label") == EXIT_VALIDATION
            assert recorded in caplog.text
            assert actual in caplog.text

    def test_regenerated_upstream_rejected(self, caplog):
        """Test a checkpoint trained on since-regenerated labels exits 2 with both digests."""
        with tempfile.TemporaryDirectory() as temp_dir:
            for stage in ("simulate", "label", "train"):
                extra = ["--mkdir"] if stage == "simulate" else []
                assert run_cli(temp_dir, stage, *extra, *MOVING_WELL,
                               "--set", "schedule.sigma_max=1.0") == EXIT_OK
            out = os.path.join(temp_dir, "smoke")
            labeled = os.path.join(out, "labeled.bin")
            recorded = read_manifest(os.path.join(out, "checkpoint.json"))["inputs"][labeled]

            for stage in ("simulate", "label"):
                assert run_cli(temp_dir, stage, *MOVING_WELL, "--set", "master_seed=7") == EXIT_OK
            current = ArtifactDigest.of_file(labeled)
            assert current != recorded

            caplog.clear()
            code = run_cli(temp_dir, "generate", *MOVING_WELL, "--set", "schedule.sigma_max=1.0")
            assert code == EXIT_VALIDATION
            assert recorded in caplog.text
            assert current in caplog.text

    def test_missing_manifest(self):
        """Test an upstream artifact without manifest exits 2."""
        with tempfile.TemporaryDirectory() as temp_dir:
            assert run_cli(temp_dir, "simulate", "--mkdir") == EXIT_OK
            os.remove(manifest_path(os.path.join(temp_dir, "smoke", "dataset.bin")))
            assert run_cli(temp_dir, "label") == EXIT_VALIDATION

    def test_diffusion_map_cap(self):
        """Test diffusion maps over the cap without subsampling exit 2."""
        with tempfile.TemporaryDirectory() as temp_dir:
            assert run_cli(temp_dir, "simulate", "--mkdir", *MOVING_WELL) == EXIT_OK
            with patch.object(Config, 'MAX_DMAP_POINTS', 500):
                assert run_cli(temp_dir, "label", *MOVING_WELL,
                               "--set", "label.mode=diffusion_maps") == EXIT_VALIDATION

    def test_diffusion_map_labels(self):
        """Test diffusion-map labels on a subsample."""
        with tempfile.TemporaryDirectory() as temp_dir:
            assert run_cli(temp_dir, "simulate", "--mkdir", *MOVING_WELL) == EXIT_OK
            assert run_cli(temp_dir, "label", *MOVING_WELL, "--set", "label.mode=diffusion_maps",
                           "--set", "label.subsample=300") == EXIT_OK
            out = os.path.join(temp_dir, "smoke")
            labeled = read_dataset(os.path.join(out, "labeled.bin")).data
            assert labeled.shape == (300, 3)
            assert labeled[:, 2].mean() == pytest.approx(0.0, abs=1e-10)
            manifest = read_manifest(os.path.join(out, "labeled.bin"))
            assert manifest["provenance"]["label_name"] == "phi1"
            assert abs(manifest["provenance"]["spearman_phi1_x1"]) >= 0.95
            assert os.path.exists(manifest_path(os.path.join(out, "diffusion_map.csv")))

    def test_extrapolation_warning_recorded(self, caplog):
        """Test generating outside the label range records a warning."""
        with tempfile.TemporaryDirectory() as temp_dir:
            for stage in ("simulate", "label", "train"):
                extra = ["--mkdir"] if stage == "simulate" else []
                assert run_cli(temp_dir, stage, *extra, *MOVING_WELL,
                               "--set", "schedule.sigma_max=1.0") == EXIT_OK
            code = run_cli(temp_dir, "generate", *MOVING_WELL, "--set", "schedule.sigma_max=1.0",
                           "--set", "generate.label=12")
            assert code == EXIT_OK
            manifest = read_manifest(os.path.join(temp_dir, "smoke", "samples.bin"))
            assert any("extrapolated" in w for w in manifest["warnings"])
            assert read_dataset(os.path.join(temp_dir, "smoke", "samples.bin")).label == 12.0

    @pytest.mark.parametrize("seed", [0, 7])
    def test_full_pipeline(self, seed):
        """Test every stage in order on a tiny MovingWell run."""
        with tempfile.TemporaryDirectory() as temp_dir:
            code = run_cli(temp_dir, "all", "--mkdir", *MOVING_WELL, "--set", "schedule.sigma_max=1.0",
                           "--set", f"master_seed={seed}")
            assert code == EXIT_OK
            out = os.path.join(temp_dir, "smoke")
            samples = read_dataset(os.path.join(out, "samples.bin")).data
            assert np.all(np.abs(samples[:, 1]) < 3.0)
            for name in ("dataset.bin", "labeled.bin", "checkpoint.json", "training_log.csv",
                         "samples.bin", "samples_pdf.csv", "coupled_pdf.csv", "baseline_pdf.csv",
                         "windows.json", "convergence_USOnly.csv", "convergence_CoupledSgmUs.csv",
                         "convergence.json"):
                assert os.path.exists(os.path.join(out, name)), name
                assert os.path.exists(manifest_path(os.path.join(out, name))), name

            coupled = read_manifest(os.path.join(out, "coupled_pdf.csv"))["provenance"]
            assert coupled["n_windows"] == 3
            assert coupled["bias_center"] == 5.0
            assert len(coupled["windows"]) == 3
            with open(os.path.join(out, "convergence.json")) as f:
                metadata = json.load(f)
            assert metadata["steps_per_window"] == [10, 50]
            assert metadata["dispersion"] == "standard error of the mean"


class TestSubsample:
    """Test seeded subsampling."""

    def test_sorted_and_seeded(self):
        """Test subsample indices are sorted, distinct and reproducible."""
        a = subsample_indices(1000, 50, seed=3)
        assert np.array_equal(a, subsample_indices(1000, 50, seed=3))
        assert np.all(np.diff(a) > 0)
        assert np.array_equal(subsample_indices(10, None, seed=0), np.arange(10))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
