"""Test the pipeline orchestrator on a tiny configuration."""

import json

import pytest

from modprobe.app import INCOMPLETE_MARKER, ModularityProbe, method_slug
from modprobe.config import load_settings
from modprobe.data import write_idx_pair
from modprobe.errors import InvalidArgumentError, StageError
from modprobe.model import load_model

from .conftest import make_dataset

TINY = {
    "architecture": "mlp-8x2",
    "replicates": 2,
    "epochs": 1,
    "batch_size": 32,
    "k": 3,
    "vis_steps": 2,
    "random_count": 4,
    "validation_fraction": 0.5,
    "corrvis": True,
}


def write_inputs(root) -> dict:
    paths = {
        "train_images": root / "train-images",
        "train_labels": root / "train-labels",
        "test_images": root / "test-images",
        "test_labels": root / "test-labels",
    }
    write_idx_pair(make_dataset(300, seed=3), paths["train_images"], paths["train_labels"])
    write_idx_pair(make_dataset(150, seed=4, split="test"), paths["test_images"], paths["test_labels"])
    return paths


def tiny_probe(root, **overrides) -> ModularityProbe:
    return ModularityProbe(load_settings(None, **{**TINY, **write_inputs(root), "out": root / "run", **overrides}))


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    probe = tiny_probe(tmp_path_factory.mktemp("pipeline"))
    result = probe.run_all()
    yield probe, result
    probe.store.close()


class TestPaths:
    """Test output locations."""

    pytestmark = pytest.mark.fast

    def test_single_k_uses_run_root(self, tmp_path):
        probe = tiny_probe(tmp_path)
        assert probe.run_dir(3) == tmp_path / "run"
        assert probe.partition_path(3, 1, "weights/local").name == "weights-local.txt"

    def test_sweep_uses_k_directories(self, tmp_path):
        probe = tiny_probe(tmp_path, k_sweep="3,4")
        assert probe.run_dir(4) == tmp_path / "run" / "k4"

    def test_method_slug(self):
        assert method_slug("activations/global") == "activations-global"

    def test_network_label(self, tmp_path):
        assert tiny_probe(tmp_path, dataset="halves").network_label() == "mlp-8x2-halves"


class TestStageFailures:
    """Test stage ordering and failure flags."""

    pytestmark = pytest.mark.fast

    def test_missing_models(self, tmp_path):
        probe = tiny_probe(tmp_path)
        with pytest.raises(StageError) as excinfo:
            probe.run_stage("graphify", probe.graphify)
        assert excinfo.value.stage == "graphify"
        marker = (tmp_path / "run" / INCOMPLETE_MARKER).read_text()
        assert marker.startswith("stage=graphify")

    def test_missing_datasets(self, tmp_path):
        probe = ModularityProbe(load_settings(None, out=tmp_path / "run"))
        with pytest.raises(InvalidArgumentError, match="train_images"):
            probe.datasets()

    def test_no_reports(self, tmp_path):
        assert tiny_probe(tmp_path).report() is None

    def test_validation_carved_from_train(self, tmp_path):
        train, validation, test = tiny_probe(tmp_path).datasets()
        assert (len(train), len(validation), len(test)) == (150, 150, 150)
        assert validation.split == "validation"

    def test_validation_size_caps(self, tmp_path):
        assert len(tiny_probe(tmp_path, validation_size=120).datasets()[1]) == 120


@pytest.mark.slow
class TestFullRun:
    """Test a complete tiny pipeline run."""

    def test_outputs_present(self, finished_run):
        probe, _ = finished_run
        out = probe.out
        for r in range(2):
            assert load_model(out / "models" / f"replicate-{r}.nnmod").output_layer == 3
            assert (out / "logs" / f"replicate-{r}.csv").read_text().startswith("# config_hash=")
            for basis in ("weights", "activations"):
                assert (out / "graphs" / f"replicate-{r}" / f"{basis}-global.txt").exists()
            for method in probe.settings.methods:
                assert probe.partition_path(3, r, method).exists()
        for metric in ("acc_drop", "class_range", "vis_score", "softmax_entropy"):
            assert (out / "measurements" / f"{metric}.csv").exists()
        assert (out / "models" / "manifest.csv").exists()
        assert (out / "corrvis" / "index.csv").exists()
        assert (out / "reports" / "report.csv").exists()
        assert (out / "reports" / "pvalues.svg").exists()
        assert not (out / INCOMPLETE_MARKER).exists()

    def test_report_contents(self, finished_run):
        probe, result = finished_run
        report = json.loads((probe.out / "reports" / "report.json").read_text())
        assert report["config_hash"] == probe.settings.config_hash()
        assert report["header"]["k"] == 3
        assert len(result) == len(report["entries"])
        for row in result:
            assert 0.0 <= row["p_value"] <= 1.0
            assert row["network"] == "mlp-8x2"

    def test_feature_images_written(self, finished_run):
        probe, _ = finished_run
        images = sorted((probe.out / "images").glob("replicate-*/*/*.pgm"))
        rows = (probe.out / "measurements" / "vis_score.csv").read_text().splitlines()[2:]
        assert len(images) == len(rows)
        assert all(image.read_bytes().startswith(b"P5") for image in images)

    def test_cluster_stage_is_reproducible(self, finished_run):
        probe, _ = finished_run
        path = probe.partition_path(3, 0, "activations/local")
        before = path.read_bytes()
        probe.cluster()
        assert path.read_bytes() == before

    def test_report_filter(self, finished_run):
        probe, _ = finished_run
        rows = probe.report("contains(method,weights)&select(method,metric)", "json")
        assert rows
        assert all(set(row) == {"method", "metric"} for row in rows)
        assert all(row["method"].startswith("weights") for row in rows)
