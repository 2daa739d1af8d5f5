"""Test the modprobe CLI through subprocess calls."""

import json
import os
import subprocess
import sys

import pytest

pytestmark = pytest.mark.cli


def run_cli(*args: str, cwd, timeout: int = 60) -> subprocess.CompletedProcess:
    env = {name: value for name, value in os.environ.items() if not name.startswith("MODPROBE_")}
    return subprocess.run(
        [sys.executable, "-m", "modprobe.cli", *args],
        capture_output=True,
        text=True,
        timeout=timeout,
        cwd=cwd,
        env=env,
    )


def write_config(tmp_path, idx_files, **extra) -> str:
    settings = {
        **{name: str(path) for name, path in idx_files.items()},
        "architecture": "mlp-8x2",
        "replicates": 2,
        "epochs": 1,
        "batch_size": 32,
        "k": 3,
        "vis_steps": 2,
        "random_count": 4,
        "validation_fraction": 0.5,
        **extra,
    }
    path = tmp_path / "modprobe.conf"
    path.write_text("".join(f"{key}={value}\n" for key, value in settings.items()))
    return str(path)


class TestUsage:
    """Test help and argument errors."""

    def test_help(self, tmp_path):
        result = run_cli("--help", cwd=tmp_path)
        assert result.returncode == 0
        for command in ("train", "graphify", "cluster", "lesion", "featvis", "corrvis", "stats", "report", "all"):
            assert command in result.stdout

    def test_missing_dataset(self, tmp_path):
        result = run_cli("train", "--out", str(tmp_path / "run"), cwd=tmp_path)
        assert result.returncode == 2
        assert "train_images" in result.stderr

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "bad.conf").write_text("clusters=4\n")
        result = run_cli("train", "--config", str(tmp_path / "bad.conf"), cwd=tmp_path)
        assert result.returncode == 2
        assert "unknown config keys" in result.stderr

    def test_invalid_flag_value(self, tmp_path):
        result = run_cli("cluster", "--k", "1", "--out", str(tmp_path / "run"), cwd=tmp_path)
        assert result.returncode == 2

    def test_bad_report_format(self, tmp_path):
        result = run_cli("report", "--format", "xml", "--out", str(tmp_path), cwd=tmp_path)
        assert result.returncode == 2
        assert "Unsupported format" in result.stderr


class TestStages:
    """Test stage commands without trained networks."""

    def test_no_reports(self, tmp_path):
        result = run_cli("report", "--out", str(tmp_path / "empty"), cwd=tmp_path)
        assert result.returncode == 0
        assert "no reports" in result.stdout

    def test_stage_without_models_flags_incomplete(self, tmp_path):
        out = tmp_path / "run"
        result = run_cli("graphify", "--out", str(out), cwd=tmp_path)
        assert result.returncode == 1
        assert "modprobe train" in result.stderr
        assert (out / "INCOMPLETE").read_text().startswith("stage=graphify")


@pytest.mark.slow
class TestPipeline:
    """Test the full pipeline from the command line."""

    def test_all_then_report(self, tmp_path, idx_files):
        config = write_config(tmp_path, idx_files)
        out = tmp_path / "run"
        methods = "weights/global,activations/global"
        result = run_cli("all", "--config", config, "--out", str(out), "--methods", methods, cwd=tmp_path, timeout=600)
        assert result.returncode == 0, result.stderr
        rows = json.loads(result.stdout)
        assert {row["method"] for row in rows} <= {"weights/global", "activations/global"}
        assert (out / "reports" / "report.json").exists()
        assert not (out / "INCOMPLETE").exists()

        exported = tmp_path / "filtered.csv"
        rql = "lt(p_value,1.1)&select(method,metric,p_value)"
        result = run_cli("report", "--out", str(out), "--rql", rql, "--format", "csv", "--output", str(exported), cwd=tmp_path)
        assert result.returncode == 0, result.stderr
        assert exported.read_text().splitlines()[0] == "method,metric,p_value"

    def test_stages_one_by_one(self, tmp_path, idx_files):
        config = write_config(tmp_path, idx_files, metrics="acc_drop,class_range")
        out = str(tmp_path / "run")
        for stage in ("train", "graphify", "cluster", "lesion", "stats"):
            result = run_cli(
                stage, "--config", config, "--out", out, "--methods", "weights/global", cwd=tmp_path, timeout=300
            )
            assert result.returncode == 0, f"{stage}: {result.stderr}"
        assert (tmp_path / "run" / "measurements" / "acc_drop.csv").exists()
        assert not (tmp_path / "run" / "measurements" / "vis_score.csv").exists()
