"""Test layered configuration and the config hash."""

import os
from pathlib import Path

import pytest

from modprobe.config import load_settings, parse_config_file
from modprobe.errors import InvalidArgumentError

pytestmark = pytest.mark.fast


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch, tmp_path):
    """Keep stray MODPROBE_* variables and .env files out of the tests."""
    for name in list(os.environ):
        if name.startswith("MODPROBE_"):
            monkeypatch.delenv(name)
    monkeypatch.chdir(tmp_path)


def write_config(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "modprobe.conf"
    path.write_text(text)
    return path


class TestPrecedence:
    """Test flags > env > config file > defaults."""

    def test_defaults(self):
        settings = load_settings()
        assert settings.k == 16
        assert settings.replicates == 5
        assert settings.random_count == 19
        assert settings.architecture == "mlp-256x4"

    def test_file_over_defaults(self, tmp_path):
        settings = load_settings(write_config(tmp_path, "seed = 3\n# comment\n\nk=8\n"))
        assert (settings.seed, settings.k) == (3, 8)

    def test_env_over_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MODPROBE_SEED", "5")
        assert load_settings(write_config(tmp_path, "seed=3\n")).seed == 5

    def test_flag_over_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MODPROBE_SEED", "5")
        assert load_settings(write_config(tmp_path, "seed=3\n"), seed=9).seed == 9

    def test_unset_flags_ignored(self):
        assert load_settings(None, seed=None, k=None).k == 16


class TestValidation:
    """Test rejected configurations."""

    def test_unknown_key(self, tmp_path):
        with pytest.raises(InvalidArgumentError, match="unknown config keys"):
            load_settings(write_config(tmp_path, "seeed=3\n"))

    def test_malformed_line(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            parse_config_file(write_config(tmp_path, "just words\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            load_settings(tmp_path / "absent.conf")

    @pytest.mark.parametrize(
        "overrides",
        [
            {"k": 1},
            {"methods": "weights/global,bogus"},
            {"metrics": "accuracy"},
            {"architecture": "resnet-50"},
            {"replicates": 0},
            {"replicates": 26},
            {"k_sweep": "8,1"},
        ],
    )
    def test_invalid_values(self, overrides):
        with pytest.raises(InvalidArgumentError, match="invalid configuration"):
            load_settings(**overrides)

    def test_most_replicates_accepted(self):
        assert load_settings(replicates=25).replicates == 25

    def test_too_many_replicates_from_env(self, monkeypatch):
        monkeypatch.setenv("MODPROBE_REPLICATES", "26")
        with pytest.raises(InvalidArgumentError, match="replicates"):
            load_settings()

    def test_comma_lists_in_canonical_order(self, tmp_path):
        settings = load_settings(write_config(tmp_path, "methods=activations/local,weights/global\n"))
        assert settings.methods == ["weights/global", "activations/local"]

    def test_list_from_env(self, monkeypatch):
        monkeypatch.setenv("MODPROBE_METRICS", "vis_score")
        assert load_settings().metrics == ["vis_score"]


class TestDerived:
    """Test derived values."""

    def test_cluster_counts(self):
        assert load_settings().cluster_counts() == [16]
        assert load_settings(k_sweep="8,12,16").cluster_counts() == [8, 12, 16]

    def test_train_config_recipe(self):
        config = load_settings(seed=4).train_config(replicate=2)
        assert (config.epochs, config.batch_size, config.seed) == (20, 128, 6)
        assert load_settings(architecture="cnn-small").train_config(0).epochs == 10
        assert load_settings(epochs=1).train_config(0).epochs == 1

    def test_hash_ignores_runtime_fields(self, tmp_path):
        base = load_settings().config_hash()
        assert load_settings(out=tmp_path / "elsewhere", workers=4).config_hash() == base
        assert load_settings(seed=1).config_hash() != base
        assert len(base) == 16

    def test_artifact_header(self):
        settings = load_settings(seed=2)
        assert settings.artifact_header() == f"config_hash={settings.config_hash()} seed=2"
