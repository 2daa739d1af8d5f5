"""Pytest configuration with tiny models, toy datasets and IDX fixtures for modprobe testing."""

from pathlib import Path

import numpy as np
import pytest

from modprobe.data import LabeledDataset, write_idx_pair
from modprobe.model import Dense, Flatten, NetworkModel, ReLU, SoftmaxOutput
from modprobe.trainer import init_params

IMAGE_SIDE = 8


def make_dataset(n: int, seed: int = 0, side: int = IMAGE_SIDE, split: str = "train") -> LabeledDataset:
    """Random images whose label is encoded by a bright pixel, every class present."""
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 0.3, size=(n, side, side, 1))
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    for i, label in enumerate(labels):
        images[i, (label // 4) * 2, (label % 4) * 2, 0] = 1.0
    return LabeledDataset(np.round(images * 255.0) / 255.0, labels, split)


def dense_model(*weights: np.ndarray, input_shape: tuple[int, ...] | None = None) -> NetworkModel:
    """Dense layers with zero biases and ReLU between them."""
    layers = []
    if input_shape is not None and len(input_shape) == 3:
        layers.append(Flatten())
    for i, w in enumerate(weights):
        w = np.asarray(w, dtype=np.float64)
        layers.append(Dense(w, np.zeros(w.shape[0])))
        if i < len(weights) - 1:
            layers.append(ReLU())
    layers.append(SoftmaxOutput())
    shape = input_shape or (np.asarray(weights[0]).shape[1],)
    return NetworkModel(tuple(layers), shape, np.asarray(weights[-1]).shape[0])


@pytest.fixture
def toy_dataset():
    return make_dataset(200, seed=1)


@pytest.fixture
def toy_test_set():
    return make_dataset(120, seed=2, split="test")


@pytest.fixture
def tiny_mlp():
    """Untrained mlp-8x2 on 8x8 single-channel images."""
    return init_params("mlp-8x2", seed=0, input_shape=(IMAGE_SIDE, IMAGE_SIDE, 1))


@pytest.fixture
def tiny_cnn():
    return init_params("cnn-small", seed=0, input_shape=(IMAGE_SIDE, IMAGE_SIDE, 1))


@pytest.fixture
def idx_files(tmp_path) -> dict[str, Path]:
    """Train/test IDX pairs of toy 8x8 digits written to tmp_path."""
    paths = {
        "train_images": tmp_path / "train-images-idx3-ubyte",
        "train_labels": tmp_path / "train-labels-idx1-ubyte",
        "test_images": tmp_path / "t10k-images-idx3-ubyte",
        "test_labels": tmp_path / "t10k-labels-idx1-ubyte",
    }
    write_idx_pair(make_dataset(300, seed=3), paths["train_images"], paths["train_labels"])
    write_idx_pair(make_dataset(150, seed=4, split="test"), paths["test_images"], paths["test_labels"])
    return paths


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "fast: Fast tests for regular development")
    config.addinivalue_line("markers", "slow: Slow tests that train networks or run the pipeline")
    config.addinivalue_line("markers", "cli: CLI interface tests (slow - uses subprocess)")
