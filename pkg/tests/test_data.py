"""Test IDX ingestion, the halves task, splits and batching."""

import gzip
import struct

import numpy as np
import pytest

from modprobe.data import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    LabeledDataset,
    carve_validation,
    halve_width,
    iter_batches,
    load_idx_pair,
    make_halves_dataset,
    split,
    write_idx_pair,
)
from modprobe.errors import FormatError, InvalidArgumentError

from .conftest import make_dataset

pytestmark = pytest.mark.fast


def write_raw_idx(tmp_path, pixels: np.ndarray, labels: np.ndarray):
    images_path = tmp_path / "images.idx"
    labels_path = tmp_path / "labels.idx"
    n, h, w = pixels.shape
    images_path.write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, h, w) + pixels.astype(np.uint8).tobytes())
    labels_path.write_bytes(struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes())
    return images_path, labels_path


class TestIdx:
    """Test IDX file loading."""

    def test_standard_headers(self, tmp_path):
        pixels = np.random.default_rng(0).integers(0, 256, size=(10, 28, 28))
        images, labels = write_raw_idx(tmp_path, pixels, np.arange(10))
        dataset = load_idx_pair(images, labels)
        assert len(dataset) == 10
        assert dataset.image_shape == (28, 28, 1)
        np.testing.assert_allclose(dataset.images[..., 0], pixels / 255.0)

    def test_all_zero_pixels(self, tmp_path):
        images, labels = write_raw_idx(tmp_path, np.zeros((3, 4, 4)), np.array([1, 2, 3]))
        assert np.all(load_idx_pair(images, labels).images == 0.0)

    def test_count_mismatch(self, tmp_path):
        images, labels = write_raw_idx(tmp_path, np.zeros((3, 4, 4)), np.array([1, 2]))
        with pytest.raises(FormatError):
            load_idx_pair(images, labels)

    def test_wrong_magic(self, tmp_path):
        images, labels = write_raw_idx(tmp_path, np.zeros((3, 4, 4)), np.array([1, 2, 3]))
        images, labels = labels, images
        with pytest.raises(FormatError) as excinfo:
            load_idx_pair(images, labels)
        assert excinfo.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        images, labels = write_raw_idx(tmp_path, np.zeros((3, 4, 4)), np.array([1, 2, 3]))
        images.write_bytes(images.read_bytes()[:-5])
        with pytest.raises(FormatError, match="truncated"):
            load_idx_pair(images, labels)

    def test_gzip_inputs(self, tmp_path):
        images, labels = write_raw_idx(tmp_path, np.full((2, 4, 4), 51), np.array([4, 5]))
        gz = tmp_path / "images.idx.gz"
        gz.write_bytes(gzip.compress(images.read_bytes()))
        np.testing.assert_allclose(load_idx_pair(gz, labels).images, 0.2)

    def test_write_round_trip(self, tmp_path):
        dataset = make_dataset(20)
        write_idx_pair(dataset, tmp_path / "i", tmp_path / "l")
        loaded = load_idx_pair(tmp_path / "i", tmp_path / "l")
        np.testing.assert_allclose(loaded.images, dataset.images, atol=1e-12)
        np.testing.assert_array_equal(loaded.labels, dataset.labels)


class TestHalves:
    """Test the halves task."""

    @pytest.mark.parametrize("labels", [(7, 8), (3, 0)])
    def test_labels_are_sum_mod_ten(self, labels):
        images = np.zeros((2, 4, 4, 1))
        images[0] = 0.2
        images[1] = 0.8
        halves = make_halves_dataset(LabeledDataset(images, np.array(labels)), seed=0)
        digit = {0.2: labels[0], 0.8: labels[1]}
        for image, label in zip(halves.images, halves.labels, strict=True):
            left, right = digit[round(float(image[0, 0, 0]), 1)], digit[round(float(image[0, 3, 0]), 1)]
            assert label == (left + right) % 10

    def test_shape_preserved(self):
        halves = make_halves_dataset(make_dataset(30), seed=1)
        assert halves.image_shape == (8, 8, 1)
        assert len(halves) == 30

    def test_deterministic(self):
        a = make_halves_dataset(make_dataset(30), seed=5)
        b = make_halves_dataset(make_dataset(30), seed=5)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_odd_width(self):
        with pytest.raises(InvalidArgumentError):
            halve_width(np.zeros((1, 5, 5, 1)))


class TestSplits:
    """Test deterministic splits and batches."""

    def test_everything_in_train(self):
        train, validation, test = split(make_dataset(25), (1.0, 0.0, 0.0), seed=0)
        assert (len(train), len(validation), len(test)) == (25, 0, 0)

    def test_same_seed_same_assignment(self):
        dataset = make_dataset(40)
        first = split(dataset, (0.5, 0.25, 0.25), seed=3)
        second = split(dataset, (0.5, 0.25, 0.25), seed=3)
        for a, b in zip(first, second, strict=True):
            np.testing.assert_array_equal(a.images, b.images)

    def test_parts_are_disjoint_and_exhaustive(self):
        dataset = LabeledDataset(np.arange(40.0).reshape(40, 1, 1, 1) / 40.0, np.arange(40) % 10)
        parts = split(dataset, (0.5, 0.3, 0.2), seed=1)
        values = np.concatenate([p.images.ravel() for p in parts])
        assert sorted(values.tolist()) == sorted(dataset.images.ravel().tolist())
        assert [p.split for p in parts] == ["train", "validation", "test"]

    def test_bad_fractions(self):
        with pytest.raises(InvalidArgumentError):
            split(make_dataset(10), (0.5, 0.6, 0.0), seed=0)

    def test_carve_validation(self):
        rest, validation = carve_validation(make_dataset(100), 0.1, seed=0)
        assert (len(rest), len(validation)) == (90, 10)

    def test_batches_cover_every_index(self):
        batches = list(iter_batches(10, 4, seed=1, epoch=2))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))

    def test_batches_change_per_epoch(self):
        first = np.concatenate(list(iter_batches(50, 8, seed=1, epoch=0)))
        second = np.concatenate(list(iter_batches(50, 8, seed=1, epoch=1)))
        assert not np.array_equal(first, second)
