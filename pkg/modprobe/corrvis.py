"""Correlation-based subcluster visualization and side selectivity for the halves task.

PUBLIC API:
- neuron_pixel_map(model, dataset, neuron) / layer_pixel_maps(model, dataset, layer)
- sign_align(maps, iters=20)
- cluster_visualization(model, dataset, subcluster, maps=None)
- side_selectivity(image)
- selectivity_comparison(true_values, random_values) -> SelectivityComparison
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import LabeledDataset
from .errors import InvalidArgumentError, UnsupportedError
from .linalg import spearman_matrix
from .model import NetworkModel, activation_series
from .neurons import NeuronRef, Subcluster

SIGN_ALIGN_ITERS = 20
MIN_EXAMPLES = 100


def _check_dense_layer(model: NetworkModel, layer: int) -> None:
    if model.is_convolutional:
        raise UnsupportedError("pixel correlation maps are defined for MLPs only")
    if model.unit(layer).kind != "dense":
        raise UnsupportedError(f"layer {layer} is not a dense layer")


def layer_pixel_maps(model: NetworkModel, dataset: LabeledDataset, layer: int) -> np.ndarray:
    """(width, *image_shape) Spearman correlations between each neuron and each pixel."""
    _check_dense_layer(model, layer)
    if len(dataset) < MIN_EXAMPLES:
        raise InvalidArgumentError(f"need at least {MIN_EXAMPLES} examples, got {len(dataset)}")
    activations = activation_series(model, dataset.images, [layer])[layer]
    pixels = dataset.images.reshape(len(dataset), -1)
    maps = spearman_matrix(activations.T, pixels.T)
    return maps.reshape((activations.shape[1], *dataset.images.shape[1:]))


def neuron_pixel_map(model: NetworkModel, dataset: LabeledDataset, neuron: NeuronRef) -> np.ndarray:
    layer, index = neuron
    maps = layer_pixel_maps(model, dataset, layer)
    if not 0 <= index < maps.shape[0]:
        raise InvalidArgumentError(f"neuron index {index} out of range for layer {layer}")
    return maps[index]


def sign_align(maps: Sequence[np.ndarray], iters: int = SIGN_ALIGN_ITERS) -> list[np.ndarray]:
    """Flip maps whose summed cosine with the others is negative, sweeping in index order."""
    vectors = [np.asarray(m, dtype=np.float64).ravel().copy() for m in maps]
    norms = np.array([np.linalg.norm(v) for v in vectors])
    units = [v / n if n > 0 else np.zeros_like(v) for v, n in zip(vectors, norms, strict=True)]
    total = np.sum(units, axis=0) if units else None

    for _ in range(iters):
        flipped = False
        for i, unit in enumerate(units):
            if norms[i] == 0:
                continue
            if float(unit @ (total - unit)) < 0:
                total = total - 2.0 * unit
                units[i] = -unit
                vectors[i] = -vectors[i]
                flipped = True
        if not flipped:
            break

    return [v.reshape(np.shape(m)) for v, m in zip(vectors, maps, strict=True)]


def rescale_unit(image: np.ndarray) -> np.ndarray:
    low, high = float(image.min()), float(image.max())
    if high == low:
        return np.full_like(image, 0.5)
    return (image - low) / (high - low)


def cluster_visualization(
    model: NetworkModel,
    dataset: LabeledDataset,
    subcluster: Subcluster,
    maps: np.ndarray | None = None,
) -> np.ndarray:
    """Mean of the sign-aligned neuron maps of a subcluster, rescaled to [0, 1]."""
    if maps is None:
        maps = layer_pixel_maps(model, dataset, subcluster.layer)
    else:
        _check_dense_layer(model, subcluster.layer)
    if not subcluster.indices:
        raise InvalidArgumentError("cannot visualize an empty subcluster")
    aligned = sign_align([maps[i] for i in subcluster.indices])
    return rescale_unit(np.mean(aligned, axis=0))


def side_selectivity(image: np.ndarray) -> float:
    """|m_L - m_R| / (m_L + m_R) over the deviation |image - 0.5| of each half."""
    pixels = np.asarray(image, dtype=np.float64)
    if pixels.ndim == 3:
        pixels = pixels.sum(axis=2) if pixels.shape[2] > 1 else pixels[..., 0]
    width = pixels.shape[1]
    if width % 2:
        raise InvalidArgumentError(f"image width {width} is odd")
    deviation = np.abs(pixels - 0.5)
    left = float(deviation[:, : width // 2].sum())
    right = float(deviation[:, width // 2 :].sum())
    if left + right == 0.0:
        return 0.0
    return abs(left - right) / (left + right)


@dataclass(frozen=True)
class SelectivityComparison:
    true_mean: float
    random_mean: float
    statistic: float
    p_value: float


def selectivity_comparison(
    true_values: Sequence[float], random_values: Sequence[float]
) -> SelectivityComparison:
    """One-sided Mann-Whitney U test that true subclusters are more side-selective."""
    if not len(true_values) or not len(random_values):
        raise InvalidArgumentError("both samples must be non-empty")
    result = stats.mannwhitneyu(true_values, random_values, alternative="greater")
    return SelectivityComparison(
        true_mean=float(np.mean(true_values)),
        random_mean=float(np.mean(random_values)),
        statistic=float(result.statistic),
        p_value=float(result.pvalue),
    )
