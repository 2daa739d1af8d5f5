"""Activation-maximization visualizations of subclusters.

The image is a plain pixel parameterization optimised by Adam ascent on the
L1 norm of the subcluster's pre-ReLU activations. Each step evaluates the
gradient on a randomly jittered and rescaled copy of the image and maps it
back through the same pixel index map.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .errors import NumericFailureError
from .model import NetworkModel, activation_objective, forward
from .neurons import Subcluster
from .trainer import AdamState, TrainConfig, adam_step

DEFAULT_STEPS = 100
DEFAULT_LEARNING_RATE = 0.05
DEFAULT_JITTER = 2
DEFAULT_SCALE = (0.95, 1.05)
INIT_RANGE = (0.25, 0.75)


@dataclass(frozen=True, eq=False)
class FeatureVisualization:
    subcluster: Subcluster
    image: np.ndarray
    score: float
    softmax_entropy: float
    initial_score: float
    steps: int
    seed: int


def softmax_entropy(model: NetworkModel, image: np.ndarray) -> float:
    """Entropy in nats of the model's softmax output for one image."""
    probs = forward(model, np.asarray(image, dtype=np.float64)[None]).softmax[0]
    entropy = float(entr(probs).sum())
    upper = float(np.log(model.class_count))
    if not -1e-12 <= entropy <= upper + 1e-12:
        raise NumericFailureError(f"softmax entropy {entropy} outside [0, ln {model.class_count}]")
    return min(max(entropy, 0.0), upper)


def _index_map(
    height: int, width: int, shift: tuple[int, int], scale: float
) -> tuple[np.ndarray, np.ndarray]:
    """Source pixel (flat index) for each output pixel of a centred rescale followed by a shift."""
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    sy = np.floor((ys - shift[0] - cy) / scale + cy + 0.5).astype(np.int64)
    sx = np.floor((xs - shift[1] - cx) / scale + cx + 0.5).astype(np.int64)
    valid = (sy >= 0) & (sy < height) & (sx >= 0) & (sx < width)
    return np.where(valid, sy * width + sx, 0).ravel(), valid.ravel()


def _transform(image: np.ndarray, source: np.ndarray, valid: np.ndarray) -> np.ndarray:
    h, w, c = image.shape
    flat = image.reshape(h * w, c)
    out = np.where(valid[:, None], flat[source], 0.0)
    return out.reshape(h, w, c)


def _untransform_gradient(grad: np.ndarray, source: np.ndarray, valid: np.ndarray) -> np.ndarray:
    h, w, c = grad.shape
    back = np.zeros((h * w, c))
    np.add.at(back, source[valid], grad.reshape(h * w, c)[valid])
    return back.reshape(h, w, c)


def visualize_subcluster(
    model: NetworkModel,
    c: Subcluster,
    steps: int = DEFAULT_STEPS,
    seed: int = 0,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    jitter: int = DEFAULT_JITTER,
    scale_range: tuple[float, float] = DEFAULT_SCALE,
) -> FeatureVisualization:
    """Adam ascent from seeded uniform noise; pixels clamped to [0, 1] after every step."""
    rng = np.random.default_rng(seed)
    image = rng.uniform(*INIT_RANGE, size=model.input_shape)
    initial_score, _ = activation_objective(model, image, c)
    transformable = image.ndim == 3
    config = TrainConfig(learning_rate=learning_rate)
    state = AdamState.zeros_like([{"image": image}])

    for _ in range(steps):
        if transformable:
            shift = tuple(int(s) for s in rng.integers(-jitter, jitter + 1, size=2))
            scale = float(rng.uniform(*scale_range))
            source, valid = _index_map(image.shape[0], image.shape[1], shift, scale)
            _, grad = activation_objective(model, _transform(image, source, valid), c)
            grad = _untransform_gradient(grad, source, valid)
        else:
            _, grad = activation_objective(model, image, c)
        params, state = adam_step([{"image": image}], [{"image": -grad}], state, config)
        image = np.clip(params[0]["image"], 0.0, 1.0)

    score, _ = activation_objective(model, image, c)
    return FeatureVisualization(
        subcluster=c,
        image=image,
        score=score,
        softmax_entropy=softmax_entropy(model, image),
        initial_score=initial_score,
        steps=steps,
        seed=seed,
    )
