"""Adam training of MLPs and small CNNs with categorical cross-entropy.

PUBLIC API:
- TrainConfig, AdamState, adam_step(params, grads, state, config)
- parse_architecture(descriptor) / recipe_for(descriptor)
- init_params(architecture, seed, input_shape, class_count) -> NetworkModel
- train(model, train_set, config, test_set=None) -> (NetworkModel, TrainingLog)
"""

import logging
import re
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .data import LabeledDataset, iter_batches
from .errors import InvalidArgumentError
from .lesion import accuracy
from .model import (
    Conv2D,
    Dense,
    Flatten,
    LayerSpec,
    MaxPool2x2,
    NetworkModel,
    ReLU,
    SoftmaxOutput,
    loss_and_gradients,
)

logger = logging.getLogger(__name__)

Params = list[dict[str, np.ndarray]]

# (epochs, batch size) per architecture family
RECIPES = {"mlp": (20, 128), "cnn": (10, 64)}
CNN_CHANNELS = 64
CNN_DENSE = 128


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(0.001, ge=0.0)
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.999, gt=0.0, lt=1.0)
    epsilon: float = Field(1e-7, gt=0.0)
    epochs: int = Field(20, ge=0)
    batch_size: int = Field(128, ge=1)
    seed: int = 0


@dataclass
class AdamState:
    first_moment: Params
    second_moment: Params
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls(
            [{k: np.zeros_like(v) for k, v in p.items()} for p in params],
            [{k: np.zeros_like(v) for k, v in p.items()} for p in params],
        )


def adam_step(
    params: Params, grads: Params, state: AdamState, config: TrainConfig
) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update; returns new parameters and a new state."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise InvalidArgumentError("parameter, gradient and state lists differ in length")

    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment, strict=True):
        if p.keys() != g.keys():
            raise InvalidArgumentError(f"gradient keys {sorted(g)} do not match parameters {sorted(p)}")
        p_out, m_out, v_out = {}, {}, {}
        for name, value in p.items():
            grad = g[name]
            if grad.shape != value.shape:
                raise InvalidArgumentError(f"gradient for '{name}' has shape {grad.shape}, expected {value.shape}")
            m_out[name] = b1 * m[name] + (1.0 - b1) * grad
            v_out[name] = b2 * v[name] + (1.0 - b2) * grad * grad
            m_hat = m_out[name] / correction1
            v_hat = v_out[name] / correction2
            p_out[name] = value - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        new_params.append(p_out)
        new_m.append(m_out)
        new_v.append(v_out)
    return new_params, AdamState(new_m, new_v, t)


# =============================================================================
# ARCHITECTURES
# =============================================================================


@dataclass(frozen=True)
class Architecture:
    family: str  # "mlp" | "cnn"
    width: int = 0
    depth: int = 0


_MLP_PATTERN = re.compile(r"^mlp-(\d+)x(\d+)$")


def parse_architecture(descriptor: str) -> Architecture:
    if descriptor == "cnn-small":
        return Architecture("cnn")
    match = _MLP_PATTERN.match(descriptor)
    if not match:
        raise InvalidArgumentError(f"unknown architecture '{descriptor}' (use mlp-<width>x<depth> or cnn-small)")
    width, depth = int(match.group(1)), int(match.group(2))
    if width < 1 or depth < 1:
        raise InvalidArgumentError(f"architecture '{descriptor}' needs positive width and depth")
    return Architecture("mlp", width, depth)


def recipe_for(descriptor: str) -> tuple[int, int]:
    return RECIPES[parse_architecture(descriptor).family]


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> Dense:
    return Dense(_glorot(rng, (fan_out, fan_in), fan_in, fan_out), np.zeros(fan_out))


def _conv(rng: np.random.Generator, in_channels: int, out_channels: int) -> Conv2D:
    shape = (out_channels, in_channels, 3, 3)
    return Conv2D(_glorot(rng, shape, in_channels * 9, out_channels * 9), np.zeros(out_channels))


def init_params(
    architecture: str | Architecture,
    seed: int,
    input_shape: tuple[int, ...] = (28, 28, 1),
    class_count: int = 10,
) -> NetworkModel:
    """Glorot-uniform weights and zero biases, deterministic per seed."""
    arch = parse_architecture(architecture) if isinstance(architecture, str) else architecture
    rng = np.random.default_rng(seed)
    layers: list[LayerSpec] = []

    if arch.family == "mlp":
        if len(input_shape) == 3:
            layers.append(Flatten())
        fan_in = int(np.prod(input_shape))
        for _ in range(arch.depth):
            layers += [_dense(rng, fan_in, arch.width), ReLU()]
            fan_in = arch.width
        layers += [_dense(rng, fan_in, class_count), SoftmaxOutput()]
    else:
        if len(input_shape) != 3:
            raise InvalidArgumentError("cnn-small needs (H, W, C) inputs")
        h, w, c = input_shape
        layers += [
            _conv(rng, c, CNN_CHANNELS),
            ReLU(),
            _conv(rng, CNN_CHANNELS, CNN_CHANNELS),
            ReLU(),
            MaxPool2x2(),
            _conv(rng, CNN_CHANNELS, CNN_CHANNELS),
            ReLU(),
            MaxPool2x2(),
            Flatten(),
        ]
        flat = (h // 2 // 2) * (w // 2 // 2) * CNN_CHANNELS
        layers += [_dense(rng, flat, CNN_DENSE), ReLU(), _dense(rng, CNN_DENSE, class_count), SoftmaxOutput()]

    return NetworkModel(tuple(layers), tuple(input_shape), class_count)


# =============================================================================
# TRAINING LOOP
# =============================================================================


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float | None = None


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [
            {
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "train_acc": e.train_acc,
                "test_acc": e.test_acc,
            }
            for e in self.epochs
        ]


def train(
    model: NetworkModel,
    train_set: LabeledDataset,
    config: TrainConfig,
    test_set: LabeledDataset | None = None,
) -> tuple[NetworkModel, TrainingLog]:
    """Mini-batch Adam on mean cross-entropy; bitwise reproducible per config.seed."""
    if model.class_count != train_set.class_count:
        raise InvalidArgumentError(
            f"model has {model.class_count} outputs but the dataset has {train_set.class_count} classes"
        )
    if len(train_set) == 0:
        raise InvalidArgumentError("training set is empty")

    params = model.parameters()
    state = AdamState.zeros_like(params)
    log = TrainingLog()

    for epoch in range(config.epochs):
        loss_sum = 0.0
        correct = 0
        for batch in iter_batches(len(train_set), config.batch_size, config.seed, epoch):
            x = train_set.images[batch]
            y = train_set.labels[batch]
            loss, grads, probs = loss_and_gradients(model, x, y)
            params, state = adam_step(params, grads, state, config)
            model = model.with_parameters(params)
            loss_sum += loss * len(batch)
            correct += int((probs.argmax(axis=1) == y).sum())

        stats = EpochStats(
            epoch=epoch + 1,
            train_loss=loss_sum / len(train_set),
            train_acc=correct / len(train_set),
            test_acc=accuracy(model, test_set) if test_set is not None else None,
        )
        log.epochs.append(stats)
        logger.info(
            f"epoch {stats.epoch}/{config.epochs}: loss={stats.train_loss:.4f} "
            f"train_acc={stats.train_acc:.4f} test_acc={stats.test_acc}"
        )

    return model, log
