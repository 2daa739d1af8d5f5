"""Network representation, inference, lesioning and gradients.

A NetworkModel is an immutable, ordered list of layers. Everything here runs
in float64 numpy; model files store float32 and are promoted on load.

PUBLIC API:
- forward(model, batch) -> ActivationRecord
- predict(model, images, batch_size) -> softmax probabilities
- activation_series(model, images, layers, batch_size) -> per-layer (N, width) series
- mask_neurons(model, c) -> MaskedModel
- zero_neurons(model, mask) -> NetworkModel with the weights literally zeroed
- loss_and_gradients(model, batch, labels) / param_gradients(model, batch, labels)
- activation_objective(model, image, c) / input_gradient(model, image, c)
- save_model(model, path) / load_model(path)
"""

import struct
import zlib
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, NumericFailureError, UnsupportedError
from .neurons import LesionMask, Subcluster

MAGIC = b"NNMOD1\0\0"


# =============================================================================
# LAYERS
# =============================================================================


@dataclass(frozen=True, eq=False)
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    tag = 1


@dataclass(frozen=True, eq=False)
class Conv2D:
    """3x3 kernels, stride 1, same zero padding, channels-last activations."""

    kernels: np.ndarray  # (out, in, 3, 3)
    bias: np.ndarray  # (out,)
    tag = 2


@dataclass(frozen=True, eq=False)
class BatchNorm:
    """Inference-mode batch norm: gamma * (x - mean) / (std + epsilon) + beta."""

    gamma: np.ndarray
    beta: np.ndarray
    moving_mean: np.ndarray
    moving_std: np.ndarray
    epsilon: float = 1e-3
    tag = 3

    def scale(self) -> np.ndarray:
        return self.gamma / (self.moving_std + self.epsilon)


@dataclass(frozen=True)
class ReLU:
    tag = 4


@dataclass(frozen=True)
class MaxPool2x2:
    tag = 5


@dataclass(frozen=True)
class Flatten:
    tag = 6


@dataclass(frozen=True)
class SoftmaxOutput:
    tag = 7


LayerSpec = Dense | Conv2D | BatchNorm | ReLU | MaxPool2x2 | Flatten | SoftmaxOutput
WEIGHT_LAYERS = (Dense, Conv2D)


@dataclass(frozen=True)
class UnitLayer:
    """A layer of neurons: the input, or the output of one Dense/Conv2D layer."""

    layer_id: int
    position: int  # index into NetworkModel.layers, -1 for the input
    kind: str  # "input" | "dense" | "conv"
    width: int
    capture: int  # position after which its pre-ReLU value is recorded
    is_output: bool = False


# =============================================================================
# MODEL
# =============================================================================


@dataclass(frozen=True, eq=False)
class NetworkModel:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    class_count: int
    units: tuple[UnitLayer, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "units", self._validate())

    def _validate(self) -> tuple[UnitLayer, ...]:
        if len(self.input_shape) not in (1, 3):
            raise InvalidArgumentError(f"input shape must be (d,) or (H, W, C), got {self.input_shape}")
        if not self.layers or not isinstance(self.layers[-1], SoftmaxOutput):
            raise InvalidArgumentError("model must end with a single SoftmaxOutput layer")

        units = [
            UnitLayer(0, -1, "input", int(np.prod(self.input_shape)), capture=-1)
        ]
        shape = self.input_shape
        for pos, layer in enumerate(self.layers):
            name = f"layer {pos} ({type(layer).__name__})"
            for tensor in _parameters(layer).values():
                if not np.all(np.isfinite(tensor)):
                    raise NumericFailureError(f"{name} has non-finite parameters")
            match layer:
                case Dense(weights=w, bias=b):
                    if len(shape) != 1 or w.ndim != 2 or w.shape[1] != shape[0]:
                        raise InvalidArgumentError(f"{name} expects input {w.shape[1:]}, got {shape}")
                    if b.shape != (w.shape[0],):
                        raise InvalidArgumentError(f"{name} bias shape {b.shape} does not match")
                    shape = (w.shape[0],)
                    units.append(UnitLayer(len(units), pos, "dense", w.shape[0], capture=pos))
                case Conv2D(kernels=k, bias=b):
                    if k.ndim != 4 or k.shape[2:] != (3, 3):
                        raise UnsupportedError(f"{name}: only 3x3 kernels are supported")
                    if len(shape) != 3 or k.shape[1] != shape[2]:
                        raise InvalidArgumentError(f"{name} expects {k.shape[1]} input channels, got {shape}")
                    if b.shape != (k.shape[0],):
                        raise InvalidArgumentError(f"{name} bias shape {b.shape} does not match")
                    shape = (shape[0], shape[1], k.shape[0])
                    units.append(UnitLayer(len(units), pos, "conv", k.shape[0], capture=pos))
                case BatchNorm():
                    channels = shape[-1]
                    for tensor in (layer.gamma, layer.beta, layer.moving_mean, layer.moving_std):
                        if tensor.shape != (channels,):
                            raise InvalidArgumentError(f"{name} expects {channels} channels")
                    if np.any(layer.moving_std < 0):
                        raise InvalidArgumentError(f"{name} has a negative moving std")
                    last = units[-1]
                    if last.capture == pos - 1 and last.kind != "input":
                        units[-1] = UnitLayer(last.layer_id, last.position, last.kind, last.width, capture=pos)
                case MaxPool2x2():
                    if len(shape) != 3:
                        raise InvalidArgumentError(f"{name} needs an (H, W, C) input")
                    shape = (shape[0] // 2, shape[1] // 2, shape[2])
                case Flatten():
                    shape = (int(np.prod(shape)),)
                case SoftmaxOutput():
                    if pos != len(self.layers) - 1:
                        raise InvalidArgumentError("SoftmaxOutput must be the last layer")
                    if shape != (self.class_count,):
                        raise InvalidArgumentError(
                            f"softmax width {shape} does not match class count {self.class_count}"
                        )
                case ReLU():
                    pass
                case _:
                    raise InvalidArgumentError(f"unknown layer type {type(layer).__name__}")

        if len(units) < 2:
            raise InvalidArgumentError("model needs at least one Dense or Conv2D layer")
        last = units[-1]
        units[-1] = UnitLayer(last.layer_id, last.position, last.kind, last.width, last.capture, is_output=True)
        return tuple(units)

    @property
    def is_convolutional(self) -> bool:
        return any(isinstance(layer, Conv2D) for layer in self.layers)

    @property
    def output_layer(self) -> int:
        return self.units[-1].layer_id

    def unit(self, layer_id: int) -> UnitLayer:
        if not 0 <= layer_id < len(self.units):
            raise InvalidArgumentError(f"layer id {layer_id} out of range (0..{len(self.units) - 1})")
        return self.units[layer_id]

    def widths(self) -> dict[int, int]:
        return {u.layer_id: u.width for u in self.units}

    def hidden_layers(self) -> list[int]:
        return [u.layer_id for u in self.units[1:-1]]

    def parameters(self) -> list[dict[str, np.ndarray]]:
        """Trainable tensors per layer position (empty dict for parameter-free layers)."""
        return [
            {name: t for name, t in _parameters(layer).items() if name in ("weights", "kernels", "bias")}
            for layer in self.layers
        ]

    def with_parameters(self, params: list[dict[str, np.ndarray]]) -> "NetworkModel":
        if len(params) != len(self.layers):
            raise InvalidArgumentError("parameter list does not match the layer list")
        layers = []
        for layer, update in zip(self.layers, params, strict=True):
            if update:
                current = _parameters(layer)
                for name, tensor in update.items():
                    if current[name].shape != tensor.shape:
                        raise InvalidArgumentError(f"shape mismatch for {name}")
                layer = type(layer)(**{**current, **update})
            layers.append(layer)
        return NetworkModel(tuple(layers), self.input_shape, self.class_count)


def _parameters(layer: LayerSpec) -> dict[str, np.ndarray]:
    match layer:
        case Dense():
            return {"weights": layer.weights, "bias": layer.bias}
        case Conv2D():
            return {"kernels": layer.kernels, "bias": layer.bias}
        case BatchNorm():
            return {
                "gamma": layer.gamma,
                "beta": layer.beta,
                "moving_mean": layer.moving_mean,
                "moving_std": layer.moving_std,
            }
    return {}


@dataclass(frozen=True, eq=False)
class MaskedModel:
    """A lesioned view: behaves like the model with the masked neurons' weights zeroed."""

    model: NetworkModel
    mask: LesionMask


@dataclass(frozen=True, eq=False)
class ActivationRecord:
    pre_relu: dict[int, np.ndarray]  # layer id -> (N, width) or (N, H, W, C)
    logits: np.ndarray
    softmax: np.ndarray

    def series(self, layer_id: int) -> np.ndarray:
        """(N, width) values per neuron; conv channels reduce to their spatial L1 norm."""
        values = self.pre_relu[layer_id]
        if layer_id != 0 and values.ndim == 4:
            return np.abs(values).sum(axis=(1, 2))
        return values.reshape(values.shape[0], -1)


# =============================================================================
# FORWARD PASS
# =============================================================================


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _conv_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, h, w, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.empty((n, h, w, kernels.shape[0]))
    out[...] = bias
    for i in range(3):
        for j in range(3):
            out += xp[:, i : i + h, j : j + w, :] @ kernels[:, :, i, j].T
    return out


def _pool_windows(x: np.ndarray) -> np.ndarray:
    """(N, H, W, C) -> (N, H/2, W/2, C, 4) windows in row-major scan order."""
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    cropped = x[:, : 2 * h2, : 2 * w2, :]
    return cropped.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)


def _unwrap(model: NetworkModel | MaskedModel) -> tuple[NetworkModel, LesionMask | None]:
    if isinstance(model, MaskedModel):
        return model.model, model.mask
    return model, None


def _check_batch(model: NetworkModel, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != model.input_shape:
        if len(model.input_shape) == 1 and x.ndim > 2 and int(np.prod(x.shape[1:])) == model.input_shape[0]:
            x = x.reshape(x.shape[0], -1)
        else:
            raise InvalidArgumentError(
                f"batch shape {x.shape[1:]} does not match model input {model.input_shape}"
            )
    if not np.all(np.isfinite(x)):
        raise NumericFailureError("input batch contains non-finite values")
    return x


def _propagate(
    model: NetworkModel,
    x: np.ndarray,
    mask: LesionMask | None = None,
    cache: list[np.ndarray] | None = None,
) -> ActivationRecord:
    pre_relu: dict[int, np.ndarray] = {0: x}
    captures = {u.capture: u.layer_id for u in model.units[1:]}
    unit = 0
    keep = mask.keep(0) if mask else None
    if keep is not None:
        x = x * keep.reshape(model.input_shape)
        keep = None

    logits = x
    for pos, layer in enumerate(model.layers):
        if cache is not None:
            cache.append(x)
        match layer:
            case Dense(weights=w, bias=b):
                if keep is not None:
                    x = x * keep
                x = x @ w.T + b
                unit += 1
                keep = mask.keep(unit) if mask else None
                if keep is not None:
                    x = x * keep
            case Conv2D(kernels=k, bias=b):
                if keep is not None:
                    x = x * keep
                x = _conv_forward(x, k, b)
                unit += 1
                keep = mask.keep(unit) if mask else None
                if keep is not None:
                    x = x * keep
            case BatchNorm():
                x = (x - layer.moving_mean) * layer.scale() + layer.beta
            case ReLU():
                x = np.maximum(x, 0.0)
            case MaxPool2x2():
                x = _pool_windows(x).max(axis=-1)
            case Flatten():
                if keep is not None and x.ndim == 4:
                    keep = np.tile(keep, x.shape[1] * x.shape[2])
                x = x.reshape(x.shape[0], -1)
            case SoftmaxOutput():
                logits = x
                x = _softmax(x)
        if pos in captures:
            pre_relu[captures[pos]] = x

    return ActivationRecord(pre_relu=pre_relu, logits=logits, softmax=x)


def forward(model: NetworkModel | MaskedModel, batch: np.ndarray) -> ActivationRecord:
    """Run a batch through the (possibly masked) model, recording pre-ReLU activations."""
    base, mask = _unwrap(model)
    return _propagate(base, _check_batch(base, batch), mask)


def predict(model: NetworkModel | MaskedModel, images: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    """Softmax outputs for a whole image array, evaluated in fixed-size chunks."""
    base, mask = _unwrap(model)
    x = _check_batch(base, images)
    chunks = [
        _propagate(base, x[start : start + batch_size], mask).softmax
        for start in range(0, len(x), batch_size)
    ]
    return np.concatenate(chunks) if chunks else np.empty((0, base.class_count))


def activation_series(
    model: NetworkModel | MaskedModel,
    images: np.ndarray,
    layers: Iterable[int] | None = None,
    batch_size: int = 500,
) -> dict[int, np.ndarray]:
    """(N, width) activation series per requested layer id, computed in chunks."""
    base, mask = _unwrap(model)
    x = _check_batch(base, images)
    wanted = list(layers) if layers is not None else [u.layer_id for u in base.units]
    parts: dict[int, list[np.ndarray]] = {layer: [] for layer in wanted}
    for start in range(0, len(x), batch_size):
        record = _propagate(base, x[start : start + batch_size], mask)
        for layer in wanted:
            parts[layer].append(record.series(layer))
    return {layer: np.concatenate(chunks) for layer, chunks in parts.items()}


# =============================================================================
# LESIONS
# =============================================================================


def _as_mask(model: NetworkModel, c: Subcluster | Iterable[Subcluster] | LesionMask) -> LesionMask:
    if isinstance(c, LesionMask):
        return c
    subclusters = [c] if isinstance(c, Subcluster) else list(c)
    return LesionMask.from_subclusters(model.widths(), subclusters)


def mask_neurons(
    model: NetworkModel | MaskedModel, c: Subcluster | Iterable[Subcluster] | LesionMask
) -> MaskedModel:
    """Lesion view M(model, c): weights into and out of the neurons in c act as zero."""
    base, existing = _unwrap(model)
    mask = _as_mask(base, c)
    if existing is not None:
        mask = existing.union(mask)
    return MaskedModel(base, mask)


def zero_neurons(model: NetworkModel, c: Subcluster | Iterable[Subcluster] | LesionMask) -> NetworkModel:
    """Deep copy of the model with incoming/outgoing weights and biases of c set to 0."""
    mask = _as_mask(model, c)
    params = [{name: t.copy() for name, t in p.items()} for p in model.parameters()]
    weight_positions = [u.position for u in model.units[1:]]

    for layer_id, masked in mask.layers.items():
        idx = np.flatnonzero(masked)
        if idx.size == 0:
            continue
        unit = model.unit(layer_id)
        if unit.kind == "input" and model.is_convolutional:
            raise UnsupportedError("input pixels of a convolutional model cannot be zeroed through weights")
        if unit.position >= 0:
            incoming = params[unit.position]
            key = "weights" if "weights" in incoming else "kernels"
            incoming[key][idx] = 0.0
            incoming["bias"][idx] = 0.0
        if unit.is_output:
            continue
        nxt = weight_positions[layer_id]
        outgoing = params[nxt]
        if "kernels" in outgoing:
            outgoing["kernels"][:, idx] = 0.0
        elif unit.kind == "conv":
            columns = np.arange(outgoing["weights"].shape[1])
            outgoing["weights"][:, np.isin(columns % unit.width, idx)] = 0.0
        else:
            outgoing["weights"][:, idx] = 0.0

    return model.with_parameters(params)


# =============================================================================
# GRADIENTS
# =============================================================================


def _conv_backward(
    x: np.ndarray, kernels: np.ndarray, grad: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, h, w, c = x.shape
    out_channels = kernels.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    dxp = np.zeros_like(xp)
    dk = np.empty_like(kernels)
    flat_grad = grad.reshape(-1, out_channels)
    for i in range(3):
        for j in range(3):
            patch = xp[:, i : i + h, j : j + w, :].reshape(-1, c)
            dk[:, :, i, j] = flat_grad.T @ patch
            dxp[:, i : i + h, j : j + w, :] += grad @ kernels[:, :, i, j]
    return dxp[:, 1:-1, 1:-1, :], dk, flat_grad.sum(axis=0)


def _pool_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    windows = _pool_windows(x)
    first_max = windows.argmax(axis=-1)
    routed = (np.arange(4) == first_max[..., None]) * grad[..., None]
    h2, w2 = h // 2, w // 2
    dx = np.zeros_like(x)
    dx[:, : 2 * h2, : 2 * w2, :] = (
        routed.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
    )
    return dx


def _backward(
    model: NetworkModel,
    cache: list[np.ndarray],
    start: int,
    grad: np.ndarray,
    params: list[dict[str, np.ndarray]] | None = None,
) -> np.ndarray:
    """Back-propagate grad (w.r.t. the output of layer `start`) down to the input."""
    for pos in range(start, -1, -1):
        layer = model.layers[pos]
        x = cache[pos]
        match layer:
            case Dense(weights=w):
                if params is not None:
                    params[pos] = {"weights": grad.T @ x, "bias": grad.sum(axis=0)}
                grad = grad @ w
            case Conv2D(kernels=k):
                grad, dk, db = _conv_backward(x, k, grad)
                if params is not None:
                    params[pos] = {"kernels": dk, "bias": db}
            case BatchNorm():
                grad = grad * layer.scale()
            case ReLU():
                grad = grad * (x > 0.0)
            case MaxPool2x2():
                grad = _pool_backward(x, grad)
            case Flatten():
                grad = grad.reshape(x.shape)
            case SoftmaxOutput():
                raise InvalidArgumentError("cannot back-propagate through the softmax directly")
    return grad


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example categorical cross-entropy."""
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(picked, np.finfo(np.float64).tiny))


def _check_labels(model: NetworkModel, labels: np.ndarray, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise InvalidArgumentError(f"expected {n} labels, got shape {y.shape}")
    if n == 0:
        raise InvalidArgumentError("batch is empty")
    if y.min() < 0 or y.max() >= model.class_count:
        raise InvalidArgumentError(f"labels must lie in [0, {model.class_count})")
    return y


def loss_and_gradients(
    model: NetworkModel, batch: np.ndarray, labels: np.ndarray
) -> tuple[float, list[dict[str, np.ndarray]], np.ndarray]:
    """Mean cross-entropy, its parameter gradients and the softmax outputs."""
    x = _check_batch(model, batch)
    y = _check_labels(model, labels, len(x))
    cache: list[np.ndarray] = []
    record = _propagate(model, x, cache=cache)
    probs = record.softmax

    grad = probs.copy()
    grad[np.arange(len(y)), y] -= 1.0
    grad /= len(y)

    params: list[dict[str, np.ndarray]] = [{} for _ in model.layers]
    _backward(model, cache, len(model.layers) - 2, grad, params)
    return float(cross_entropy(probs, y).mean()), params, probs


def param_gradients(model: NetworkModel, batch: np.ndarray, labels: np.ndarray) -> list[dict[str, np.ndarray]]:
    """Gradients of the mean cross-entropy, one dict per layer position."""
    return loss_and_gradients(model, batch, labels)[1]


def _subcluster_selector(values: np.ndarray, c: Subcluster) -> np.ndarray:
    selected = np.zeros_like(values)
    if values.ndim == 4:
        selected[..., list(c.indices)] = 1.0
    else:
        flat = selected.reshape(selected.shape[0], -1)
        flat[:, list(c.indices)] = 1.0
    return selected


def activation_objective(model: NetworkModel, image: np.ndarray, c: Subcluster) -> tuple[float, np.ndarray]:
    """||Act(image, model, c)||_1 and its gradient with respect to the image."""
    unit = model.unit(c.layer)
    if c.indices and c.indices[-1] >= unit.width:
        raise InvalidArgumentError(f"neuron index {c.indices[-1]} out of range for layer {c.layer}")
    x = _check_batch(model, np.asarray(image, dtype=np.float64)[None])
    cache: list[np.ndarray] = []
    record = _propagate(model, x, cache=cache)
    values = record.pre_relu[c.layer]
    selector = _subcluster_selector(values, c)
    score = float(np.abs(values * selector).sum())
    grad = np.sign(values) * selector

    if unit.capture < 0:
        return score, grad.reshape(np.shape(image))
    grad = _backward(model, cache, unit.capture, grad)
    return score, grad.reshape(np.shape(image))


def input_gradient(model: NetworkModel, image: np.ndarray, c: Subcluster) -> np.ndarray:
    """Gradient w.r.t. the image of the L1 norm of c's pre-ReLU activations."""
    return activation_objective(model, image, c)[1]


# =============================================================================
# MODEL FILES
# =============================================================================


def _layer_header(layer: LayerSpec) -> tuple[list[int], list[tuple[str, np.ndarray]]]:
    match layer:
        case Dense(weights=w, bias=b):
            return list(w.shape), [("weights", w), ("bias", b)]
        case Conv2D(kernels=k, bias=b):
            return list(k.shape), [("kernels", k), ("bias", b)]
        case BatchNorm():
            return [layer.gamma.shape[0]], [
                ("gamma", layer.gamma),
                ("beta", layer.beta),
                ("moving_mean", layer.moving_mean),
                ("moving_std", layer.moving_std),
                ("epsilon", np.array([layer.epsilon])),
            ]
    return [], []


def save_model(model: NetworkModel, path: str | Path) -> None:
    """Write the model in the NNMOD1 little-endian container."""
    payload = bytearray()
    payload += struct.pack("<I", len(model.input_shape))
    payload += struct.pack(f"<{len(model.input_shape)}I", *model.input_shape)
    payload += struct.pack("<II", model.class_count, len(model.layers))
    for layer in model.layers:
        header, tensors = _layer_header(layer)
        payload += struct.pack("<BI", layer.tag, len(header))
        payload += struct.pack(f"<{len(header)}I", *header)
        for _, tensor in tensors:
            payload += np.ascontiguousarray(tensor, dtype="<f4").tobytes()

    Path(path).write_bytes(MAGIC + bytes(payload) + struct.pack("<I", zlib.crc32(payload)))


class _Reader:
    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.offset = offset

    def unpack(self, fmt: str, what: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise FormatError(f"file truncated while reading {what}", offset=self.offset)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def tensor(self, shape: tuple[int, ...], name: str) -> np.ndarray:
        count = int(np.prod(shape))
        size = 4 * count
        if self.offset + size > len(self.data):
            raise FormatError(f"file truncated inside tensor '{name}'", offset=self.offset, tensor=name)
        values = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.offset)
        self.offset += size
        return values.astype(np.float64).reshape(shape)


def load_model(path: str | Path) -> NetworkModel:
    """Read an NNMOD1 model file; any damage raises FormatError before a model exists."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[:6] != MAGIC[:6]:
        raise FormatError("bad magic bytes, not a model file", offset=0)
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"unsupported model file version {data[6:8]!r}", offset=6)

    reader = _Reader(data[:-4] if len(data) >= len(MAGIC) + 4 else data, len(MAGIC))
    (rank,) = reader.unpack("<I", "input rank")
    input_shape = reader.unpack(f"<{rank}I", "input shape")
    class_count, layer_count = reader.unpack("<II", "layer count")

    layers: list[LayerSpec] = []
    for index in range(layer_count):
        tag, header_len = reader.unpack("<BI", f"layer {index} header")
        header = reader.unpack(f"<{header_len}I", f"layer {index} shape")
        name = f"layer {index}"
        match tag:
            case Dense.tag:
                w = reader.tensor(tuple(header), f"{name}.weights")
                b = reader.tensor((header[0],), f"{name}.bias")
                layers.append(Dense(w, b))
            case Conv2D.tag:
                if tuple(header[2:]) != (3, 3):
                    raise FormatError(f"{name}: only 3x3 kernels are supported", offset=reader.offset)
                k = reader.tensor(tuple(header), f"{name}.kernels")
                b = reader.tensor((header[0],), f"{name}.bias")
                layers.append(Conv2D(k, b))
            case BatchNorm.tag:
                channels = (header[0],)
                tensors = [reader.tensor(channels, f"{name}.{part}") for part in ("gamma", "beta", "moving_mean", "moving_std")]
                epsilon = float(reader.tensor((1,), f"{name}.epsilon")[0])
                layers.append(BatchNorm(*tensors, epsilon=epsilon))
            case ReLU.tag:
                layers.append(ReLU())
            case MaxPool2x2.tag:
                layers.append(MaxPool2x2())
            case Flatten.tag:
                layers.append(Flatten())
            case SoftmaxOutput.tag:
                layers.append(SoftmaxOutput())
            case _:
                raise FormatError(f"{name}: unknown layer kind tag {tag}", offset=reader.offset - 5 - 4 * header_len)

    if len(data) < reader.offset + 4:
        raise FormatError("file truncated before checksum", offset=reader.offset)
    if reader.offset != len(data) - 4:
        raise FormatError("trailing bytes after the last layer", offset=reader.offset)
    (stored,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[len(MAGIC) : -4]) != stored:
        raise FormatError("checksum mismatch", offset=len(data) - 4)

    try:
        return NetworkModel(tuple(layers), tuple(input_shape), class_count)
    except (InvalidArgumentError, UnsupportedError, NumericFailureError) as e:
        raise FormatError(f"model file describes an invalid network: {e}") from e
