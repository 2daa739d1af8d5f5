"""Neuron addressing shared by graphs, partitions, lesions and visualizations.

Layer ids count neuron layers: 0 is the input, 1..L the outputs of the
successive Dense/Conv2D layers, the last one being the output layer.
"""

from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

NeuronRef = tuple[int, int]  # (layer id, neuron index)


@dataclass(frozen=True, order=True)
class Subcluster:
    """A set of neurons from one layer, tagged with the cluster it came from."""

    layer: int
    indices: tuple[int, ...]
    cluster_id: int = -1

    def __post_init__(self) -> None:
        ordered = tuple(sorted({int(i) for i in self.indices}))
        if ordered != tuple(self.indices):
            object.__setattr__(self, "indices", ordered)
        if any(i < 0 for i in ordered):
            raise InvalidArgumentError("neuron indices must be non-negative")

    @property
    def size(self) -> int:
        return len(self.indices)

    def label(self) -> str:
        return f"L{self.layer}-C{self.cluster_id}"


@dataclass(frozen=True)
class LesionMask:
    """Per-layer boolean vectors marking the neurons to zero out."""

    layers: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_subclusters(
        cls, widths: dict[int, int], subclusters: Iterable[Subcluster]
    ) -> "LesionMask":
        layers: dict[int, np.ndarray] = {}
        for sub in subclusters:
            if sub.layer not in widths:
                raise InvalidArgumentError(f"layer {sub.layer} has no maskable neurons")
            width = widths[sub.layer]
            if sub.indices and sub.indices[-1] >= width:
                raise InvalidArgumentError(
                    f"neuron index {sub.indices[-1]} out of range for layer {sub.layer} (width {width})"
                )
            mask = layers.setdefault(sub.layer, np.zeros(width, dtype=bool))
            mask[list(sub.indices)] = True
        return cls({layer: mask for layer, mask in layers.items() if mask.any()})

    def union(self, other: "LesionMask") -> "LesionMask":
        merged = {layer: mask.copy() for layer, mask in self.layers.items()}
        for layer, mask in other.layers.items():
            if layer in merged:
                merged[layer] |= mask
            else:
                merged[layer] = mask.copy()
        return LesionMask(merged)

    def is_empty(self) -> bool:
        return not any(mask.any() for mask in self.layers.values())

    def keep(self, layer: int) -> np.ndarray | None:
        """Float multiplier (1 keep, 0 masked) for a layer, or None if untouched."""
        mask = self.layers.get(layer)
        if mask is None or not mask.any():
            return None
        return (~mask).astype(np.float64)
