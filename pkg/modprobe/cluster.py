"""Normalized spectral clustering, subcluster derivation and random comparators.

PUBLIC API:
- spectral_cluster(graph, k, seed) -> Partitioning
- derive_subclusters(partitioning, universe) -> list[Subcluster]
- align_local_k(partitioning) -> dict[layer, k]
- local_partitioning(basis, model, k_per_layer, seed, ...) -> Partitioning
- sample_random_subclusters(true, width, count, seed) -> list[Subcluster]
- write_partitioning(p, path, header) / read_partitioning(path)
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .errors import FormatError, InvalidArgumentError
from .graphify import NeuronGraph, NodeUniverse, local_subgraph, node_universe
from .linalg import kmeans, sym_eig
from .model import NetworkModel
from .neurons import NeuronRef, Subcluster

logger = logging.getLogger(__name__)

DEGREE_REGULARIZATION = 1e-12
DEFAULT_K = 16
RANDOM_COUNT = 19
METHODS = ("weights/global", "weights/local", "activations/global", "activations/local")


def parse_method(method: str) -> tuple[str, str]:
    """'weights/global' -> ('weights', 'global')."""
    if method not in METHODS:
        raise InvalidArgumentError(f"unknown partitioning method '{method}' (choose from {', '.join(METHODS)})")
    basis, scope = method.split("/")
    return basis, scope


@dataclass(frozen=True, eq=False)
class Partitioning:
    method: str
    k: int
    nodes: tuple[NeuronRef, ...]
    labels: np.ndarray  # one label in [0, k) per node

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (len(self.nodes),):
            raise InvalidArgumentError(f"{len(self.nodes)} nodes but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise InvalidArgumentError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", labels)

    def layer_labels(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """(neuron indices, labels) of one layer's nodes."""
        rows = [i for i, (lay, _) in enumerate(self.nodes) if lay == layer]
        indices = np.array([self.nodes[i][1] for i in rows], dtype=np.int64)
        return indices, self.labels[rows]

    def layers(self) -> list[int]:
        return sorted({layer for layer, _ in self.nodes})


# =============================================================================
# SPECTRAL CLUSTERING
# =============================================================================


def spectral_cluster(graph: NeuronGraph, k: int, seed: int, method: str | None = None) -> Partitioning:
    """Shi-Malik clustering: k smallest generalized eigenvectors of L u = lambda D u, then k-means."""
    n = graph.size
    method = method or f"{graph.basis}/{'global' if graph.scope == 'global' else 'local'}"
    if k < 1:
        raise InvalidArgumentError(f"k must be at least 1, got {k}")
    if k > n:
        raise InvalidArgumentError(f"k={k} exceeds the number of nodes ({n})")

    labels = np.zeros(n, dtype=np.int64)
    weights = graph.dense()
    degrees = weights.sum(axis=1)
    connected = np.flatnonzero(degrees > 0)
    k_eff = min(k, connected.size)
    if k == 1 or k_eff < 2:
        return Partitioning(method, k, graph.nodes, labels)

    # isolated nodes stay in cluster 0
    w = weights[np.ix_(connected, connected)]
    d = degrees[connected]
    inv_sqrt = 1.0 / np.sqrt(d + DEGREE_REGULARIZATION)
    laplacian = np.diag(d) - w
    normalized = inv_sqrt[:, None] * laplacian * inv_sqrt[None, :]
    normalized = (normalized + normalized.T) / 2.0

    vectors = sym_eig(normalized).eigenvectors[:, :k_eff]
    embedding = inv_sqrt[:, None] * vectors
    pivots = np.abs(embedding).argmax(axis=0)
    signs = np.where(embedding[pivots, np.arange(k_eff)] < 0, -1.0, 1.0)
    embedding = embedding * signs[None, :]

    labels[connected] = kmeans(embedding, k_eff, seed)
    logger.debug(f"{method}: {n} nodes, {n - connected.size} isolated, k={k}")
    return Partitioning(method, k, graph.nodes, labels)


# =============================================================================
# SUBCLUSTERS
# =============================================================================


def derive_subclusters(partitioning: Partitioning, universe: NodeUniverse) -> list[Subcluster]:
    """Cluster-by-layer intersections of the hidden layers, minus singletons and whole layers."""
    subclusters = []
    for layer in universe.hidden_layers:
        indices, labels = partitioning.layer_labels(layer)
        width = universe.width(layer)
        for cluster_id in np.unique(labels):
            members = indices[labels == cluster_id]
            if 2 <= members.size < width:
                subclusters.append(Subcluster(layer, tuple(members.tolist()), int(cluster_id)))
    return subclusters


def align_local_k(partitioning: Partitioning) -> dict[int, int]:
    """Number of distinct global clusters that intersect each layer."""
    return {layer: int(np.unique(partitioning.layer_labels(layer)[1]).size) for layer in partitioning.layers()}


def derived_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1)[0])


def local_partitioning(
    basis: str,
    model: NetworkModel,
    k_per_layer: dict[int, int],
    seed: int,
    validation: LabeledDataset | None = None,
    global_graph: NeuronGraph | None = None,
) -> Partitioning:
    """Cluster each hidden layer's local graph and keep that layer's labels."""
    universe = node_universe(model)
    nodes: list[NeuronRef] = []
    labels: list[np.ndarray] = []
    k_max = 1
    for layer in universe.hidden_layers:
        graph = local_subgraph(basis, model, layer, validation, global_graph)
        k_layer = max(1, min(k_per_layer.get(layer, DEFAULT_K), graph.size))
        local = spectral_cluster(graph, k_layer, derived_seed(seed, layer), f"{basis}/local")
        rows = graph.layer_nodes(layer)
        nodes += [graph.nodes[i] for i in rows]
        labels.append(local.labels[rows])
        k_max = max(k_max, k_layer)
        logger.debug(f"{basis}/local layer {layer}: {graph.size} nodes, k={k_layer}")

    flat = np.concatenate(labels) if labels else np.empty(0, dtype=np.int64)
    return Partitioning(f"{basis}/local", k_max, tuple(nodes), flat)


def sample_random_subclusters(
    true: Subcluster, width: int, count: int = RANDOM_COUNT, seed: int | Sequence[int] = 0
) -> list[Subcluster]:
    """Uniform same-size neuron sets from the same layer; overlap with the true set is allowed."""
    size = true.size
    if size < 1 or size >= width:
        raise InvalidArgumentError(f"cannot sample {size} of {width} neurons as a proper subset")
    entropy = [seed] if isinstance(seed, int) else list(seed)
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    return [
        Subcluster(true.layer, tuple(np.sort(rng.choice(width, size=size, replace=False)).tolist()))
        for _ in range(count)
    ]


# =============================================================================
# TEXT EXPORT
# =============================================================================


def write_partitioning(partitioning: Partitioning, path: str | Path, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines.append(f"method {partitioning.method} k {partitioning.k}")
    lines += [
        f"{layer}:{index} {label}"
        for (layer, index), label in zip(partitioning.nodes, partitioning.labels.tolist(), strict=True)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_partitioning(path: str | Path) -> Partitioning:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    head = lines[0].split() if lines else []
    if len(head) != 4 or head[0] != "method" or head[2] != "k":
        raise FormatError(f"{path}: bad partitioning header")
    nodes, labels = [], []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            ref, label = line.split()
            layer, index = ref.split(":")
            nodes.append((int(layer), int(index)))
            labels.append(int(label))
        except ValueError as e:
            raise FormatError(f"{path}: line {line_no}: expected 'layer:index cluster_id'") from e
    return Partitioning(head[1], int(head[3]), tuple(nodes), np.array(labels, dtype=np.int64))
