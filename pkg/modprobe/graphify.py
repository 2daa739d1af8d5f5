"""Graphification: turn a network into an undirected, non-negative neuron graph.

PUBLIC API:
- node_universe(model) -> NodeUniverse
- weight_graph(model) -> NeuronGraph
- activation_graph(model, validation) -> NeuronGraph
- local_subgraph(basis, model, layer, validation=None, global_graph=None) -> NeuronGraph
- ncut(graph, labels) -> float
- write_graph(graph, path, header=None) / read_graph(path) -> NeuronGraph
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .data import LabeledDataset
from .errors import FormatError, InvalidArgumentError
from .linalg import spearman_matrix
from .model import BatchNorm, NetworkModel, activation_series
from .neurons import NeuronRef

logger = logging.getLogger(__name__)

BASES = ("weights", "activations")
MIN_VALIDATION = 100


@dataclass(frozen=True)
class NodeUniverse:
    """The neuron layers that become graph nodes, in layer order."""

    layers: tuple[int, ...]
    widths: tuple[int, ...]
    io_layers: tuple[int, ...] = ()  # input/output layers, never subclustered

    @property
    def hidden_layers(self) -> tuple[int, ...]:
        return tuple(layer for layer in self.layers if layer not in self.io_layers)

    def width(self, layer: int) -> int:
        return self.widths[self.layers.index(layer)]

    def nodes(self) -> list[NeuronRef]:
        return [(layer, i) for layer, width in zip(self.layers, self.widths, strict=True) for i in range(width)]

    def offsets(self) -> dict[int, int]:
        starts = np.concatenate([[0], np.cumsum(self.widths)[:-1]]).astype(int)
        return dict(zip(self.layers, starts.tolist(), strict=True))


def node_universe(model: NetworkModel) -> NodeUniverse:
    """MLPs contribute every layer including input and output; CNNs only their conv channels."""
    if model.is_convolutional:
        units = [u for u in model.units if u.kind == "conv"]
        io_layers: tuple[int, ...] = ()
    else:
        units = list(model.units)
        io_layers = (0, model.output_layer)
    return NodeUniverse(tuple(u.layer_id for u in units), tuple(u.width for u in units), io_layers)


@dataclass(frozen=True, eq=False)
class NeuronGraph:
    nodes: tuple[NeuronRef, ...]
    adjacency: sparse.csr_matrix
    basis: str
    scope: str = "global"  # "global" or "local:<layer>"

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple((int(a), int(b)) for a, b in self.nodes))
        adjacency = sparse.csr_matrix(self.adjacency, dtype=np.float64)
        adjacency.eliminate_zeros()
        object.__setattr__(self, "adjacency", adjacency)
        n = len(self.nodes)
        if adjacency.shape != (n, n):
            raise InvalidArgumentError(f"adjacency shape {adjacency.shape} does not match {n} nodes")
        if len(set(self.nodes)) != n:
            raise InvalidArgumentError("duplicate node in graph")
        if self.basis not in BASES:
            raise InvalidArgumentError(f"unknown basis '{self.basis}'")
        if adjacency.nnz:
            if adjacency.data.min() < 0 or not np.all(np.isfinite(adjacency.data)):
                raise InvalidArgumentError("edge weights must be finite and non-negative")
            if adjacency.diagonal().any():
                raise InvalidArgumentError("graph has self-loops")
            asymmetry = abs(adjacency - adjacency.T)
            if asymmetry.nnz and asymmetry.max() > 1e-12 * adjacency.max():
                raise InvalidArgumentError("adjacency is not symmetric")

    @property
    def size(self) -> int:
        return len(self.nodes)

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def dense(self) -> np.ndarray:
        return self.adjacency.toarray()

    def index_of(self, node: NeuronRef) -> int:
        return self.nodes.index(node)

    def weight(self, a: NeuronRef, b: NeuronRef) -> float:
        return float(self.adjacency[self.index_of(a), self.index_of(b)])

    def edges(self) -> list[tuple[int, int, float]]:
        upper = sparse.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return [(int(upper.row[i]), int(upper.col[i]), float(upper.data[i])) for i in order]

    def layer_nodes(self, layer: int) -> np.ndarray:
        return np.array([i for i, (lay, _) in enumerate(self.nodes) if lay == layer], dtype=np.int64)

    def restrict(self, keep: np.ndarray, scope: str) -> "NeuronGraph":
        keep = np.asarray(keep, dtype=np.int64)
        sub = self.adjacency[keep][:, keep]
        return NeuronGraph(tuple(self.nodes[i] for i in keep), sub, self.basis, scope)


def _symmetric(n: int, rows: list[np.ndarray], cols: list[np.ndarray], vals: list[np.ndarray]) -> sparse.csr_matrix:
    if not vals:
        return sparse.csr_matrix((n, n))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    upper = sparse.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    return upper + upper.T


# =============================================================================
# WEIGHT GRAPHS
# =============================================================================


def _bn_between(model: NetworkModel, start: int, stop: int) -> BatchNorm | None:
    found = [layer for layer in model.layers[start:stop] if isinstance(layer, BatchNorm)]
    if len(found) > 1:
        raise InvalidArgumentError(f"layers {start}..{stop - 1}: more than one BatchNorm between weight layers")
    return found[0] if found else None


def _edge_magnitudes(model: NetworkModel, layer_id: int) -> np.ndarray:
    """|effective weight| between layer_id - 1 (columns) and layer_id (rows), BN folded."""
    unit = model.unit(layer_id)
    previous = model.unit(layer_id - 1)
    weights = model.layers[unit.position]
    if unit.kind == "conv":
        magnitudes = np.abs(weights.kernels).sum(axis=(2, 3))
    else:
        magnitudes = np.abs(weights.weights)

    if unit.capture != unit.position:
        row_bn = model.layers[unit.capture]
        magnitudes = magnitudes * np.abs(row_bn.scale())[:, None]

    column_bn = _bn_between(model, previous.capture + 1, unit.position)
    if column_bn is not None:
        scale = np.abs(column_bn.scale())
        if scale.shape[0] != magnitudes.shape[1]:
            raise InvalidArgumentError(
                f"layer {unit.position}: BatchNorm width {scale.shape[0]} cannot fold into {magnitudes.shape[1]} inputs"
            )
        magnitudes = magnitudes * scale[None, :]
    return magnitudes


def weight_graph(model: NetworkModel) -> NeuronGraph:
    """Edges |w| between adjacent layers; conv channel pairs use the kernel slice L1 norm."""
    universe = node_universe(model)
    offsets = universe.offsets()
    n = int(sum(universe.widths))
    rows, cols, vals = [], [], []

    for layer_id in universe.layers:
        if layer_id == 0 or layer_id - 1 not in offsets:
            continue
        magnitudes = _edge_magnitudes(model, layer_id)
        out_idx, in_idx = np.nonzero(magnitudes)
        rows.append(offsets[layer_id - 1] + in_idx)
        cols.append(offsets[layer_id] + out_idx)
        vals.append(magnitudes[out_idx, in_idx])

    graph = NeuronGraph(tuple(universe.nodes()), _symmetric(n, rows, cols, vals), "weights")
    logger.info(f"weight graph: {graph.size} nodes, {graph.adjacency.nnz // 2} edges")
    return graph


# =============================================================================
# ACTIVATION GRAPHS
# =============================================================================


def activation_graph(model: NetworkModel, validation: LabeledDataset, batch_size: int = 500) -> NeuronGraph:
    """Edges are squared Spearman correlations of pre-ReLU activation series."""
    if len(validation) < MIN_VALIDATION:
        raise InvalidArgumentError(
            f"activation graphs need at least {MIN_VALIDATION} validation examples, got {len(validation)}"
        )
    universe = node_universe(model)
    series = activation_series(model, validation.images, universe.layers, batch_size)
    stacked = np.concatenate([series[layer] for layer in universe.layers], axis=1)

    weights = spearman_matrix(stacked.T) ** 2
    np.fill_diagonal(weights, 0.0)
    weights = np.clip((weights + weights.T) / 2.0, 0.0, 1.0)

    graph = NeuronGraph(tuple(universe.nodes()), sparse.csr_matrix(weights), "activations")
    logger.info(f"activation graph: {graph.size} nodes from {len(validation)} examples")
    return graph


# =============================================================================
# LOCAL SCOPE
# =============================================================================


def local_subgraph(
    basis: str,
    model: NetworkModel,
    layer: int,
    validation: LabeledDataset | None = None,
    global_graph: NeuronGraph | None = None,
) -> NeuronGraph:
    """Graph over layers layer-1, layer, layer+1 (clipped to the universe)."""
    if basis not in BASES:
        raise InvalidArgumentError(f"unknown basis '{basis}'")
    universe = node_universe(model)
    if layer not in universe.layers or layer in (0, model.output_layer):
        raise InvalidArgumentError(f"layer {layer} is not a hidden layer of the node universe")

    if global_graph is None:
        if basis == "weights":
            global_graph = weight_graph(model)
        elif validation is None:
            raise InvalidArgumentError("activation-based local graphs need a validation set")
        else:
            global_graph = activation_graph(model, validation)
    elif global_graph.basis != basis:
        raise InvalidArgumentError(f"global graph basis '{global_graph.basis}' does not match '{basis}'")

    neighbourhood = {layer - 1, layer, layer + 1}
    keep = np.array([i for i, (lay, _) in enumerate(global_graph.nodes) if lay in neighbourhood], dtype=np.int64)
    return global_graph.restrict(keep, f"local:{layer}")


# =============================================================================
# NORMALIZED CUT
# =============================================================================


def ncut(graph: NeuronGraph, partition: np.ndarray | Sequence[Sequence[int]]) -> float:
    """(1/2) * sum_i W(X_i, complement) / vol(X_i) for a label vector or a list of parts."""
    n = graph.size
    labels = np.asarray(partition) if not _is_part_list(partition) else _labels_from_parts(partition, n)
    if labels.shape != (n,):
        raise InvalidArgumentError(f"partition covers {labels.shape[0]} nodes, graph has {n}")

    adjacency = graph.adjacency
    degrees = graph.degrees()
    total = 0.0
    for part in np.unique(labels):
        members = labels == part
        volume = degrees[members].sum()
        if volume <= 0:
            raise InvalidArgumentError(f"part {part} has zero volume")
        cut = adjacency[members][:, ~members].sum()
        total += cut / volume
    return 0.5 * float(total)


def _is_part_list(partition) -> bool:
    return len(partition) > 0 and not np.isscalar(partition[0])


def _labels_from_parts(parts: Sequence[Sequence[int]], n: int) -> np.ndarray:
    labels = np.full(n, -1, dtype=np.int64)
    for part_id, part in enumerate(parts):
        for node in part:
            if labels[node] != -1:
                raise InvalidArgumentError(f"node {node} appears in more than one part")
            labels[node] = part_id
    if (labels < 0).any():
        raise InvalidArgumentError("partition is not exhaustive")
    return labels


# =============================================================================
# TEXT EDGE LISTS
# =============================================================================


def write_graph(graph: NeuronGraph, path: str | Path, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines.append(f"nodes {graph.size} basis {graph.basis} scope {graph.scope}")
    lines += [f"{layer}:{index}" for layer, index in graph.nodes]
    for i, j, weight in graph.edges():
        a, b = graph.nodes[i], graph.nodes[j]
        lines.append(f"{a[0]}:{a[1]} {b[0]}:{b[1]} {weight:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_ref(token: str, line_no: int) -> NeuronRef:
    try:
        layer, index = token.split(":")
        return int(layer), int(index)
    except ValueError as e:
        raise FormatError(f"line {line_no}: bad node reference '{token}'") from e


def _plain_nodes(edges: list[tuple[NeuronRef, NeuronRef]], count: int, path: str | Path) -> list[NeuronRef]:
    """Nodes of an edge list without node lines: each layer's indices filled in from 0 up to its largest."""
    largest: dict[int, int] = {}
    for a, b in edges:
        for layer, index in (a, b):
            largest[layer] = max(largest.get(layer, -1), index)
    nodes = [(layer, i) for layer in sorted(largest) for i in range(largest[layer] + 1)]
    if len(nodes) != count:
        raise FormatError(f"{path}: header declares {count} nodes but the edges imply {len(nodes)}")
    return nodes


def read_graph(path: str | Path) -> NeuronGraph:
    """Read a graph written by write_graph, or a plain edge list with no node lines."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise FormatError(f"{path}: empty graph file")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "nodes" or head[2] != "basis" or head[4] != "scope":
        raise FormatError(f"{path}: bad header '{lines[0]}'")
    try:
        count = int(head[1])
    except ValueError as e:
        raise FormatError(f"{path}: bad node count '{head[1]}'") from e
    basis, scope = head[3], head[5]

    plain = len(lines) > 1 and len(lines[1].split()) == 3
    first_edge = 1 if plain else count + 1
    nodes = [] if plain else [_parse_ref(tok, i + 2) for i, tok in enumerate(lines[1:first_edge])]
    if not plain and len(nodes) != count:
        raise FormatError(f"{path}: expected {count} node lines, found {len(nodes)}")

    edges, weights = [], []
    for line_no, line in enumerate(lines[first_edge:], start=first_edge + 1):
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}: line {line_no}: expected 'layer:index layer:index weight'")
        edges.append((_parse_ref(parts[0], line_no), _parse_ref(parts[1], line_no)))
        weights.append(float(parts[2]))

    if plain:
        nodes = _plain_nodes(edges, count, path)
    index = {node: i for i, node in enumerate(nodes)}
    if any(a not in index or b not in index for a, b in edges):
        raise FormatError(f"{path}: an edge references an unknown node")
    rows = np.array([index[a] for a, _ in edges], dtype=np.int64)
    cols = np.array([index[b] for _, b in edges], dtype=np.int64)
    adjacency = _symmetric(count, [rows], [cols], [np.array(weights, dtype=np.float64)])
    return NeuronGraph(tuple(nodes), adjacency, basis, scope)
