"""Test spectral clustering, subcluster derivation and random comparators."""

import itertools

import numpy as np
import pytest
from scipy import sparse
from sklearn.metrics import adjusted_rand_score

from modprobe.cluster import (
    Partitioning,
    align_local_k,
    derive_subclusters,
    derived_seed,
    local_partitioning,
    parse_method,
    read_partitioning,
    sample_random_subclusters,
    spectral_cluster,
    write_partitioning,
)
from modprobe.errors import FormatError, InvalidArgumentError
from modprobe.graphify import NeuronGraph, NodeUniverse, ncut, weight_graph
from modprobe.neurons import Subcluster

pytestmark = pytest.mark.fast


def two_cliques(size: int = 5, bridge: float = 0.0) -> NeuronGraph:
    block = np.ones((size, size)) - np.eye(size)
    weights = np.block([[block, np.zeros((size, size))], [np.zeros((size, size)), block]])
    if bridge:
        weights[size - 1, size] = weights[size, size - 1] = bridge
    nodes = tuple((1, i) for i in range(2 * size))
    return NeuronGraph(nodes, sparse.csr_matrix(weights), "weights")


def brute_force_ncut(graph: NeuronGraph) -> float:
    n = graph.size
    best = np.inf
    for mask in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0, *mask))
        if labels.all() or not labels.any():
            continue
        best = min(best, ncut(graph, labels))
    return best


def layered_partitioning(labels: list[int], k: int) -> tuple[Partitioning, NodeUniverse]:
    universe = NodeUniverse(layers=(0, 1, 2, 3), widths=(2, 4, 4, 2), io_layers=(0, 3))
    return Partitioning("weights/global", k, tuple(universe.nodes()), np.array(labels)), universe


def random_graph(rng: np.random.Generator, n: int, density: float = 0.5) -> NeuronGraph:
    """Symmetric random graph with uniform(0.1, 1) weights and no isolated nodes."""
    while True:
        upper = np.triu(rng.uniform(0.1, 1.0, size=(n, n)) * (rng.uniform(size=(n, n)) < density), k=1)
        weights = upper + upper.T
        if (weights.sum(axis=1) > 0).all():
            return NeuronGraph(tuple((1, i) for i in range(n)), sparse.csr_matrix(weights), "weights")


def optimal_two_way_ncut(graph: NeuronGraph) -> float:
    """Smallest two-way ncut over every labeling, evaluated in one batch."""
    weights = graph.dense()
    n = graph.size
    codes = np.arange(1, 2 ** (n - 1))
    labels = ((codes[:, None] >> np.arange(n - 1)) & 1).astype(np.float64)
    labels = np.hstack([np.zeros((len(codes), 1)), labels])
    cut = np.einsum("mi,ij,mj->m", labels, weights, 1.0 - labels)
    volume = labels @ weights.sum(axis=1)
    total = weights.sum()
    return float((0.5 * (cut / volume + cut / (total - volume))).min())


def three_cliques(size: int = 6, bridge: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    block = np.ones((size, size)) - np.eye(size)
    weights = np.kron(np.eye(3), block)
    for a, b in [(size - 1, size), (2 * size - 1, 2 * size), (0, 3 * size - 1)]:
        weights[a, b] = weights[b, a] = bridge
    return weights, np.repeat(np.arange(3), size)


class TestSpectralCluster:
    """Test normalized spectral clustering."""

    def test_disconnected_cliques(self):
        partitioning = spectral_cluster(two_cliques(), 2, seed=0)
        truth = [0] * 5 + [1] * 5
        assert adjusted_rand_score(truth, partitioning.labels) == 1.0
        assert partitioning.method == "weights/global"

    def test_single_cluster(self):
        partitioning = spectral_cluster(two_cliques(), 1, seed=0)
        assert set(partitioning.labels.tolist()) == {0}

    def test_bridged_cliques_near_optimal(self):
        graph = two_cliques(bridge=0.01)
        partitioning = spectral_cluster(graph, 2, seed=3)
        assert adjusted_rand_score([0] * 5 + [1] * 5, partitioning.labels) == 1.0
        assert ncut(graph, partitioning.labels) <= 1.2 * brute_force_ncut(graph)

    def test_isolated_nodes_join_cluster_zero(self):
        graph = two_cliques(size=3)
        weights = np.zeros((7, 7))
        weights[:6, :6] = graph.dense()
        padded = NeuronGraph(tuple((1, i) for i in range(7)), sparse.csr_matrix(weights), "weights")
        assert spectral_cluster(padded, 2, seed=0).labels[6] == 0

    def test_k_exceeds_nodes(self):
        with pytest.raises(InvalidArgumentError):
            spectral_cluster(two_cliques(), 11, seed=0)

    def test_deterministic(self, tiny_mlp):
        graph = weight_graph(tiny_mlp)
        first = spectral_cluster(graph, 4, seed=5)
        second = spectral_cluster(graph, 4, seed=5)
        np.testing.assert_array_equal(first.labels, second.labels)

    def test_labels_cover_every_node(self, tiny_mlp):
        graph = weight_graph(tiny_mlp)
        partitioning = spectral_cluster(graph, 6, seed=1)
        assert partitioning.nodes == graph.nodes
        assert partitioning.labels.min() >= 0
        assert partitioning.labels.max() < 6

    @pytest.mark.parametrize("seed", range(5))
    def test_node_order_does_not_matter(self, seed):
        weights, truth = three_cliques()
        order = np.random.default_rng(seed).permutation(len(truth))
        permuted = NeuronGraph(
            tuple((1, i) for i in range(len(truth))), sparse.csr_matrix(weights[np.ix_(order, order)]), "weights"
        )
        labels = np.empty_like(truth)
        labels[order] = spectral_cluster(permuted, 3, seed=0).labels
        assert adjusted_rand_score(truth, labels) == 1.0


@pytest.mark.slow
class TestSpectralOptimality:
    """Test two-way spectral cuts against exhaustive search."""

    def test_near_optimal_on_random_graphs(self):
        rng = np.random.default_rng(2024)
        wins = 0
        for trial in range(100):
            graph = random_graph(rng, int(rng.integers(6, 12)))
            labels = spectral_cluster(graph, 2, seed=trial).labels
            if len(np.unique(labels)) == 2 and ncut(graph, labels) <= 1.2 * optimal_two_way_ncut(graph):
                wins += 1
        assert wins >= 90

    def test_exhaustive_search_agrees_with_ncut(self):
        graph = two_cliques(size=4, bridge=0.3)
        assert optimal_two_way_ncut(graph) == pytest.approx(brute_force_ncut(graph))


class TestSubclusters:
    """Test cluster-by-layer intersections."""

    def test_filter_rule(self):
        partitioning, universe = layered_partitioning([0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1], k=2)
        assert derive_subclusters(partitioning, universe) == [
            Subcluster(1, (0, 1, 2), 0),
            Subcluster(2, (1, 2, 3), 1),
        ]

    def test_whole_layer_contributes_nothing(self):
        partitioning, universe = layered_partitioning([0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0], k=2)
        subclusters = derive_subclusters(partitioning, universe)
        assert [s.layer for s in subclusters] == [1, 1]

    def test_io_layers_skipped(self):
        partitioning, universe = layered_partitioning([0, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 1], k=2)
        assert {s.layer for s in derive_subclusters(partitioning, universe)} == {1, 2}

    def test_align_local_k(self):
        partitioning, _ = layered_partitioning([0, 0, 0, 1, 2, 3, 1, 1, 1, 1, 0, 1], k=4)
        k_map = align_local_k(partitioning)
        assert k_map[1] == 4
        assert k_map[2] == 1


class TestLocalPartitioning:
    """Test per-layer local clustering."""

    def test_keeps_hidden_layers_only(self, tiny_mlp):
        partitioning = local_partitioning("weights", tiny_mlp, {1: 3, 2: 2}, seed=0)
        assert partitioning.layers() == [1, 2]
        assert partitioning.method == "weights/local"
        assert partitioning.k == 3
        _, layer_two = partitioning.layer_labels(2)
        assert layer_two.max() < 2

    def test_deterministic(self, tiny_mlp):
        first = local_partitioning("weights", tiny_mlp, {1: 2, 2: 2}, seed=4)
        second = local_partitioning("weights", tiny_mlp, {1: 2, 2: 2}, seed=4)
        np.testing.assert_array_equal(first.labels, second.labels)


class TestRandomSubclusters:
    """Test random same-size comparators."""

    def test_complement_of_one(self):
        samples = sample_random_subclusters(Subcluster(1, (0, 1, 2)), width=4, count=19, seed=0)
        assert len(samples) == 19
        for sample in samples:
            assert sample.layer == 1
            assert sample.size == 3
            assert set(sample.indices) < {0, 1, 2, 3}

    def test_same_seed_same_samples(self):
        true = Subcluster(2, (3, 5, 8))
        assert sample_random_subclusters(true, 16, seed=[7, 1, 2]) == sample_random_subclusters(
            true, 16, seed=[7, 1, 2]
        )
        assert sample_random_subclusters(true, 16, seed=[7, 1, 2]) != sample_random_subclusters(
            true, 16, seed=[7, 1, 3]
        )

    @pytest.mark.parametrize("indices", [(0, 1, 2, 3), ()])
    def test_impossible_size(self, indices):
        with pytest.raises(InvalidArgumentError):
            sample_random_subclusters(Subcluster(1, indices), width=4)

    def test_derived_seed_stable(self):
        assert derived_seed(1, 2, 3) == derived_seed(1, 2, 3)
        assert derived_seed(1, 2, 3) != derived_seed(1, 2, 4)


class TestPartitionFiles:
    """Test the partition text format and method names."""

    def test_round_trip(self, tmp_path):
        partitioning, _ = layered_partitioning([0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1], k=2)
        path = tmp_path / "p.txt"
        write_partitioning(partitioning, path, header="config_hash=abc seed=1")
        loaded = read_partitioning(path)
        assert loaded.nodes == partitioning.nodes
        np.testing.assert_array_equal(loaded.labels, partitioning.labels)
        assert (loaded.method, loaded.k) == ("weights/global", 2)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("k 2\n1:0 0\n")
        with pytest.raises(FormatError):
            read_partitioning(path)

    def test_parse_method(self):
        assert parse_method("activations/local") == ("activations", "local")
        with pytest.raises(InvalidArgumentError):
            parse_method("weights/regional")
