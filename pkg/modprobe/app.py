"""modprobe pipeline orchestrator.

PIPELINE STAGES (exposed via the modprobe CLI):
- train() -> model files + training logs, one per replicate
- graphify() -> global weight/activation graphs per replicate
- cluster() -> partitionings per replicate, method and k
- lesion() -> acc_drop / class_range measurement tables
- featvis() -> vis_score / softmax_entropy measurement tables + images
- corrvis() -> correlation visualizations and side-selectivity comparison
- stats() -> StatsReport JSON/CSV per k
- report(rql_query, format) -> consolidated rows + SVG renderings
- run_all() -> every stage in order

Every stage reads its inputs from files under settings.out and writes its
outputs there, so each one can be re-run on its own.
"""

import atexit
import logging
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np

from . import plots
from .cluster import (
    METHODS,
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
from .config import ModprobeSettings, load_settings
from .corrvis import cluster_visualization, layer_pixel_maps, selectivity_comparison, side_selectivity
from .data import LabeledDataset, carve_validation, load_idx_pair, make_halves_dataset
from .errors import InvalidArgumentError, ModprobeError, StageError
from .featvis import visualize_subcluster
from .graphify import NeuronGraph, activation_graph, node_universe, read_graph, weight_graph, write_graph
from .images import write_pgm
from .lesion import LesionEvaluator
from .model import NetworkModel, load_model, save_model
from .neurons import Subcluster
from .results_store import ResultsStore
from .stats import LESION_METRICS, VIS_METRICS, MeasurementRecord, StatsReport, build_report
from .trainer import init_params
from .trainer import train as train_model

INCOMPLETE_MARKER = "INCOMPLETE"
LOG_COLUMNS = ["epoch", "train_loss", "train_acc", "test_acc"]
CORRVIS_COLUMNS = [
    "replicate",
    "method",
    "layer",
    "cluster_id",
    "size",
    "file",
    "side_selectivity",
    "random_side_selectivity",
]
SELECTIVITY_COLUMNS = ["k", "method", "true_mean", "random_mean", "statistic", "p_value"]


def method_slug(method: str) -> str:
    return method.replace("/", "-")


class ModularityProbe:
    """Runs the modularity analysis pipeline for one configuration.

    Owns the settings, logging setup and the results store (single source of
    truth for measurements and reports).
    """

    def __init__(self, settings: ModprobeSettings | None = None):
        self.settings = settings or load_settings()

        # Setup logging using stdlib
        logging.basicConfig(
            level=self.settings.log_level,
            format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
        )
        self.logger = logging.getLogger(__name__)

        self.out = Path(self.settings.out)
        self.header = self.settings.artifact_header()
        self.store = ResultsStore(self.settings.db_path, self.settings.random_count)
        self.logger.info(f"modprobe initialized: out={self.out} config_hash={self.settings.config_hash()}")

        self._datasets: tuple[LabeledDataset, LabeledDataset, LabeledDataset] | None = None
        atexit.register(self._cleanup)

    def _cleanup(self) -> None:
        if hasattr(self, "store") and self.store:
            self.store.close()

    # =============================================================================
    # PATHS AND INPUTS
    # =============================================================================

    def run_dir(self, k: int) -> Path:
        """Per-k output root: the run directory itself, or k<k>/ under a sweep."""
        return self.out / f"k{k}" if self.settings.k_sweep else self.out

    def model_path(self, replicate: int) -> Path:
        return self.out / "models" / f"replicate-{replicate}.nnmod"

    def graph_path(self, replicate: int, basis: str) -> Path:
        return self.out / "graphs" / f"replicate-{replicate}" / f"{basis}-global.txt"

    def partition_path(self, k: int, replicate: int, method: str) -> Path:
        return self.run_dir(k) / "partitions" / f"replicate-{replicate}" / f"{method_slug(method)}.txt"

    def network_label(self) -> str:
        suffix = "-halves" if self.settings.dataset == "halves" else ""
        return f"{self.settings.architecture}{suffix}"

    def datasets(self) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
        """(train, validation, test); validation is carved from the training files."""
        if self._datasets is not None:
            return self._datasets
        s = self.settings
        missing = [
            name
            for name in ("train_images", "train_labels", "test_images", "test_labels")
            if getattr(s, name) is None or not Path(getattr(s, name)).exists()
        ]
        if missing:
            raise InvalidArgumentError(f"dataset files missing or not set: {', '.join(missing)}")

        train_set = load_idx_pair(s.train_images, s.train_labels, "train")
        test_set = load_idx_pair(s.test_images, s.test_labels, "test")
        if s.dataset == "halves":
            train_set = make_halves_dataset(train_set, s.seed)
            test_set = make_halves_dataset(test_set, s.seed + 1)
        rest, validation = carve_validation(train_set, s.validation_fraction, s.seed)
        validation = validation.head(s.validation_size)
        self.logger.info(f"data: train={len(rest)} validation={len(validation)} test={len(test_set)}")
        self._datasets = (rest, validation, test_set)
        return self._datasets

    def load_models(self) -> list[NetworkModel]:
        paths = [self.model_path(r) for r in range(self.settings.replicates)]
        absent = [str(p) for p in paths if not p.exists()]
        if absent:
            raise InvalidArgumentError(f"model files missing (run 'modprobe train' first): {', '.join(absent)}")
        return [load_model(p) for p in paths]

    def _parallel(self, fn: Callable[..., Any], tasks: list[tuple]) -> list[Any]:
        """Run tasks on the worker pool; results come back in task order."""
        if self.settings.workers == 1:
            return [fn(*args) for args in tasks]
        with ThreadPoolExecutor(max_workers=self.settings.workers) as pool:
            return list(pool.map(lambda args: fn(*args), tasks))

    def run_stage(self, name: str, fn: Callable[[], Any]) -> Any:
        """Run one stage; on failure flag the output directory incomplete and raise StageError."""
        self.logger.info(f"stage {name}: start")
        try:
            result = fn()
        except ModprobeError as e:
            if isinstance(e, StageError):
                raise
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / INCOMPLETE_MARKER).write_text(f"stage={name}\n{e}\n")
            self.logger.error(f"stage {name} failed: {e}")
            raise StageError(name, str(e)) from e
        self.logger.info(f"stage {name}: done")
        return result

    # =============================================================================
    # STAGES
    # =============================================================================

    def train(self) -> list[Path]:
        """Train every replicate with seed = base seed + replicate index."""
        train_set, _, test_set = self.datasets()
        s = self.settings
        paths = []
        manifest = []
        for r in range(s.replicates):
            config = s.train_config(r)
            model = init_params(s.architecture, config.seed, train_set.image_shape, train_set.class_count)
            model, log = train_model(model, train_set, config, test_set)
            path = self.model_path(r)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_model(model, path)
            self.store.export_rows(
                log.rows(),
                self.out / "logs" / f"replicate-{r}.csv",
                header=s.artifact_header(config.seed),
                columns=LOG_COLUMNS,
            )
            manifest.append({"replicate": r, "seed": config.seed, "file": path.name})
            paths.append(path)
            self.logger.info(f"replicate {r}: wrote {path}")
        self.store.export_rows(manifest, self.out / "models" / "manifest.csv", header=self.header)
        return paths

    def _bases(self) -> list[str]:
        return sorted({parse_method(m)[0] for m in self.settings.methods}, key=["weights", "activations"].index)

    def graphify(self) -> list[Path]:
        models = self.load_models()
        validation = self.datasets()[1] if "activations" in self._bases() else None
        written = []
        for r, model in enumerate(models):
            for basis in self._bases():
                graph = weight_graph(model) if basis == "weights" else activation_graph(model, validation)
                path = self.graph_path(r, basis)
                path.parent.mkdir(parents=True, exist_ok=True)
                write_graph(graph, path, header=self.settings.artifact_header(self.settings.seed + r))
                written.append(path)
        return written

    def _global_graph(self, replicate: int, basis: str) -> NeuronGraph:
        path = self.graph_path(replicate, basis)
        if not path.exists():
            raise InvalidArgumentError(f"graph file {path} missing (run 'modprobe graphify' first)")
        return read_graph(path)

    def cluster(self) -> list[Path]:
        models = self.load_models()
        s = self.settings
        written = []
        for k in s.cluster_counts():
            for r, model in enumerate(models):
                global_parts: dict[str, Partitioning] = {}
                for method in s.methods:
                    basis, scope = parse_method(method)
                    graph = self._global_graph(r, basis)
                    if basis not in global_parts:
                        seed = derived_seed(s.seed, r, METHODS.index(f"{basis}/global"), k)
                        global_parts[basis] = spectral_cluster(graph, min(k, graph.size), seed, f"{basis}/global")
                    if scope == "global":
                        partitioning = global_parts[basis]
                    else:
                        partitioning = local_partitioning(
                            basis,
                            model,
                            align_local_k(global_parts[basis]),
                            derived_seed(s.seed, r, METHODS.index(method), k),
                            global_graph=graph,
                        )
                    path = self.partition_path(k, r, method)
                    path.parent.mkdir(parents=True, exist_ok=True)
                    write_partitioning(partitioning, path, header=s.artifact_header(s.seed + r))
                    written.append(path)
                    self.logger.info(f"k={k} replicate {r} {method}: {len(np.unique(partitioning.labels))} clusters")
        return written

    def _subclusters(self, k: int, replicate: int, method: str, model: NetworkModel) -> list[Subcluster]:
        path = self.partition_path(k, replicate, method)
        if not path.exists():
            raise InvalidArgumentError(f"partition file {path} missing (run 'modprobe cluster' first)")
        subclusters = derive_subclusters(read_partitioning(path), node_universe(model))
        if not subclusters:
            self.logger.warning(f"k={k} replicate {replicate} {method}: no subclusters survive the size filter")
        return subclusters

    def _comparators(self, replicate: int, method: str, index: int, sub: Subcluster, model: NetworkModel) -> list[Subcluster]:
        width = model.unit(sub.layer).width
        entropy = [self.settings.seed, replicate, METHODS.index(method), index]
        return sample_random_subclusters(sub, width, self.settings.random_count, entropy)

    def _measure(
        self,
        metrics: tuple[str, ...],
        measure_fn: Callable[[int, int, str, int, Subcluster, list[Subcluster]], dict[str, tuple]],
        models: list[NetworkModel],
    ) -> None:
        """Shared loop of the lesion and featvis stages: true vs random values per subcluster.

        measure_fn(k, replicate, method, index, subcluster, comparators) returns
        {metric: (true_value, random_values)}.
        """
        s = self.settings
        wanted = [m for m in metrics if m in s.metrics]
        for k in s.cluster_counts():
            records: list[MeasurementRecord] = []
            for r, model in enumerate(models):
                for method in s.methods:
                    subclusters = self._subclusters(k, r, method, model)
                    tasks = [
                        (k, r, method, i, sub, self._comparators(r, method, i, sub, model))
                        for i, sub in enumerate(subclusters)
                    ]
                    for sub, values in zip(subclusters, self._parallel(measure_fn, tasks), strict=True):
                        for metric in wanted:
                            true_value, random_values = values[metric]
                            records.append(
                                MeasurementRecord(r, method, metric, sub, true_value, np.array(random_values), k)
                            )
            self.store.clear_measurements()
            self.store.add_measurements(records)
            for metric in wanted:
                path = self.run_dir(k) / "measurements" / f"{metric}.csv"
                self.store.export_measurements_csv(path, metric, header=self.header)
                self.logger.info(f"k={k}: wrote {path}")

    def _wants(self, metrics: tuple[str, ...]) -> bool:
        if any(m in self.settings.metrics for m in metrics):
            return True
        self.logger.warning(f"none of {list(metrics)} requested; stage skipped")
        return False

    def lesion(self) -> None:
        if not self._wants(LESION_METRICS):
            return
        _, _, test_set = self.datasets()
        models = self.load_models()
        evaluators = [LesionEvaluator(model, test_set) for model in models]

        def measure(k, r, method, index, sub, randoms):
            true_result = evaluators[r].evaluate(sub)
            random_results = [evaluators[r].evaluate(c) for c in randoms]
            return {
                "acc_drop": (true_result.acc_drop, [x.acc_drop for x in random_results]),
                "class_range": (true_result.class_range, [x.class_range for x in random_results]),
            }

        self._measure(LESION_METRICS, measure, models)

    def featvis(self) -> None:
        if not self._wants(VIS_METRICS):
            return
        s = self.settings
        models = self.load_models()
        scale = (s.vis_scale_min, s.vis_scale_max)

        def visualize(model, c, *seed_parts):
            return visualize_subcluster(
                model, c, s.vis_steps, derived_seed(*seed_parts), s.vis_learning_rate, s.vis_jitter, scale
            )

        def measure(k, r, method, index, sub, randoms):
            model = models[r]
            base = (s.seed, r, METHODS.index(method), index)
            true_vis = visualize(model, sub, *base, 0)
            random_vis = [visualize(model, c, *base, j + 1) for j, c in enumerate(randoms)]
            path = self.run_dir(k) / "images" / f"replicate-{r}" / method_slug(method) / f"{sub.label()}.pgm"
            comment = (
                f"method={method} layer={sub.layer} cluster={sub.cluster_id} "
                f"score={true_vis.score:.17g} entropy={true_vis.softmax_entropy:.17g} "
                f"steps={s.vis_steps} jitter={s.vis_jitter} scale={scale[0]}-{scale[1]} {self.header}"
            )
            write_pgm(path, true_vis.image, comment)
            return {
                "vis_score": (true_vis.score, [v.score for v in random_vis]),
                "softmax_entropy": (true_vis.softmax_entropy, [v.softmax_entropy for v in random_vis]),
            }

        self._measure(VIS_METRICS, measure, models)

    def corrvis(self) -> list[dict]:
        """Pixel-correlation visualizations of first-layer subclusters and side selectivity."""
        s = self.settings
        models = self.load_models()
        if models[0].is_convolutional:
            self.logger.warning("correlation visualizations apply to MLPs only; stage skipped")
            return []
        _, _, test_set = self.datasets()
        layer = 1
        comparisons = []
        for k in s.cluster_counts():
            root = self.run_dir(k) / "corrvis"
            index_rows = []
            selectivity: dict[str, tuple[list[float], list[float]]] = {m: ([], []) for m in s.methods}
            for r, model in enumerate(models):
                maps = layer_pixel_maps(model, test_set, layer)
                for method in s.methods:
                    subs = self._subclusters(k, r, method, model)
                    for i, sub in enumerate(subs):
                        if sub.layer != layer:
                            continue
                        image = cluster_visualization(model, test_set, sub, maps)
                        path = root / f"replicate-{r}" / method_slug(method) / f"{sub.label()}.pgm"
                        write_pgm(path, image, f"method={method} layer={layer} cluster={sub.cluster_id} {self.header}")
                        true_value = side_selectivity(image)
                        random_values = [
                            side_selectivity(cluster_visualization(model, test_set, c, maps))
                            for c in self._comparators(r, method, i, sub, model)
                        ]
                        selectivity[method][0].append(true_value)
                        selectivity[method][1].extend(random_values)
                        index_rows.append(
                            {
                                "replicate": r,
                                "method": method,
                                "layer": layer,
                                "cluster_id": sub.cluster_id,
                                "size": sub.size,
                                "file": str(path.relative_to(root)),
                                "side_selectivity": true_value,
                                "random_side_selectivity": float(np.mean(random_values)),
                            }
                        )
            self.store.export_rows(index_rows, root / "index.csv", header=self.header, columns=CORRVIS_COLUMNS)
            rows = []
            for method, (true_values, random_values) in selectivity.items():
                if not true_values:
                    self.logger.warning(f"k={k} {method}: no first-layer subclusters to compare")
                    continue
                result = selectivity_comparison(true_values, random_values)
                rows.append({"k": k, "method": method, **asdict(result)})
                self.logger.info(f"k={k} {method}: side selectivity p={result.p_value:.3g}")
            self.store.export_rows(rows, root / "selectivity.csv", header=self.header, columns=SELECTIVITY_COLUMNS)
            comparisons += rows
        return comparisons

    def stats(self) -> list[StatsReport]:
        s = self.settings
        reports = []
        for k in s.cluster_counts():
            run = self.run_dir(k)
            files = sorted((run / "measurements").glob("*.csv"))
            if not files:
                raise InvalidArgumentError(f"no measurement tables under {run / 'measurements'}")
            self.store.clear_measurements()
            for path in files:
                self.store.load_measurements_csv(path)
            report = build_report(
                self.store.measurements(),
                self.network_label(),
                alpha=s.alpha,
                bh_scope=s.bh_scope,
                config_hash=s.config_hash(),
                seed=s.seed,
                replicates=s.replicates,
                header={
                    "k": k,
                    "replicates": s.replicates,
                    "vis_steps": s.vis_steps,
                    "vis_learning_rate": s.vis_learning_rate,
                    "vis_jitter": s.vis_jitter,
                    "vis_scale_min": s.vis_scale_min,
                    "vis_scale_max": s.vis_scale_max,
                },
            )
            target = run / "reports"
            target.mkdir(parents=True, exist_ok=True)
            (target / "report.json").write_text(report.model_dump_json(indent=2) + "\n")
            self.store.load_report(report)
            (target / "report.csv").write_bytes(
                f"# {self.header}\n".encode() + self.store.query_report(format="csv")
            )
            reports.append(report)
        return reports

    def report(self, rql_query: str | None = None, format: str = "json") -> list[dict] | bytes | None:
        """Consolidate every report.json under the output directory; None when there are none."""
        files = sorted(self.out.glob("**/reports/report.json"))
        if not files:
            return None
        self.store.clear_reports()
        for path in files:
            report = StatsReport.model_validate_json(path.read_text())
            self.store.add_report(report)
            for entry in report.entries:
                plots.percentile_histogram(
                    entry, path.parent / "histograms" / f"{method_slug(entry.method)}-{entry.metric}.svg"
                )
            plots.pvalue_grid(report, path.parent / "pvalues.svg")
        return self.store.query_report(rql_query, format)

    def run_all(self) -> list[dict] | bytes | None:
        stages: list[tuple[str, Callable[[], Any]]] = [
            ("train", self.train),
            ("graphify", self.graphify),
            ("cluster", self.cluster),
            ("lesion", self.lesion),
            ("featvis", self.featvis),
        ]
        if self.settings.corrvis:
            stages.append(("corrvis", self.corrvis))
        stages += [("stats", self.stats)]
        for name, fn in stages:
            self.run_stage(name, fn)
        result = self.run_stage("report", self.report)
        (self.out / INCOMPLETE_MARKER).unlink(missing_ok=True)
        return result

