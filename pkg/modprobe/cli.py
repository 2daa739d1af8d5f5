"""modprobe CLI using Typer, one command per pipeline stage."""

import json
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Annotated, Any

import typer

from .app import ModularityProbe
from .config import ModprobeSettings, load_settings
from .errors import InvalidArgumentError, ModprobeError

app = typer.Typer(
    name="modprobe",
    help="modprobe: train networks, partition their neurons and test the partitions for modularity",
    no_args_is_help=True,
)

USAGE_EXIT = 2
DATASET_FIELDS = ("train_images", "train_labels", "test_images", "test_labels")

ConfigOption = Annotated[Path | None, typer.Option("--config", help="Flat key=value config file")]
SeedOption = Annotated[int | None, typer.Option("--seed", help="Base seed")]
KOption = Annotated[int | None, typer.Option("--k", help="Number of clusters")]
KSweepOption = Annotated[str | None, typer.Option("--k-sweep", help="Comma-separated k values, e.g. 8,12,16")]
MethodsOption = Annotated[
    str | None, typer.Option("--methods", help="Comma-separated subset of weights|activations / global|local")
]
MetricsOption = Annotated[
    str | None, typer.Option("--metrics", help="Comma-separated subset of acc_drop,class_range,vis_score,softmax_entropy")
]
WorkersOption = Annotated[int | None, typer.Option("--workers", help="Worker count (default MODPROBE_WORKERS or 1)")]
OutOption = Annotated[Path | None, typer.Option("--out", help="Output directory")]


def _settings(
    config: Path | None,
    seed: int | None,
    k: int | None,
    k_sweep: str | None,
    methods: str | None,
    metrics: str | None,
    workers: int | None,
    out: Path | None,
) -> ModprobeSettings:
    try:
        return load_settings(
            config,
            seed=seed,
            k=k,
            k_sweep=k_sweep,
            methods=methods,
            metrics=metrics,
            workers=workers,
            out=out,
        )
    except InvalidArgumentError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(USAGE_EXIT) from e


def _require_datasets(settings: ModprobeSettings) -> None:
    missing = [
        name
        for name in DATASET_FIELDS
        if getattr(settings, name) is None or not Path(getattr(settings, name)).exists()
    ]
    if missing:
        typer.echo(f"Error: dataset path missing or not found: {', '.join(missing)}", err=True)
        raise typer.Exit(USAGE_EXIT)


def _run(settings: ModprobeSettings, stage: str, action: Callable[[ModularityProbe], Any]) -> Any:
    probe = ModularityProbe(settings)
    try:
        return probe.run_stage(stage, lambda: action(probe))
    except ModprobeError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(1) from e
    finally:
        probe.store.close()


# =============================================================================
# STAGE COMMANDS
# =============================================================================


@app.command()
def train(
    config: ConfigOption = None,
    seed: SeedOption = None,
    k: KOption = None,
    k_sweep: KSweepOption = None,
    methods: MethodsOption = None,
    metrics: MetricsOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
):
    """Train every replicate network and write model files and training logs."""
    settings = _settings(config, seed, k, k_sweep, methods, metrics, workers, out)
    _require_datasets(settings)
    paths = _run(settings, "train", ModularityProbe.train)
    typer.echo(f"Trained {len(paths)} replicate(s) into {settings.out / 'models'}")


@app.command()
def graphify(
    config: ConfigOption = None,
    seed: SeedOption = None,
    k: KOption = None,
    k_sweep: KSweepOption = None,
    methods: MethodsOption = None,
    metrics: MetricsOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
):
    """Build global weight and activation graphs for every trained replicate."""
    settings = _settings(config, seed, k, k_sweep, methods, metrics, workers, out)
    paths = _run(settings, "graphify", ModularityProbe.graphify)
    typer.echo(f"Wrote {len(paths)} graph file(s)")


@app.command()
def cluster(
    config: ConfigOption = None,
    seed: SeedOption = None,
    k: KOption = None,
    k_sweep: KSweepOption = None,
    methods: MethodsOption = None,
    metrics: MetricsOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
):
    """Partition every replicate's neurons with each requested method."""
    settings = _settings(config, seed, k, k_sweep, methods, metrics, workers, out)
    paths = _run(settings, "cluster", ModularityProbe.cluster)
    typer.echo(f"Wrote {len(paths)} partitioning file(s)")


@app.command()
def lesion(
    config: ConfigOption = None,
    seed: SeedOption = None,
    k: KOption = None,
    k_sweep: KSweepOption = None,
    methods: MethodsOption = None,
    metrics: MetricsOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
):
    """Lesion true and random subclusters and record accuracy drops."""
    settings = _settings(config, seed, k, k_sweep, methods, metrics, workers, out)
    _require_datasets(settings)
    _run(settings, "lesion", ModularityProbe.lesion)
    typer.echo("Lesion measurements written")


@app.command()
def featvis(
    config: ConfigOption = None,
    seed: SeedOption = None,
    k: KOption = None,
    k_sweep: KSweepOption = None,
    methods: MethodsOption = None,
    metrics: MetricsOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
):
    """Optimize feature visualizations of true and random subclusters."""
    settings = _settings(config, seed, k, k_sweep, methods, metrics, workers, out)
    _run(settings, "featvis", ModularityProbe.featvis)
    typer.echo("Feature visualization measurements written")


@app.command()
def corrvis(
    config: ConfigOption = None,
    seed: SeedOption = None,
    k: KOption = None,
    k_sweep: KSweepOption = None,
    methods: MethodsOption = None,
    metrics: MetricsOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
):
    """Correlation visualizations of first-layer subclusters and their side selectivity."""
    settings = _settings(config, seed, k, k_sweep, methods, metrics, workers, out)
    _require_datasets(settings)
    rows = _run(settings, "corrvis", ModularityProbe.corrvis)
    for row in rows:
        typer.echo(f"k={row['k']} {row['method']}: side selectivity p={row['p_value']:.3g}")


@app.command()
def stats(
    config: ConfigOption = None,
    seed: SeedOption = None,
    k: KOption = None,
    k_sweep: KSweepOption = None,
    methods: MethodsOption = None,
    metrics: MetricsOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
):
    """Aggregate measurements into stats reports."""
    settings = _settings(config, seed, k, k_sweep, methods, metrics, workers, out)
    reports = _run(settings, "stats", ModularityProbe.stats)
    typer.echo(f"Wrote {len(reports)} report(s)")


# =============================================================================
# REPORT AND FULL PIPELINE
# =============================================================================


def _emit(result: list[dict] | bytes, format: str, output: Path | None) -> None:
    if format == "json":
        payload = json.dumps(result, indent=2, default=str).encode() + b"\n"
    else:
        payload = result
    if output is not None:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_bytes(payload)
        typer.echo(f"Wrote {output}")
    elif format == "parquet":
        sys.stdout.buffer.write(payload)
    else:
        typer.echo(payload.decode(), nl=False)


@app.command()
def report(
    config: ConfigOption = None,
    out: OutOption = None,
    rql: Annotated[str | None, typer.Option("--rql", help="RQL filter, e.g. 'lt(p_value,0.01)&sort(p_value)'")] = None,
    format: Annotated[str, typer.Option("--format", help="Output format: json, csv, parquet")] = "json",
    output: Annotated[Path | None, typer.Option("--output", help="Write the table here instead of stdout")] = None,
):
    """Consolidate stats reports into one table and render their SVG summaries."""
    settings = _settings(config, None, None, None, None, None, None, out)
    format = format.lower()
    if format not in ("json", "csv", "parquet"):
        typer.echo(f"Error: Unsupported format '{format}'. Use: json, csv, parquet", err=True)
        raise typer.Exit(USAGE_EXIT)

    result = _run(settings, "report", lambda probe: probe.report(rql, format))
    if result is None:
        typer.echo("no reports")
        return
    _emit(result, format, output)


@app.command(name="all")
def run_all(
    config: ConfigOption = None,
    seed: SeedOption = None,
    k: KOption = None,
    k_sweep: KSweepOption = None,
    methods: MethodsOption = None,
    metrics: MetricsOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
):
    """Run every stage from training to the consolidated report."""
    settings = _settings(config, seed, k, k_sweep, methods, metrics, workers, out)
    _require_datasets(settings)
    probe = ModularityProbe(settings)
    try:
        result = probe.run_all()
    except ModprobeError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(1) from e
    finally:
        probe.store.close()
    if result is None:
        typer.echo("no reports")
        return
    _emit(result, "json", None)


if __name__ in {"__main__", "__mp_main__"}:
    app()
