"""Results store for measurement tables and stats reports, backed by DuckDB.

MEASUREMENT OPERATIONS:
- add_measurements(records) -> int
- load_measurements_csv(path) -> int
- measurements(metric=None, method=None) -> list[MeasurementRecord]
- export_measurements_csv(path, metric, header) -> None
- clear_measurements() -> None

REPORT OPERATIONS:
- add_report(report) -> int
- load_report(report) -> int (replaces stored rows)
- clear_reports() -> None
- query_report(rql_query, format) -> list[dict] | bytes

TABLE EXPORT:
- export_rows(rows, path, header, format) -> None

SUPPORTED OUTPUT FORMATS:
- Python objects (fetchall) for json
- CSV and Parquet through DuckDB COPY

PRIVATE METHODS (internal implementation):
- _create_connection() -> duckdb.DuckDBPyConnection
- _create_tables() -> None
- _ingest(table_name, arrow_table) -> int
- _export_arrow(arrow_table, format) -> bytes
"""

import os
import tempfile
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import duckdb
import numpy as np
import pyarrow as pa
import sqlglot
from sqlglot import exp

from .errors import FormatError, InvalidArgumentError
from .neurons import Subcluster
from .rql_to_sql import convert_rql_to_sql
from .stats import MeasurementRecord, StatsReport, report_rows

MEASUREMENT_KEYS = ["network", "method", "k", "metric", "layer", "cluster_id", "size", "indices", "true_value"]
REPORT_COLUMNS = [
    "config_hash",
    "network",
    "method",
    "metric",
    "k",
    "direction",
    "subclusters",
    "p_value",
    "aggregation",
    "bh_significant",
    "bh_critical",
    "effect",
    "effect_se",
    "effect_significant",
]
FORMATS = ("json", "csv", "parquet")


def random_columns(count: int) -> list[str]:
    return [f"random_{i:02d}" for i in range(count)]


class ResultsStore:
    """Single source of truth for measurements and report rows.

    Public methods are used by the pipeline stages and the CLI report command.
    Private methods (prefixed with _) are internal implementation details.
    """

    def __init__(self, db_path: Path | str = ":memory:", random_count: int = 19):
        self.db_path = Path(db_path)
        self.random_count = random_count
        self.connection = self._create_connection()
        self._create_tables()

    # =============================================================================
    # PRIVATE METHODS - Internal implementation details
    # =============================================================================

    def _create_connection(self) -> duckdb.DuckDBPyConnection:
        if self.db_path == Path(":memory:"):
            return duckdb.connect(":memory:")
        return duckdb.connect(str(self.db_path))

    def _measurement_columns(self) -> dict[str, str]:
        columns = {
            "network": "INTEGER",
            "method": "VARCHAR",
            "k": "INTEGER",
            "metric": "VARCHAR",
            "layer": "INTEGER",
            "cluster_id": "INTEGER",
            "size": "INTEGER",
            "indices": "VARCHAR",
            "true_value": "DOUBLE",
        }
        columns.update({name: "DOUBLE" for name in random_columns(self.random_count)})
        return columns

    def _create_tables(self) -> None:
        definition = ", ".join(f"{name} {kind}" for name, kind in self._measurement_columns().items())
        self.connection.execute(f"CREATE TABLE IF NOT EXISTS measurements ({definition})")
        self.connection.execute(
            """
            CREATE TABLE IF NOT EXISTS report (
                config_hash VARCHAR, network VARCHAR, method VARCHAR, metric VARCHAR,
                k INTEGER, direction VARCHAR, subclusters INTEGER, p_value DOUBLE,
                aggregation VARCHAR, bh_significant BOOLEAN, bh_critical DOUBLE,
                effect DOUBLE, effect_se DOUBLE, effect_significant BOOLEAN
            )
            """
        )

    def _ingest(self, table_name: str, table: pa.Table) -> int:
        view = f"incoming_{id(table)}"
        self.connection.register(view, table)
        try:
            self.connection.execute(f"INSERT INTO {table_name} BY NAME SELECT * FROM {view}")
        finally:
            self.connection.unregister(view)
        return table.num_rows

    def _export_arrow(self, table: pa.Table, format: str) -> bytes:
        """Write an Arrow table through DuckDB COPY and return the file bytes."""
        if format not in ("csv", "parquet"):
            raise InvalidArgumentError(f"Unsupported format: {format}. Supported formats: csv, parquet")
        view = f"temp_export_{id(table)}"
        self.connection.register(view, table)
        try:
            with tempfile.NamedTemporaryFile(mode="w+b", suffix=f".{format}", delete=False) as f:
                temp_file = f.name
            try:
                options = "FORMAT CSV, HEADER" if format == "csv" else "FORMAT PARQUET"
                self.connection.execute(f"COPY (SELECT * FROM {view}) TO '{temp_file}' ({options})")
                return Path(temp_file).read_bytes()
            finally:
                os.unlink(temp_file)
        finally:
            self.connection.unregister(view)

    @staticmethod
    def _arrow_from_rows(rows: Sequence[dict[str, Any]], columns: Sequence[str] | None = None) -> pa.Table:
        if not rows:
            return pa.table({name: pa.array([], pa.string()) for name in columns or []})
        table = pa.Table.from_pylist(list(rows))
        for i, field in enumerate(table.schema):
            if pa.types.is_null(field.type):
                table = table.set_column(i, field.name, table.column(i).cast(pa.float64()))
        return table.select(list(columns)) if columns else table

    # =============================================================================
    # PUBLIC API - measurements
    # =============================================================================

    def add_measurements(self, records: Sequence[MeasurementRecord]) -> int:
        """Bulk insert measurement records; returns the number of rows added."""
        if not records:
            return 0
        randoms = np.vstack([r.random_values for r in records])
        if randoms.shape[1] != self.random_count:
            raise InvalidArgumentError(
                f"records carry {randoms.shape[1]} random values, store expects {self.random_count}"
            )
        columns: dict[str, Any] = {
            "network": [r.network for r in records],
            "method": [r.method for r in records],
            "k": [r.k for r in records],
            "metric": [r.metric for r in records],
            "layer": [r.subcluster.layer for r in records],
            "cluster_id": [r.subcluster.cluster_id for r in records],
            "size": [r.subcluster.size for r in records],
            "indices": [" ".join(map(str, r.subcluster.indices)) for r in records],
            "true_value": [float(r.true_value) for r in records],
        }
        for i, name in enumerate(random_columns(self.random_count)):
            columns[name] = randoms[:, i]
        return self._ingest("measurements", pa.table(columns))

    def load_measurements_csv(self, path: str | Path) -> int:
        """Insert rows from a measurement CSV written by export_measurements_csv."""
        path = Path(path)
        if not path.exists():
            raise FormatError(f"measurement file {path} does not exist")
        with path.open() as fh:
            skip = 1 if fh.readline().startswith("#") else 0
        types = ", ".join(f"'{name}': '{kind}'" for name, kind in self._measurement_columns().items())
        location = str(path).replace("'", "''")
        before = self.connection.execute("SELECT COUNT(*) FROM measurements").fetchone()[0]
        try:
            self.connection.execute(
                f"INSERT INTO measurements SELECT * FROM read_csv('{location}', header=true, "
                f"skip={skip}, columns={{{types}}})"
            )
        except duckdb.Error as e:
            raise FormatError(f"could not read measurements from {path}: {e}") from e
        after = self.connection.execute("SELECT COUNT(*) FROM measurements").fetchone()[0]
        return after - before

    def _measurement_query(self, metric: str | None, method: str | None) -> exp.Select:
        query = sqlglot.select("*").from_("measurements")
        if metric is not None:
            query = query.where(exp.column("metric").eq(exp.Literal.string(metric)))
        if method is not None:
            query = query.where(exp.column("method").eq(exp.Literal.string(method)))
        return query.order_by("network", "method", "k", "metric", "layer", "cluster_id")

    def measurements(self, metric: str | None = None, method: str | None = None) -> list[MeasurementRecord]:
        result = self.connection.execute(self._measurement_query(metric, method).sql(dialect="duckdb"))
        columns = [desc[0] for desc in result.description]
        randoms = random_columns(self.random_count)
        records = []
        for values in result.fetchall():
            row = dict(zip(columns, values, strict=True))
            indices = tuple(int(i) for i in row["indices"].split()) if row["indices"] else ()
            records.append(
                MeasurementRecord(
                    network=row["network"],
                    method=row["method"],
                    metric=row["metric"],
                    subcluster=Subcluster(row["layer"], indices, row["cluster_id"]),
                    true_value=row["true_value"],
                    random_values=np.array([row[name] for name in randoms]),
                    k=row["k"],
                )
            )
        return records

    def clear_measurements(self) -> None:
        self.connection.execute("DELETE FROM measurements")

    def export_measurements_csv(self, path: str | Path, metric: str, header: str | None = None) -> None:
        sql = self._measurement_query(metric, None).sql(dialect="duckdb")
        table = self.connection.execute(sql).fetch_arrow_table()
        self._write(path, self._export_arrow(table, "csv"), header)

    # =============================================================================
    # PUBLIC API - reports
    # =============================================================================

    def add_report(self, report: StatsReport) -> int:
        rows = [{"config_hash": report.config_hash, **row} for row in report_rows(report)]
        if not rows:
            return 0
        return self._ingest("report", self._arrow_from_rows(rows, REPORT_COLUMNS))

    def clear_reports(self) -> None:
        self.connection.execute("DELETE FROM report")

    def load_report(self, report: StatsReport) -> int:
        """Replace the stored report rows with this report's entries."""
        self.clear_reports()
        return self.add_report(report)

    def query_report(self, rql_query: str | None = None, format: str = "json") -> list[dict[str, Any]] | bytes:
        """Report rows filtered by an optional RQL expression."""
        if format not in FORMATS:
            raise InvalidArgumentError(f"Unsupported format: {format}. Supported formats: {', '.join(FORMATS)}")
        sql, params = convert_rql_to_sql("report", rql_query or "", REPORT_COLUMNS)
        result = self.connection.execute(sql, params)
        if format == "json":
            columns = [desc[0] for desc in result.description]
            return [dict(zip(columns, row, strict=True)) for row in result.fetchall()]
        return self._export_arrow(result.fetch_arrow_table(), format)

    # =============================================================================
    # PUBLIC API - generic tables
    # =============================================================================

    def export_rows(
        self,
        rows: Sequence[dict[str, Any]],
        path: str | Path,
        header: str | None = None,
        format: str = "csv",
        columns: Sequence[str] | None = None,
    ) -> None:
        """Write plain row dicts as CSV or Parquet; CSV gets the optional '# header' line."""
        self._write(path, self._export_arrow(self._arrow_from_rows(rows, columns), format), header)

    @staticmethod
    def _write(path: str | Path, payload: bytes, header: str | None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        prefix = f"# {header}\n".encode() if header and path.suffix == ".csv" else b""
        path.write_bytes(prefix + payload)

    def close(self) -> None:
        """Close the database connection."""
        if self.connection:
            self.connection.close()

    def __enter__(self) -> "ResultsStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
