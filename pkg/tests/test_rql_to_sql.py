"""Test RQL to SQL conversion over report columns using SQLGlot."""

import duckdb
import pytest

from modprobe.errors import InvalidArgumentError
from modprobe.results_store import REPORT_COLUMNS
from modprobe.rql_to_sql import RQLToSQLConverter, convert_rql_to_sql

pytestmark = pytest.mark.fast


def convert(rql: str) -> tuple[str, list]:
    return convert_rql_to_sql("report", rql, REPORT_COLUMNS)


@pytest.fixture
def report_table():
    connection = duckdb.connect(":memory:")
    connection.execute("CREATE TABLE report (method VARCHAR, metric VARCHAR, p_value DOUBLE, effect DOUBLE)")
    connection.execute(
        """
        INSERT INTO report VALUES
            ('weights/global', 'acc_drop', 0.001, 1.4),
            ('weights/local', 'acc_drop', 0.2, 1.0),
            ('activations/global', 'vis_score', 0.03, 1.2),
            ('activations/local', 'softmax_entropy', 0.7, 0.9)
        """
    )
    yield connection
    connection.close()


def run(connection, rql: str) -> list[tuple]:
    sql, params = RQLToSQLConverter(["method", "metric", "p_value", "effect"]).convert_to_sql("report", rql)
    return connection.execute(sql, params).fetchall()


def test_empty_query_selects_everything():
    """Test that an empty filter is a plain SELECT."""
    sql, params = convert("")
    assert "SELECT" in sql
    assert "FROM report" in sql
    assert "WHERE" not in sql
    assert params == []


def test_comparison_becomes_parameter():
    """Test that values never appear inline."""
    sql, params = convert("lt(p_value,0.01)")
    assert '"p_value" <' in sql
    assert "0.01" not in sql
    assert params == [0.01]


def test_and_conditions():
    sql, params = convert("and(eq(metric,acc_drop),gt(effect,1))")
    assert "AND" in sql
    assert params == ["acc_drop", 1]


def test_unknown_column_rejected():
    """Test that only whitelisted columns reach the SQL."""
    with pytest.raises(InvalidArgumentError, match="Unknown column"):
        convert("eq(password,1)")


def test_injection_in_column_rejected():
    with pytest.raises(InvalidArgumentError):
        convert('eq(p_value";DROP TABLE report;--,1)')


def test_invalid_rql():
    with pytest.raises(InvalidArgumentError):
        convert("lt(p_value,")


def test_unsupported_operator():
    with pytest.raises(InvalidArgumentError, match="Unsupported"):
        convert("match(method,weights)")


class TestExecution:
    """Test converted queries against DuckDB."""

    def test_filter(self, report_table):
        rows = run(report_table, "lt(p_value,0.05)")
        assert {row[0] for row in rows} == {"weights/global", "activations/global"}

    def test_sort_descending(self, report_table):
        rows = run(report_table, "sort(-effect)")
        assert [row[3] for row in rows] == [1.4, 1.2, 1.0, 0.9]

    def test_select_and_limit(self, report_table):
        rows = run(report_table, "select(method)&sort(p_value)&limit(2)")
        assert rows == [("weights/global",), ("activations/global",)]

    def test_limit_with_offset(self, report_table):
        rows = run(report_table, "select(method)&sort(p_value)&limit(1,1)")
        assert rows == [("activations/global",)]

    def test_contains(self, report_table):
        rows = run(report_table, "contains(method,local)")
        assert len(rows) == 2

    def test_in_and_out(self, report_table):
        assert len(run(report_table, "in(metric,(acc_drop,vis_score))")) == 3
        assert len(run(report_table, "out(metric,(acc_drop,vis_score))")) == 1

    def test_or(self, report_table):
        rows = run(report_table, "or(eq(metric,vis_score),gt(p_value,0.5))")
        assert len(rows) == 2
