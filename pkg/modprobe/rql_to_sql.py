"""
RQL filters over result tables, parsed with pyrql and rendered safely with SQLGlot.

Only whitelisted column names reach the generated SQL; every value travels
as a bound parameter.
"""

from collections.abc import Iterable
from typing import Any

import pyrql
import sqlglot
from sqlglot import exp

from .errors import InvalidArgumentError

COMPARISONS = {
    "eq": exp.EQ,
    "ne": exp.NEQ,
    "lt": exp.LT,
    "le": exp.LTE,
    "gt": exp.GT,
    "ge": exp.GTE,
}
MODIFIERS = ("select", "sort", "limit")


class RQLToSQLConverter:
    """Converts an RQL expression into a parameterised SELECT over one table."""

    def __init__(self, columns: Iterable[str], dialect: str = "duckdb"):
        self.columns = set(columns)
        self.dialect = dialect

    def convert_to_sql(self, table_name: str, rql_query: str) -> tuple[str, list[Any]]:
        """
        Args:
            table_name: Table (or view) to select from
            rql_query: RQL string such as "lt(p_value,0.01)&sort(-effect)"

        Returns:
            Tuple of (sql_string, parameters_list)
        """
        query = sqlglot.select("*").from_(table_name)
        params: list[Any] = []
        if not rql_query or not rql_query.strip():
            return query.sql(dialect=self.dialect), params

        try:
            parsed = pyrql.parse(rql_query)
        except Exception as e:
            raise InvalidArgumentError(f"Invalid RQL query: {e}") from e

        nodes = parsed["args"] if parsed.get("name") == "and" else [parsed]
        conditions = []
        for node in nodes:
            if node.get("name") in MODIFIERS:
                query = self._apply_modifier(query, node, table_name)
            else:
                conditions.append(self._condition(node, params))
        if conditions:
            query = query.where(exp.and_(*conditions))

        return query.sql(dialect=self.dialect), params

    def _column(self, name: Any) -> exp.Column:
        if not isinstance(name, str) or name not in self.columns:
            raise InvalidArgumentError(f"Unknown column '{name}' (available: {', '.join(sorted(self.columns))})")
        return exp.column(name, quoted=True)

    def _apply_modifier(self, query: exp.Select, node: dict, table_name: str) -> exp.Select:
        operator, args = node["name"], node.get("args", [])
        if operator == "select":
            columns = [self._column(a) for a in args]
            return query.select(*columns, append=False) if columns else query
        if operator == "sort":
            for arg in args:
                if isinstance(arg, tuple) and len(arg) == 2:
                    sign, field = arg
                elif isinstance(arg, str) and arg[:1] in "+-":
                    sign, field = arg[0], arg[1:]
                else:
                    sign, field = "+", arg
                query = query.order_by(exp.Ordered(this=self._column(field), desc=sign == "-"))
            return query
        # limit(count[, offset])
        if not args or not all(isinstance(a, int) and a >= 0 for a in args[:2]):
            raise InvalidArgumentError("limit() takes a non-negative count and optional offset")
        query = query.limit(args[0])
        return query.offset(args[1]) if len(args) > 1 else query

    def _condition(self, node: Any, params: list[Any]) -> exp.Expression:
        if not isinstance(node, dict):
            raise InvalidArgumentError(f"Unsupported RQL term: {node!r}")
        operator, args = node.get("name"), node.get("args", [])

        if operator in ("and", "or"):
            parts = [self._condition(arg, params) for arg in args]
            return exp.and_(*parts) if operator == "and" else exp.or_(*parts)
        if len(args) != 2:
            raise InvalidArgumentError(f"{operator}() takes a column and a value")

        column, value = self._column(args[0]), args[1]
        if operator in COMPARISONS:
            params.append(value)
            return COMPARISONS[operator](this=column, expression=exp.Placeholder())
        if operator == "contains":
            params.append(f"%{value}%")
            return exp.Like(this=column, expression=exp.Placeholder())
        if operator in ("in", "out") and isinstance(value, list | tuple):
            params.extend(value)
            member = exp.In(this=column, expressions=[exp.Placeholder() for _ in value])
            return member if operator == "in" else exp.Not(this=member)
        raise InvalidArgumentError(f"Unsupported RQL operator '{operator}'")


def convert_rql_to_sql(
    table_name: str, rql_query: str, columns: Iterable[str], dialect: str = "duckdb"
) -> tuple[str, list[Any]]:
    """Convenience function to convert RQL to SQL."""
    return RQLToSQLConverter(columns, dialect=dialect).convert_to_sql(table_name, rql_query)
