"""Statistical aggregation of true-vs-random subcluster measurements.

PUBLIC API:
- centered_percentile(record) -> float
- fisher_combine(percentiles) -> float
- bates_aggregate(p_values, n=5) -> float
- benjamini_hochberg(p_values, alpha=0.05) -> BHResult
- effect_measure(records) -> (measure, standard error)
- build_report(records, network, ...) -> StatsReport
"""

import logging
import math
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from pydantic import BaseModel, Field
from statsmodels.stats.multitest import multipletests

from .cluster import METHODS
from .errors import InvalidArgumentError
from .linalg import bates_cdf, chi2_sf
from .neurons import Subcluster

logger = logging.getLogger(__name__)


class MetricKind(StrEnum):
    ACC_DROP = "acc_drop"
    CLASS_RANGE = "class_range"
    VIS_SCORE = "vis_score"
    SOFTMAX_ENTROPY = "softmax_entropy"


METRICS = tuple(m.value for m in MetricKind)
LESION_METRICS = (MetricKind.ACC_DROP.value, MetricKind.CLASS_RANGE.value)
VIS_METRICS = (MetricKind.VIS_SCORE.value, MetricKind.SOFTMAX_ENTROPY.value)
HIGH_IS_MODULAR = frozenset({MetricKind.ACC_DROP, MetricKind.CLASS_RANGE, MetricKind.VIS_SCORE})


def direction(metric: str) -> str:
    return "high" if MetricKind(metric) in HIGH_IS_MODULAR else "low"


def family(metric: str) -> str:
    return "lesion" if metric in LESION_METRICS else "visualization"


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """One metric for one true subcluster plus its random comparators."""

    network: int  # replicate index
    method: str
    metric: str
    subcluster: Subcluster
    true_value: float
    random_values: np.ndarray
    k: int = 16

    def __post_init__(self) -> None:
        values = np.asarray(self.random_values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise InvalidArgumentError("a measurement needs at least one random comparison value")
        MetricKind(self.metric)
        object.__setattr__(self, "random_values", values)

    @property
    def direction(self) -> str:
        return direction(self.metric)


# =============================================================================
# PERCENTILES AND COMBINATION
# =============================================================================


def centered_percentile(record: MeasurementRecord) -> float:
    """(rank + 0.5) / (count + 1) with midrank ties, so low always means modular."""
    true_value, randoms = record.true_value, record.random_values
    if record.direction == "high":
        true_value, randoms = -true_value, -randoms
    rank = np.count_nonzero(randoms < true_value) + 0.5 * np.count_nonzero(randoms == true_value)
    return (rank + 0.5) / (randoms.size + 1)


def attainable_percentiles(random_count: int) -> np.ndarray:
    return (np.arange(2 * random_count + 1) / 2 + 0.5) / (random_count + 1)


def fisher_combine(percentiles: Sequence[float]) -> float:
    """chi2_sf(-2 * sum(log p), 2n)."""
    ps = np.asarray(percentiles, dtype=np.float64)
    if ps.size == 0:
        raise InvalidArgumentError("need at least one p value")
    if np.any(ps <= 0.0) or np.any(ps >= 1.0):
        raise InvalidArgumentError("percentiles must lie strictly inside (0, 1)")
    statistic = -2.0 * math.fsum(np.log(ps))
    return chi2_sf(max(statistic, 0.0), 2 * ps.size)


def bates_aggregate(p_values: Sequence[float], n: int = 5) -> float:
    """Bates(n) CDF at the mean of n replicate p values."""
    ps = np.asarray(p_values, dtype=np.float64)
    if ps.size != n:
        raise InvalidArgumentError(f"expected {n} replicate p values, got {ps.size}")
    if np.any(ps < 0.0) or np.any(ps > 1.0):
        raise InvalidArgumentError("p values must lie in [0, 1]")
    return bates_cdf(float(np.clip(ps.mean(), 0.0, 1.0)), n)


@dataclass(frozen=True)
class BHResult:
    significant: np.ndarray  # bool per input p value
    critical: float | None


def benjamini_hochberg(p_values: Sequence[float], alpha: float = 0.05) -> BHResult:
    """Step-up FDR control; critical is the largest rejected p value, None if nothing passes."""
    ps = np.asarray(p_values, dtype=np.float64)
    if ps.size == 0:
        raise InvalidArgumentError("need at least one p value")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    reject = multipletests(ps, alpha=alpha, method="fdr_bh")[0]
    if not reject.any():
        return BHResult(np.zeros(ps.size, dtype=bool), None)
    critical = float(ps[reject].max())
    return BHResult(ps <= critical, critical)


def effect_measure(records: Sequence[MeasurementRecord]) -> tuple[float, float]:
    """Mean of 2x/(x + mu) clipped to [0, 2], with its standard error."""
    if not records:
        raise InvalidArgumentError("need at least one record")
    ratios = []
    for record in records:
        x = record.true_value
        mu = float(record.random_values.mean())
        ratio = 1.0 if x + mu == 0 else 2.0 * x / (x + mu)
        ratios.append(min(max(ratio, 0.0), 2.0))
    values = np.array(ratios)
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return float(values.mean()), se


# =============================================================================
# REPORTS
# =============================================================================


class ReportEntry(BaseModel):
    network: str
    method: str
    metric: str
    k: int
    direction: str
    family: str
    subclusters: int
    replicates: int = 1
    replicate_p_values: list[float]
    p_value: float = Field(ge=0.0, le=1.0)
    aggregation: str  # "bates" across replicates, or "fisher" for a single network
    bh_significant: bool = False
    bh_critical: float | None = None
    effect: float = Field(ge=0.0, le=2.0)
    effect_se: float = Field(ge=0.0)
    effect_significant: bool = False
    percentile_counts: list[int]


class StatsReport(BaseModel):
    config_hash: str = ""
    seed: int = 0
    alpha: float = 0.05
    bh_scope: str = "table"
    header: dict[str, str | int | float] = Field(default_factory=dict)
    entries: list[ReportEntry] = Field(default_factory=list)

    def entry(self, method: str, metric: str) -> ReportEntry | None:
        return next((e for e in self.entries if e.method == method and e.metric == metric), None)


def _effect_significant(metric: str, effect: float, se: float) -> bool:
    if direction(metric) == "high":
        return effect - 2.0 * se > 1.0
    return effect + 2.0 * se < 1.0


def _group_entry(
    network: str, method: str, metric: str, records: list[MeasurementRecord], expected_replicates: int = 0
) -> ReportEntry:
    by_replicate: dict[int, list[float]] = defaultdict(list)
    for record in records:
        by_replicate[record.network].append(centered_percentile(record))
    replicate_ps = [fisher_combine(by_replicate[r]) for r in sorted(by_replicate)]
    if len(replicate_ps) < expected_replicates:
        logger.warning(
            f"{network} {method} {metric}: only {len(replicate_ps)} of {expected_replicates} replicates have measurements"
        )

    if len(replicate_ps) > 1:
        p_value, aggregation = bates_aggregate(replicate_ps, len(replicate_ps)), "bates"
    else:
        p_value, aggregation = replicate_ps[0], "fisher"

    random_count = records[0].random_values.size
    grid = attainable_percentiles(random_count)
    percentiles = np.array([centered_percentile(r) for r in records])
    counts = [int(np.count_nonzero(np.isclose(percentiles, g))) for g in grid]

    effect, se = effect_measure(records)
    return ReportEntry(
        network=network,
        method=method,
        metric=metric,
        k=records[0].k,
        direction=direction(metric),
        family=family(metric),
        subclusters=len(records),
        replicates=len(replicate_ps),
        replicate_p_values=replicate_ps,
        p_value=p_value,
        aggregation=aggregation,
        effect=effect,
        effect_se=se,
        effect_significant=_effect_significant(metric, effect, se),
        percentile_counts=counts,
    )


def apply_bh(entries: list[ReportEntry], alpha: float, scope: str = "table") -> None:
    """Mark BH significance in place, per results table (lesion / visualization) or pooled."""
    if scope not in ("table", "all"):
        raise InvalidArgumentError(f"unknown BH scope '{scope}'")
    families: dict[str, list[ReportEntry]] = defaultdict(list)
    for entry in entries:
        families[entry.family if scope == "table" else "all"].append(entry)
    for members in families.values():
        result = benjamini_hochberg([e.p_value for e in members], alpha)
        for entry, flag in zip(members, result.significant, strict=True):
            entry.bh_significant = bool(flag)
            entry.bh_critical = result.critical


def build_report(
    records: Sequence[MeasurementRecord],
    network: str,
    alpha: float = 0.05,
    bh_scope: str = "table",
    config_hash: str = "",
    seed: int = 0,
    header: dict[str, str | int | float] | None = None,
    replicates: int | None = None,
) -> StatsReport:
    """One entry per (method, metric) with measurements, in canonical method/metric order.

    replicates is the number of trained networks; groups missing some of them are aggregated
    over the ones present and logged.
    """
    groups: dict[tuple[str, str], list[MeasurementRecord]] = defaultdict(list)
    for record in records:
        groups[(record.method, record.metric)].append(record)

    expected_replicates = replicates or len({record.network for record in records})
    entries = []
    for method in METHODS:
        for metric in METRICS:
            group = groups.get((method, metric))
            if not group:
                continue
            entries.append(_group_entry(network, method, metric, group, expected_replicates))
            logger.info(f"{network} {method} {metric}: p={entries[-1].p_value:.3g} effect={entries[-1].effect:.3f}")

    if entries:
        apply_bh(entries, alpha, bh_scope)
    else:
        logger.warning("no measurements to report")
    return StatsReport(
        config_hash=config_hash,
        seed=seed,
        alpha=alpha,
        bh_scope=bh_scope,
        header=header or {},
        entries=entries,
    )


def report_rows(report: StatsReport) -> list[dict]:
    """Flat table rows mirroring the report columns, one per entry."""
    return [
        {
            "network": e.network,
            "method": e.method,
            "metric": e.metric,
            "k": e.k,
            "direction": e.direction,
            "subclusters": e.subclusters,
            "p_value": e.p_value,
            "aggregation": e.aggregation,
            "bh_significant": e.bh_significant,
            "bh_critical": e.bh_critical,
            "effect": e.effect,
            "effect_se": e.effect_se,
            "effect_significant": e.effect_significant,
        }
        for e in report.entries
    ]
