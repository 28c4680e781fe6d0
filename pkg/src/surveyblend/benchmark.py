"""Measurement-error bias estimation and benchmark evaluation.

Bias per (question, subgroup) cell is the average, over every cross pair of
held-out nonprobability and probability surveys, of the gap between the IPW
estimate and the design-weighted estimate. Accuracy against external
benchmark values is summarized by the mean absolute error, a double average
over questions and subgroups reported in percent, plus per-cell absolute
differences ready for plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

from .estimators import bias_corrected_ipw
from .samples import (
    BenchmarkTable,
    EstimateTable,
    SubgroupKey,
    require_same_grid,
)


@dataclass(frozen=True)
class BiasMatrix:
    """Estimated measurement-error bias per cell, with the survey pairs averaged."""

    entries: Mapping[tuple[str, SubgroupKey], float]
    provenance: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", {k: float(v) for k, v in self.entries.items()})
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if not self.provenance:
            raise ValueError("bias matrix needs a non-empty provenance")

    def value(self, question: str, subgroup: SubgroupKey) -> float:
        return self.entries[(question, subgroup)]


@dataclass(frozen=True)
class MaeReport:
    """Mean absolute error against a benchmark, in percent at every level."""

    overall: float
    per_question: Mapping[str, float]
    per_subgroup: Mapping[SubgroupKey, float]
    per_cell: Mapping[tuple[str, SubgroupKey], float]


@dataclass(frozen=True)
class AbsDiffTable:
    """Per-cell |estimate - benchmark| (proportion scale) with the max marked."""

    records: tuple[tuple[str, SubgroupKey, float], ...]
    max_abs_diff: float
    max_cell: tuple[str, SubgroupKey]


def estimate_bias(
    nps_estimates: Sequence[EstimateTable],
    ps_estimates: Sequence[EstimateTable],
) -> BiasMatrix:
    """Average IPW-minus-design gaps over every (nps, ps) cross pair.

    With two tables per side this is exactly the four-term average; any
    number of held-out surveys per side is accepted.
    """
    if not nps_estimates or not ps_estimates:
        raise ValueError("need at least one estimate table per side")
    first = nps_estimates[0]
    for table in list(nps_estimates[1:]) + list(ps_estimates):
        require_same_grid(first, table, "bias inputs")
    entries: dict[tuple[str, SubgroupKey], float] = {}
    n_pairs = len(nps_estimates) * len(ps_estimates)
    for q in first.questions:
        for c in first.subgroups:
            total = 0.0
            for nps in nps_estimates:
                for ps in ps_estimates:
                    total += nps.value(q, c) - ps.value(q, c)
            entries[(q, c)] = total / n_pairs
    provenance = tuple(
        (a.survey or f"nps{i}", b.survey or f"ps{j}")
        for i, a in enumerate(nps_estimates, 1)
        for j, b in enumerate(ps_estimates, 1)
    )
    return BiasMatrix(entries, provenance)


def apply_bias_correction(table: EstimateTable, bias: BiasMatrix) -> EstimateTable:
    """Subtract the per-cell bias from an IPW estimate table."""
    missing = [k for k in table.entries if k not in bias.entries]
    if missing:
        raise ValueError(f"bias matrix missing cell {missing[0]}")
    return table.map_values(lambda q, c, e: bias_corrected_ipw(e, bias.value(q, c)))


def mae(estimates: EstimateTable, benchmark: BenchmarkTable) -> MaeReport:
    """Mean absolute error vs the benchmark, as a percent.

    Overall value is the question-then-subgroup double average; the
    per-question and per-subgroup breakdowns average over the other axis
    only, matching subgroup-level reporting.
    """
    require_same_grid(estimates, benchmark, "MAE inputs")
    questions, subgroups = benchmark.questions, benchmark.subgroups
    per_cell = {
        (q, c): 100.0 * abs(estimates.value(q, c) - benchmark.value(q, c))
        for q in questions
        for c in subgroups
    }
    per_question = {
        q: sum(per_cell[(q, c)] for c in subgroups) / len(subgroups) for q in questions
    }
    per_subgroup = {
        c: sum(per_cell[(q, c)] for q in questions) / len(questions) for c in subgroups
    }
    overall = sum(per_question.values()) / len(questions)
    return MaeReport(overall, per_question, per_subgroup, per_cell)


def abs_diff_table(estimates: EstimateTable, benchmark: BenchmarkTable) -> AbsDiffTable:
    """Per-cell absolute differences from the benchmark with the maximum marked."""
    require_same_grid(estimates, benchmark, "absolute-difference inputs")
    records = tuple(
        (q, c, abs(estimates.value(q, c) - benchmark.value(q, c)))
        for q in benchmark.questions
        for c in benchmark.subgroups
    )
    q_max, c_max, diff_max = max(records, key=lambda r: r[2])
    return AbsDiffTable(records, diff_max, (q_max, c_max))


def plot_records(
    tables: Mapping[str, EstimateTable], benchmark: BenchmarkTable
) -> list[dict]:
    """Tidy (question, factor, level, estimator, abs_diff) rows for plotting."""
    rows = []
    for tag, table in tables.items():
        for q, c, diff in abs_diff_table(table, benchmark).records:
            rows.append(
                {
                    "question_id": q,
                    "factor": c.factor,
                    "level": c.level,
                    "estimator": tag,
                    "abs_diff": diff,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# delimited text formats: comma-separated, UTF-8, header row, "" = missing

def read_benchmark_table(path) -> BenchmarkTable:
    """Read a benchmark file with header question_id, factor, level, value."""
    entries: dict[tuple[str, SubgroupKey], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"question_id", "factor", "level", "value"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(
                f"benchmark file {path} must carry columns {sorted(required)}"
            )
        for row in reader:
            key = (row["question_id"], SubgroupKey(row["factor"], row["level"]))
            entries[key] = float(row["value"])
    return BenchmarkTable(entries)


def write_benchmark_table(table: BenchmarkTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_id", "factor", "level", "value"])
        for q in table.questions:
            for c in table.subgroups:
                writer.writerow([q, c.factor, c.level, repr(table.value(q, c))])


def write_plot_records(rows: Sequence[Mapping], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_id", "factor", "level", "estimator", "abs_diff"])
        for row in rows:
            writer.writerow(
                [row["question_id"], row["factor"], row["level"],
                 row["estimator"], repr(float(row["abs_diff"]))]
            )
