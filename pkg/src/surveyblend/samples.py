"""Sample containers, categorical covariate encoding, and shared result types.

Everything here is immutable after construction and safe to share across
threads. Responses are stored as proportions in [0, 1] per binary question,
with NaN marking item nonresponse; a unit missing one question still
contributes to every other question.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SOURCE_TAGS = ("ps", "clw", "bc_clw", "cal", "ev", "comb", "m_clw", "m_comb", "m_ev")


class UnknownLevelError(ValueError):
    """A categorical value outside the declared levels of its variable."""


class CovariateSchema:
    """Reference-level dummy coding for ordered categorical variables.

    The first declared level of each variable is the reference and maps to
    all-zero dummies; every other level gets one 0/1 column. Encoded vectors
    carry a leading intercept of 1.0, so the encoded dimension is
    ``1 + sum(len(levels) - 1)``.
    """

    def __init__(self, variables: Mapping[str, Sequence[str]]):
        if not variables:
            raise ValueError("schema needs at least one variable")
        self.variables: dict[str, tuple[str, ...]] = {}
        for name, levels in variables.items():
            levels = tuple(str(lv) for lv in levels)
            if len(levels) < 2:
                raise ValueError(f"variable {name!r} needs >= 2 levels")
            if len(set(levels)) != len(levels):
                raise ValueError(f"variable {name!r} has duplicate levels")
            self.variables[str(name)] = levels
        # one (variable, level) column per non-reference level
        self.columns: tuple[tuple[str, str], ...] = tuple(
            (name, lv) for name, levels in self.variables.items() for lv in levels[1:]
        )

    @property
    def dim(self) -> int:
        return 1 + len(self.columns)

    def column_names(self) -> tuple[str, ...]:
        return ("intercept",) + tuple(f"{v}:{lv}" for v, lv in self.columns)

    def levels(self, variable: str) -> tuple[str, ...]:
        return self.variables[variable]

    def encode_row(self, row: Mapping[str, str], row_index: int | None = None) -> np.ndarray:
        out = np.zeros(self.dim)
        out[0] = 1.0
        for name, levels in self.variables.items():
            value = str(row[name])
            if value not in levels:
                where = "" if row_index is None else f" at row {row_index}"
                raise UnknownLevelError(
                    f"variable {name!r}: unknown level {value!r}{where}"
                )
            k = levels.index(value)
            if k > 0:
                out[1 + self.columns.index((name, value))] = 1.0
        return out

    def encode(self, rows: Iterable[Mapping[str, str]]) -> np.ndarray:
        encoded = [self.encode_row(row, i) for i, row in enumerate(rows)]
        if not encoded:
            return np.empty((0, self.dim))
        return np.vstack(encoded)

    def decode_row(self, values: Sequence[float]) -> dict[str, str]:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {values.shape}")
        row: dict[str, str] = {}
        for name, levels in self.variables.items():
            row[name] = levels[0]
            for lv in levels[1:]:
                if values[1 + self.columns.index((name, lv))] == 1.0:
                    row[name] = lv
        return row

    def coefficient_vector(self, coefs: Mapping[str, float]) -> np.ndarray:
        """Build a coefficient vector from {"intercept": a, "var:level": b} keys."""
        names = self.column_names()
        theta = np.zeros(self.dim)
        for key, value in coefs.items():
            if key not in names:
                raise KeyError(f"unknown coefficient column {key!r}; known: {names}")
            theta[names.index(key)] = float(value)
        return theta


@dataclass(frozen=True)
class CovariateVector:
    """One encoded unit: leading intercept 1.0 followed by 0/1 dummies."""

    values: tuple[float, ...]
    schema: CovariateSchema

    def violations(self) -> list[str]:
        out = []
        if len(self.values) != self.schema.dim:
            out.append(
                f"length {len(self.values)} != schema dimension {self.schema.dim}"
            )
        if not self.values or self.values[0] != 1.0:
            out.append("first entry is not the 1.0 intercept")
        if any(v not in (0.0, 1.0) for v in self.values[1:]):
            out.append("dummy entries outside {0.0, 1.0}")
        return out


def encode_covariates(
    rows: Sequence[Mapping[str, str]], schema: CovariateSchema
) -> list[CovariateVector]:
    """Encode categorical records, preserving input order.

    The reference level of each variable (the first declared one) maps to
    all-zero dummies. Unknown levels are rejected naming the variable, the
    level, and the row index.
    """
    return [
        CovariateVector(tuple(schema.encode_row(row, i)), schema)
        for i, row in enumerate(rows)
    ]


def _as_groups(groups: Mapping[str, Sequence[str]] | None) -> dict[str, np.ndarray]:
    if not groups:
        return {}
    return {str(k): np.asarray(v, dtype=object) for k, v in groups.items()}


@dataclass(frozen=True)
class ProbabilitySample:
    """Probability sample: responses, covariates, known positive design weights."""

    X: np.ndarray                      # (n, p) design matrix, intercept first
    y: np.ndarray                      # (n, m) responses in {0, 1} or NaN
    weights: np.ndarray                # (n,) design weights d_i > 0
    questions: tuple[str, ...]
    groups: Mapping[str, np.ndarray] = field(default_factory=dict)
    schema: CovariateSchema | None = None

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "groups", _as_groups(self.groups))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def weight_total(self) -> float:
        """Design-weighted population size estimate, sum of d_i."""
        return float(self.weights.sum())

    def question_index(self, question: str) -> int:
        return self.questions.index(question)

    def take(self, indices: np.ndarray) -> "ProbabilitySample":
        """Subsample/resample by unit index; each unit keeps its weight."""
        indices = np.asarray(indices)
        return ProbabilitySample(
            self.X[indices],
            self.y[indices],
            self.weights[indices],
            self.questions,
            {k: v[indices] for k, v in self.groups.items()},
            self.schema,
        )

    def replace_weights(self, weights: np.ndarray) -> "ProbabilitySample":
        return dataclasses.replace(self, weights=np.asarray(weights, dtype=float))


@dataclass(frozen=True)
class NonprobabilitySample:
    """Nonprobability sample: responses and covariates, no weights by definition."""

    X: np.ndarray
    y: np.ndarray
    questions: tuple[str, ...]
    groups: Mapping[str, np.ndarray] = field(default_factory=dict)
    schema: CovariateSchema | None = None

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "groups", _as_groups(self.groups))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def question_index(self, question: str) -> int:
        return self.questions.index(question)

    def take(self, indices: np.ndarray) -> "NonprobabilitySample":
        indices = np.asarray(indices)
        return NonprobabilitySample(
            self.X[indices],
            self.y[indices],
            self.questions,
            {k: v[indices] for k, v in self.groups.items()},
            self.schema,
        )


def _validate_common(sample, report: list[str]) -> None:
    X, y = sample.X, sample.y
    if X.ndim != 2:
        report.append("covariate rows have inconsistent lengths (X is not a 2-d matrix)")
        return
    if y.ndim != 2:
        report.append("response block is not a 2-d matrix")
        return
    n = X.shape[0]
    if y.shape[0] != n:
        report.append(f"response rows ({y.shape[0]}) != covariate rows ({n})")
    if y.shape[1] != len(sample.questions):
        report.append(
            f"response columns ({y.shape[1]}) != question count ({len(sample.questions)})"
        )
    if X.shape[0] and not np.all(X[:, 0] == 1.0):
        bad = int(np.flatnonzero(X[:, 0] != 1.0)[0])
        report.append(f"row {bad}: intercept column is not 1.0")
    body = X[:, 1:]
    if body.size and not np.all((body == 0.0) | (body == 1.0)):
        bad = int(np.flatnonzero(~((body == 0.0) | (body == 1.0)).all(axis=1))[0])
        report.append(f"row {bad}: dummy entries outside {{0.0, 1.0}}")
    finite_y = y[~np.isnan(y)]
    if finite_y.size and not np.all((finite_y == 0.0) | (finite_y == 1.0)):
        report.append("response values outside {0, 1, missing}")
    for name, labels in sample.groups.items():
        if len(labels) != n:
            report.append(f"group labels for {name!r} have length {len(labels)} != {n}")
    if sample.schema is not None and X.ndim == 2 and X.shape[1] != sample.schema.dim:
        report.append(
            f"covariate dimension {X.shape[1]} != schema dimension {sample.schema.dim}"
        )


def validate_sample(sample) -> list[str]:
    """Check container invariants; returns a list of violations (empty iff valid)."""
    report: list[str] = []
    _validate_common(sample, report)
    if isinstance(sample, ProbabilitySample):
        d = sample.weights
        if d.ndim != 1 or len(d) != sample.X.shape[0]:
            report.append(f"weight vector length {d.shape} != unit count {sample.X.shape[0]}")
        else:
            bad = np.flatnonzero(~(d > 0.0) | ~np.isfinite(d))
            for i in bad:
                report.append(f"row {int(i)}: nonpositive or non-finite weight {d[int(i)]}")
            if bad.size == 0 and d.size and not np.isfinite(d.sum()):
                report.append("weight total is not finite")
    return report


@dataclass(frozen=True)
class MeanEstimate:
    """A point estimate of a finite-population mean with its variance.

    ``variance`` is None until a variance has been attached (the inverse
    propensity estimators get theirs from the bootstrap). Bias-corrected
    values may leave [0, 1]; they are flagged, never clipped, because
    clipping would reintroduce bias into the composite step.
    """

    value: float
    variance: float | None
    source: str
    out_of_range: bool = False

    def __post_init__(self):
        if self.source not in SOURCE_TAGS:
            raise ValueError(f"unknown source tag {self.source!r}; expected one of {SOURCE_TAGS}")
        if self.variance is not None:
            if not np.isfinite(self.variance) or self.variance < 0.0:
                raise ValueError(f"variance must be finite and >= 0, got {self.variance}")

    def with_variance(self, variance: float) -> "MeanEstimate":
        return dataclasses.replace(self, variance=float(variance))


@dataclass(frozen=True, order=True)
class SubgroupKey:
    """A cell of the evaluation grid: a factor (age, race, ...) and one level."""

    factor: str
    level: str


OVERALL = SubgroupKey("overall", "all")


def _grid_from_entries(entries) -> tuple[tuple[str, ...], tuple[SubgroupKey, ...]]:
    questions: list[str] = []
    subgroups: list[SubgroupKey] = []
    for q, c in entries:
        if q not in questions:
            questions.append(q)
        if c not in subgroups:
            subgroups.append(c)
    return tuple(questions), tuple(subgroups)


def _check_complete(entries, questions, subgroups, what: str) -> None:
    missing = [
        (q, c) for q in questions for c in subgroups if (q, c) not in entries
    ]
    if missing:
        raise ValueError(f"{what} grid incomplete: missing cell {missing[0]}")
    if len(entries) != len(questions) * len(subgroups):
        extra = set(entries) - {(q, c) for q in questions for c in subgroups}
        raise ValueError(f"{what} has entries outside its grid: {sorted(extra)[:3]}")


@dataclass(frozen=True)
class BenchmarkTable:
    """External truth values per (question, subgroup) cell, complete m x k grid."""

    entries: Mapping[tuple[str, SubgroupKey], float]

    def __post_init__(self):
        entries = {k: float(v) for k, v in self.entries.items()}
        object.__setattr__(self, "entries", entries)
        q, c = _grid_from_entries(entries)
        _check_complete(entries, q, c, "benchmark table")
        object.__setattr__(self, "questions", q)
        object.__setattr__(self, "subgroups", c)
        for (qq, cc), v in entries.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"benchmark value {v} for {(qq, cc)} outside [0, 1]")

    questions: tuple[str, ...] = field(init=False)
    subgroups: tuple[SubgroupKey, ...] = field(init=False)

    @property
    def m(self) -> int:
        return len(self.questions)

    @property
    def k(self) -> int:
        return len(self.subgroups)

    def value(self, question: str, subgroup: SubgroupKey) -> float:
        return self.entries[(question, subgroup)]


@dataclass(frozen=True)
class EstimateTable:
    """Survey estimates per (question, subgroup) cell, same grid as a benchmark."""

    entries: Mapping[tuple[str, SubgroupKey], MeanEstimate]
    survey: str | None = None

    def __post_init__(self):
        entries = dict(self.entries)
        object.__setattr__(self, "entries", entries)
        q, c = _grid_from_entries(entries)
        _check_complete(entries, q, c, "estimate table")
        object.__setattr__(self, "questions", q)
        object.__setattr__(self, "subgroups", c)

    questions: tuple[str, ...] = field(init=False)
    subgroups: tuple[SubgroupKey, ...] = field(init=False)

    def estimate(self, question: str, subgroup: SubgroupKey) -> MeanEstimate:
        return self.entries[(question, subgroup)]

    def value(self, question: str, subgroup: SubgroupKey) -> float:
        return self.entries[(question, subgroup)].value

    def map_values(self, fn) -> "EstimateTable":
        """New table with fn applied per cell: fn(question, subgroup, estimate)."""
        return EstimateTable(
            {(q, c): fn(q, c, e) for (q, c), e in self.entries.items()},
            survey=self.survey,
        )


def same_grid(a, b) -> bool:
    return a.questions == b.questions and set(a.subgroups) == set(b.subgroups)


def require_same_grid(a, b, what: str = "tables") -> None:
    if not same_grid(a, b):
        raise ValueError(
            f"{what} have mismatched grids: "
            f"{(a.questions, a.subgroups)} vs {(b.questions, b.subgroups)}"
        )
