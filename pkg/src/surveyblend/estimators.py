"""Point and variance estimation of finite-population means.

Four single-source estimators: the design-weighted mean from a probability
sample, the inverse-propensity (Hajek ratio) mean from a nonprobability
sample, its measurement-error bias-corrected version, and the model-assisted
variant that substitutes predicted response probabilities for observed
responses. A seeded bootstrap supplies variances where no closed form is
carried.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .propensity import PropensityFit, fit_propensity
from .samples import (
    OVERALL,
    EstimateTable,
    MeanEstimate,
    NonprobabilitySample,
    ProbabilitySample,
    SubgroupKey,
)


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed to produce an estimate."""


@dataclass(frozen=True)
class ResponseColumn:
    """Responses to one question over a sample's units; NaN marks nonresponse."""

    question: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @classmethod
    def from_sample(cls, sample, question: str) -> "ResponseColumn":
        return cls(question, sample.y[:, sample.question_index(question)])


@dataclass(frozen=True)
class PredictedProbabilities:
    """Model-predicted P(yes) per nonprobability unit for one question."""

    question: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.size and (np.any(np.isnan(values)) or values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("predicted probabilities must be complete and within [0, 1]")


def _observed(values: np.ndarray, mask: np.ndarray | None, question: str) -> np.ndarray:
    keep = ~np.isnan(values)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    if not keep.any():
        raise ValueError(f"no non-missing responses for question {question!r}")
    return keep


def design_weighted_mean(
    y: ResponseColumn,
    sample: ProbabilitySample,
    *,
    mask: np.ndarray | None = None,
    source: str = "ps",
) -> MeanEstimate:
    """Weighted ratio mean sum(d*y)/sum(d) over non-missing units.

    The variance is the with-replacement approximation for a weighted ratio
    mean, sum(d_i^2 (y_i - mu)^2) / (sum d_i)^2 * n/(n-1); strata and PSU
    information is not modelled. ``mask`` restricts to a subgroup domain.
    Serves both base design weights and externally calibrated weights,
    depending on the weight column the sample carries.
    """
    if len(y.values) != sample.n:
        raise ValueError("response column length does not match the sample")
    if not np.all(sample.weights > 0.0):
        raise ValueError("design weights must be positive")
    keep = _observed(y.values, mask, y.question)
    d = sample.weights[keep]
    yy = y.values[keep]
    total = d.sum()
    mu = float(d @ yy / total)
    n = len(yy)
    if n > 1:
        variance = float((d**2 @ (yy - mu) ** 2) / total**2 * n / (n - 1))
    else:
        variance = None
    return MeanEstimate(mu, variance, source)


def ipw_mean(
    y: ResponseColumn,
    fit: PropensityFit,
    *,
    mask: np.ndarray | None = None,
    source: str = "clw",
    variance: float | None = None,
) -> MeanEstimate:
    """Hajek inverse-propensity mean over the nonprobability units.

    The population-size normalizer is recomputed over the same non-missing
    unit set as the numerator, so item nonresponse keeps the ratio form
    internally consistent. Variance is attached by the caller (bootstrap or
    an injected oracle); left None otherwise.
    """
    if len(y.values) != fit.n_units:
        raise ValueError("response column length does not match the propensity fit")
    keep = _observed(y.values, mask, y.question)
    w = 1.0 / fit.pi[keep]
    value = float(w @ y.values[keep] / w.sum())
    return MeanEstimate(value, variance, source)


def bias_corrected_ipw(clw: MeanEstimate, eps: float) -> MeanEstimate:
    """Subtract a known measurement-error bias from an IPW estimate.

    The bias is treated as known, so the variance is carried over unchanged.
    Values pushed outside [0, 1] are flagged, never clipped.
    """
    if clw.source not in ("clw", "bc_clw"):
        raise ValueError(f"expected an IPW estimate (clw/bc_clw), got {clw.source!r}")
    value = clw.value - float(eps)
    return MeanEstimate(
        value,
        clw.variance,
        "bc_clw",
        out_of_range=not 0.0 <= value <= 1.0,
    )


def model_assisted_ipw(
    p: PredictedProbabilities,
    fit: PropensityFit,
    *,
    mask: np.ndarray | None = None,
    variance: float | None = None,
) -> MeanEstimate:
    """IPW mean with predicted response probabilities in place of responses."""
    if len(p.values) != fit.n_units:
        raise ValueError(
            f"dimension mismatch: {len(p.values)} predictions vs {fit.n_units} units"
        )
    keep = np.ones(fit.n_units, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not keep.any():
        raise ValueError("empty domain for model-assisted estimate")
    w = 1.0 / fit.pi[keep]
    value = float(w @ p.values[keep] / w.sum())
    return MeanEstimate(value, variance, "m_clw")


def bootstrap_variance(
    estimator,
    sample,
    *,
    n_replicates: int = 500,
    seed: int = 0,
) -> float:
    """Empirical variance of ``estimator`` over with-replacement resamples.

    ``estimator`` receives a resampled sample of the same type and returns a
    float. Probability-sample units keep their weights when resampled; for
    nonprobability samples the closure is expected to refit the propensity
    model against the fixed ps reference it captured. Replicate RNG streams
    are derived from (seed, replicate index), so the result is deterministic
    and independent of any execution order.
    """
    if n_replicates < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    n = sample.n
    values = []
    failures = 0
    last_error: Exception | None = None
    for b in range(n_replicates):
        rng = np.random.default_rng(np.random.SeedSequence((seed, b)))
        idx = rng.integers(0, n, size=n)
        try:
            values.append(float(estimator(sample.take(idx))))
        except Exception as err:  # noqa: BLE001 - failures are counted, then surfaced
            failures += 1
            last_error = err
    if failures > 0.1 * n_replicates:
        raise BootstrapError(
            f"{failures}/{n_replicates} bootstrap replicates failed; last error: {last_error}"
        )
    return float(np.var(values, ddof=1))


def bootstrap_ipw_table_variances(
    nps: NonprobabilitySample,
    ps: ProbabilitySample,
    *,
    factors: tuple[str, ...] = (),
    n_replicates: int = 500,
    seed: int = 0,
    fit_options: dict | None = None,
) -> dict[tuple[str, SubgroupKey], float]:
    """Bootstrap variances for a whole IPW estimate table at once.

    Resamples the nonprobability units with replacement, refits the
    propensity model against the fixed ps reference per replicate, and
    returns the per-cell empirical variances. Uses the same replicate RNG
    streams as ``bootstrap_variance``, so a scalar closure over one cell
    reproduces the matching entry exactly.
    """
    if n_replicates < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    fit_options = fit_options or {}
    n = nps.n
    per_cell: dict[tuple[str, SubgroupKey], list[float]] = {}
    failures = 0
    last_error: Exception | None = None
    for b in range(n_replicates):
        rng = np.random.default_rng(np.random.SeedSequence((seed, b)))
        idx = rng.integers(0, n, size=n)
        try:
            resampled = nps.take(idx)
            fit = fit_propensity(resampled.X, ps.X, ps.weights, **fit_options)
            table = ipw_estimate_table(resampled, fit, factors=factors)
        except Exception as err:  # noqa: BLE001 - counted, then surfaced
            failures += 1
            last_error = err
            continue
        for key, est in table.entries.items():
            per_cell.setdefault(key, []).append(est.value)
    if failures > 0.1 * n_replicates:
        raise BootstrapError(
            f"{failures}/{n_replicates} bootstrap replicates failed; last error: {last_error}"
        )
    return {key: float(np.var(vals, ddof=1)) for key, vals in per_cell.items()}


def _subgroup_cells(sample, factors) -> list[tuple[SubgroupKey, np.ndarray | None]]:
    cells: list[tuple[SubgroupKey, np.ndarray | None]] = [(OVERALL, None)]
    for factor in factors or ():
        labels = sample.groups[factor]
        if sample.schema is not None and factor in sample.schema.variables:
            levels = sample.schema.levels(factor)
        else:
            levels = tuple(sorted(set(labels)))
        for level in levels:
            cells.append((SubgroupKey(factor, level), labels == level))
    return cells


def ps_estimate_table(
    sample: ProbabilitySample,
    *,
    factors: tuple[str, ...] = (),
    source: str = "ps",
    survey: str | None = None,
    variances: dict[tuple[str, SubgroupKey], float] | None = None,
) -> EstimateTable:
    """Design-weighted estimates for every question at overall + subgroup cells.

    Variances default to the closed form; ``variances`` overrides them per
    cell (e.g. a simulation oracle, which also covers cells whose responses
    are constant in one draw and would carry a degenerate zero).
    """
    entries = {}
    for question in sample.questions:
        y = ResponseColumn.from_sample(sample, question)
        for cell, mask in _subgroup_cells(sample, factors):
            estimate = design_weighted_mean(y, sample, mask=mask, source=source)
            if variances is not None and (question, cell) in variances:
                estimate = estimate.with_variance(variances[(question, cell)])
            entries[(question, cell)] = estimate
    return EstimateTable(entries, survey=survey)


def ipw_estimate_table(
    sample: NonprobabilitySample,
    fit: PropensityFit,
    *,
    factors: tuple[str, ...] = (),
    survey: str | None = None,
    variances: dict[tuple[str, SubgroupKey], float] | None = None,
) -> EstimateTable:
    """IPW estimates for every question at overall + subgroup cells.

    ``variances`` optionally injects per-cell variances (bootstrap output or
    a simulation oracle).
    """
    entries = {}
    for question in sample.questions:
        y = ResponseColumn.from_sample(sample, question)
        for cell, mask in _subgroup_cells(sample, factors):
            v = None if variances is None else variances.get((question, cell))
            entries[(question, cell)] = ipw_mean(y, fit, mask=mask, variance=v)
    return EstimateTable(entries, survey=survey)


def model_assisted_table(
    predictions: dict[str, PredictedProbabilities],
    sample: NonprobabilitySample,
    fit: PropensityFit,
    *,
    factors: tuple[str, ...] = (),
    survey: str | None = None,
    variances: dict[tuple[str, SubgroupKey], float] | None = None,
) -> EstimateTable:
    """Model-assisted IPW estimates over the same grid as ``ipw_estimate_table``."""
    entries = {}
    for question in sample.questions:
        p = predictions[question]
        for cell, mask in _subgroup_cells(sample, factors):
            v = None if variances is None else variances.get((question, cell))
            entries[(question, cell)] = model_assisted_ipw(p, fit, mask=mask, variance=v)
    return EstimateTable(entries, survey=survey)
