"""Composite estimators combining probability and nonprobability estimates.

Works on the two-source sampling model

    (y1, y2) ~ ((mu, mu + eps), diag(v1, v2)),

where y1 is the probability-sample estimate, y2 the nonprobability (IPW)
estimate carrying measurement-error bias eps, and the sources are
independent. Two families:

* ``ev_composite``  - the existing precision-vs-bias tradeoff
      ((eps^2 + v2) y1 + v1 y2) / (eps^2 + v1 + v2),
  which stays biased by eps*v1/(eps^2 + v1 + v2).
* ``comb_composite`` - the proposed unbiased combination
      w*y1 + (1-w)*(y2 - eps)  with  w = v2/(v1 + v2),
  whose MSE v1*v2/(v1+v2) is strictly below the EV MSE whenever eps != 0.

The model-based variants reuse the same arithmetic with the model-assisted
IPW estimate as y2 and, for the EV form, the data-driven bias guess y2 - y1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .samples import EstimateTable, MeanEstimate, require_same_grid


@dataclass(frozen=True)
class CompositeInputs:
    """The (y1, y2, v1, v2, eps) tuple feeding either composite."""

    y1: float
    y2: float
    v1: float
    v2: float
    eps: float = 0.0

    def __post_init__(self):
        for name in ("y1", "y2", "v1", "v2", "eps"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.v1 <= 0.0 or self.v2 <= 0.0:
            raise ValueError(f"variances must be > 0, got v1={self.v1}, v2={self.v2}")


@dataclass(frozen=True)
class CompositeResult:
    """A composite value with its closed-form bias, variance, and MSE.

    ``weight_w`` is the weight placed on the probability-sample estimate.
    The theoretical fields come from the closed forms so downstream reports
    never recompute them inconsistently.
    """

    value: float
    weight_w: float
    theoretical_bias: float
    theoretical_variance: float
    theoretical_mse: float
    source: str


def mse_comb(v1: float, v2: float) -> float:
    """MSE of the unbiased composite: v1*v2/(v1+v2)."""
    if v1 <= 0.0 or v2 <= 0.0:
        raise ValueError("variances must be > 0")
    return v1 * v2 / (v1 + v2)


def mse_ev(v1: float, v2: float, eps: float) -> float:
    """MSE of the EV composite: v1*(eps^2+v2)/(eps^2+v1+v2)."""
    if v1 <= 0.0 or v2 <= 0.0:
        raise ValueError("variances must be > 0")
    return v1 * (eps**2 + v2) / (eps**2 + v1 + v2)


def ev_composite(inputs: CompositeInputs, *, source: str = "ev") -> CompositeResult:
    """Biased minimum-MSE combination of y1 and the uncorrected y2."""
    y1, y2, v1, v2, eps = inputs.y1, inputs.y2, inputs.v1, inputs.v2, inputs.eps
    denom = eps**2 + v1 + v2
    value = ((eps**2 + v2) * y1 + v1 * y2) / denom
    bias = eps * v1 / denom
    variance = v1 * ((eps**2 + v2) ** 2 + v1 * v2) / denom**2
    return CompositeResult(
        value=value,
        weight_w=(eps**2 + v2) / denom,
        theoretical_bias=bias,
        theoretical_variance=variance,
        theoretical_mse=mse_ev(v1, v2, eps),
        source=source,
    )


def comb_composite(inputs: CompositeInputs, *, source: str = "comb") -> CompositeResult:
    """Unbiased precision-weighted combination of y1 and the bias-corrected y2."""
    y1, y2, v1, v2, eps = inputs.y1, inputs.y2, inputs.v1, inputs.v2, inputs.eps
    if eps != 0.0 and abs(eps - (y2 - y1)) <= 1e-12 * max(1.0, abs(eps)):
        # with eps taken as the observed gap the combination collapses to y1,
        # discarding the nonprobability source entirely
        warnings.warn(
            "bias equals y2 - y1, so the composite degenerates to the "
            "probability-sample estimate",
            RuntimeWarning,
            stacklevel=2,
        )
    w = v2 / (v1 + v2)
    value = w * y1 + (1.0 - w) * (y2 - eps)
    return CompositeResult(
        value=value,
        weight_w=w,
        theoretical_bias=0.0,
        theoretical_variance=mse_comb(v1, v2),
        theoretical_mse=mse_comb(v1, v2),
        source=source,
    )


def m_comb_composite(ps_est: MeanEstimate, m_clw_est: MeanEstimate) -> CompositeResult:
    """Unbiased composite for the unknown-bias pathway.

    Combines the design-weighted estimate with the model-assisted IPW
    estimate; identical mechanics to ``comb_composite`` with eps = 0.
    """
    if ps_est.source not in ("ps", "cal"):
        raise ValueError(f"first argument must be a ps/cal estimate, got {ps_est.source!r}")
    if m_clw_est.source != "m_clw":
        raise ValueError(f"second argument must be an m_clw estimate, got {m_clw_est.source!r}")
    if ps_est.variance is None or m_clw_est.variance is None:
        raise ValueError("both estimates need variances to be combined")
    inputs = CompositeInputs(
        y1=ps_est.value, y2=m_clw_est.value,
        v1=ps_est.variance, v2=m_clw_est.variance, eps=0.0,
    )
    return comb_composite(inputs, source="m_comb")


def m_ev_composite(y1: float, y2: float, v1: float, v2: float) -> CompositeResult:
    """EV composite with the bias estimated as the gap between the two sources.

    Equivalent to ``ev_composite`` with eps set to y2 - y1 (only eps^2 enters
    the value, so the sign convention does not change it).
    """
    inputs = CompositeInputs(y1=y1, y2=y2, v1=v1, v2=v2, eps=y2 - y1)
    return ev_composite(inputs, source="m_ev")


def compose_tables(
    ps_table: EstimateTable,
    nps_table: EstimateTable,
    *,
    method: str = "comb",
    bias: dict | None = None,
) -> EstimateTable:
    """Apply a composite cell-by-cell over two aligned estimate tables.

    ``bias`` maps (question, subgroup) -> eps for the known-bias methods and
    defaults to zero everywhere. Methods: comb, ev, m_comb, m_ev.
    """
    require_same_grid(ps_table, nps_table, "composite inputs")
    entries = {}
    for key, ps_est in ps_table.entries.items():
        nps_est = nps_table.entries[key]
        if ps_est.variance is None or nps_est.variance is None:
            raise ValueError(f"cell {key} is missing a variance; cannot compose")
        eps = 0.0 if bias is None else float(bias.get(key, 0.0))
        if method == "comb":
            result = comb_composite(CompositeInputs(
                ps_est.value, nps_est.value, ps_est.variance, nps_est.variance, eps))
        elif method == "ev":
            result = ev_composite(CompositeInputs(
                ps_est.value, nps_est.value, ps_est.variance, nps_est.variance, eps))
        elif method == "m_comb":
            result = m_comb_composite(ps_est, nps_est)
        elif method == "m_ev":
            result = m_ev_composite(
                ps_est.value, nps_est.value, ps_est.variance, nps_est.variance)
        else:
            raise ValueError(f"unknown composite method {method!r}")
        entries[key] = MeanEstimate(
            result.value,
            result.theoretical_mse,
            result.source,
            out_of_range=not 0.0 <= result.value <= 1.0,
        )
    return EstimateTable(entries)
