"""Participation-propensity model for nonprobability samples.

Fits a logistic propensity model by maximizing a pseudo-log-likelihood that
combines nonprobability covariate totals with design-weighted probability
sample terms,

    l(theta) = sum_{i in A} x_i' theta - sum_{i in B} d_i log(1 + exp(x_i' theta)),

and returns fitted propensities for inverse-propensity weighting. The score
and Hessian are

    U(theta) = sum_A x_i - sum_B d_i pi_i x_i,
    H(theta) = -sum_B d_i pi_i (1 - pi_i) x_i x_i',

so l is concave and Newton-Raphson with step halving is globally reliable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50
DEFAULT_PI_CLIP = 1e-6
_MAX_HALVINGS = 20
_DIVERGENCE_BOUND = 40.0  # |theta_j| beyond this saturates the logistic numerically


class FitError(RuntimeError):
    """Base class for propensity fitting failures."""


class ConvergenceError(FitError):
    """Score norm still above tolerance after the iteration budget."""


class SeparationError(FitError):
    """The score equation has no root (complete or quasi-separation)."""


class SingularHessianError(FitError):
    """The weighted information matrix is numerically singular."""


@dataclass(frozen=True)
class PropensityFit:
    """Fitted propensity model for one nonprobability sample.

    ``pi`` holds the fitted propensity of each nonprobability unit, clipped
    into [pi_clip, 1 - pi_clip] before inversion; ``n_hat`` is the implied
    population size, sum of 1/pi.
    """

    theta: np.ndarray
    pi: np.ndarray
    n_hat: float
    iterations: int
    score_norm: float
    converged: bool
    weight_label: str = "design"

    @property
    def n_units(self) -> int:
        return len(self.pi)

    @classmethod
    def from_true_propensities(cls, pi: np.ndarray, theta: np.ndarray | None = None,
                               pi_clip: float = DEFAULT_PI_CLIP) -> "PropensityFit":
        """Wrap known propensities (simulation oracle) in the fit interface."""
        pi = np.clip(np.asarray(pi, dtype=float), pi_clip, 1.0 - pi_clip)
        theta = np.zeros(0) if theta is None else np.asarray(theta, dtype=float)
        return cls(theta, pi, float((1.0 / pi).sum()), 0, 0.0, True, "oracle")


def logistic_propensity(x: np.ndarray, theta: np.ndarray) -> float | np.ndarray:
    """exp(x'theta) / (1 + exp(x'theta)), overflow-safe.

    Accepts a single covariate vector or an (n, p) matrix of them.
    """
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x.shape[-1] != theta.shape[0]:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, theta has {theta.shape[0]}")
    eta = x @ theta
    out = expit(eta)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _check_inputs(nps_X, ps_X, ps_weights):
    nps_X = np.asarray(nps_X, dtype=float)
    ps_X = np.asarray(ps_X, dtype=float)
    d = np.asarray(ps_weights, dtype=float)
    if nps_X.ndim != 2 or ps_X.ndim != 2:
        raise ValueError("covariate inputs must be 2-d design matrices")
    if nps_X.shape[1] != ps_X.shape[1]:
        raise ValueError(
            f"covariate dimension mismatch: nps {nps_X.shape[1]} vs ps {ps_X.shape[1]}"
        )
    if d.shape != (ps_X.shape[0],):
        raise ValueError("ps_weights length must match ps rows")
    if not np.all(d > 0.0):
        raise ValueError("all probability-sample weights must be > 0")
    return nps_X, ps_X, d


def pseudo_log_likelihood(theta, nps_X, ps_X, ps_weights) -> float:
    """Design-weighted pseudo-log-likelihood at theta."""
    nps_X, ps_X, d = _check_inputs(nps_X, ps_X, ps_weights)
    theta = np.asarray(theta, dtype=float)
    # log(1 + exp(eta)) via logaddexp keeps large |eta| exact
    return float(nps_X.sum(axis=0) @ theta - d @ np.logaddexp(0.0, ps_X @ theta))


def score(theta, nps_X, ps_X, ps_weights) -> np.ndarray:
    """Gradient of the pseudo-log-likelihood."""
    nps_X, ps_X, d = _check_inputs(nps_X, ps_X, ps_weights)
    pi = expit(ps_X @ np.asarray(theta, dtype=float))
    return nps_X.sum(axis=0) - ps_X.T @ (d * pi)


def hessian(theta, ps_X, ps_weights) -> np.ndarray:
    """Hessian of the pseudo-log-likelihood (negative semi-definite)."""
    ps_X = np.asarray(ps_X, dtype=float)
    d = np.asarray(ps_weights, dtype=float)
    pi = expit(ps_X @ np.asarray(theta, dtype=float))
    w = d * pi * (1.0 - pi)
    return -(ps_X * w[:, None]).T @ ps_X


def _separation_precheck(nps_X, ps_X):
    # A dummy carried by nps units but absent from the whole ps sample makes
    # the corresponding score component strictly positive for every theta.
    nps_mass = np.abs(nps_X).sum(axis=0)
    ps_mass = np.abs(ps_X).sum(axis=0)
    bad = np.flatnonzero((nps_mass > 0.0) & (ps_mass == 0.0))
    if bad.size:
        raise SeparationError(
            f"covariate column {int(bad[0])} has nonprobability mass but no "
            "probability-sample support; the score cannot vanish"
        )


def fit_propensity(
    nps_X,
    ps_X,
    ps_weights,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    pi_clip: float = DEFAULT_PI_CLIP,
    weight_label: str = "design",
) -> PropensityFit:
    """Maximize the pseudo-log-likelihood by safeguarded Newton-Raphson.

    Starts at theta = 0, halves the Newton step until the objective does not
    decrease (at most 20 halvings), and stops when the score infinity-norm
    drops to ``tol``. ``weight_label`` records which ps weight column the
    caller designated (base design weights vs externally calibrated ones).
    """
    nps_X, ps_X, d = _check_inputs(nps_X, ps_X, ps_weights)
    n_a, p = nps_X.shape
    if n_a < 1:
        raise ValueError("nonprobability sample is empty")
    pooled = np.vstack([nps_X, ps_X])
    if np.linalg.matrix_rank(pooled) < p:
        raise ValueError("pooled design matrix is column-rank deficient")
    _separation_precheck(nps_X, ps_X)

    theta = np.zeros(p)
    ll = pseudo_log_likelihood(theta, nps_X, ps_X, d)
    u = score(theta, nps_X, ps_X, d)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        h = hessian(theta, ps_X, d)
        try:
            step = np.linalg.solve(-h, u)
        except np.linalg.LinAlgError as err:
            raise SingularHessianError(f"singular Hessian at iteration {iterations}: {err}") from err
        if not np.all(np.isfinite(step)):
            raise SingularHessianError(f"non-finite Newton step at iteration {iterations}")

        scale = 1.0
        for _ in range(_MAX_HALVINGS):
            candidate = theta + scale * step
            ll_new = pseudo_log_likelihood(candidate, nps_X, ps_X, d)
            if ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        theta = theta + scale * step
        ll = pseudo_log_likelihood(theta, nps_X, ps_X, d)
        u = score(theta, nps_X, ps_X, d)
        if np.max(np.abs(theta)) > _DIVERGENCE_BOUND:
            raise SeparationError(
                "coefficients diverging (|theta| > "
                f"{_DIVERGENCE_BOUND:g}); the score cannot vanish"
            )
        if np.max(np.abs(u)) <= tol:
            break
    score_norm = float(np.max(np.abs(u)))
    if score_norm > tol:
        raise ConvergenceError(
            f"score norm {score_norm:.3e} > tol {tol:g} after {iterations} iterations"
        )

    pi = np.clip(expit(nps_X @ theta), pi_clip, 1.0 - pi_clip)
    return PropensityFit(
        theta=theta,
        pi=pi,
        n_hat=float((1.0 / pi).sum()),
        iterations=iterations,
        score_norm=score_norm,
        converged=True,
        weight_label=weight_label,
    )
