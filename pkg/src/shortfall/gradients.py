"""Multivariate gradient estimators for risk-sensitive objectives.

For a parametrized position F(theta, xi) the shortfall-risk objective
h(theta) = SR(F(theta, .)) has gradient

    grad h(theta) = - E[l'(-F - t*) dF] / E[l'(-F - t*)]

evaluated at the exact risk level t*; the certainty-equivalent objective
has grad = -E[u'(-F - t*) dF].  The estimators below follow the
double-sampling scheme: the shift t is estimated by search-and-bisect on an
*auxiliary* batch, while the weighted sums run over an independent
*primary* batch, which keeps the weights conditionally independent of the
shift error.

Both estimators are exact for a point-mass sampler (weights cancel in the
ratio; the certainty-equivalent weights hit u' = 1 at the exact shift), a
property the tests lean on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .estimation import (
    BisectionConfig,
    EstimationError,
    RiskEstimate,
    oce_sb,
    ubsr_sb,
)
from .risk_functions import LossSpec, UtilitySpec, deriv_flagged

__all__ = [
    "DoubleBatch",
    "GradientEstimate",
    "ZeroDenominator",
    "portfolio_value",
    "portfolio_gradient",
    "ubsr_grad",
    "oce_grad",
]


class ZeroDenominator(EstimationError):
    """The normalizing sum of loss slopes vanished (flat loss region)."""


def portfolio_value(theta: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Linear portfolio F(theta, xi) = xi @ theta for a batch of scenarios."""
    return np.asarray(xi, dtype=float) @ np.asarray(theta, dtype=float)


def portfolio_gradient(theta: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """dF/dtheta for the linear portfolio: just the scenario matrix."""
    return np.asarray(xi, dtype=float)


@dataclass(frozen=True)
class DoubleBatch:
    """Primary/auxiliary scenario batches of equal size.

    ``auxiliary`` feeds the shift search, ``primary`` the gradient sums.
    Rows are scenario draws; shape (m, d) (or (m,) for scalar scenarios).
    """

    primary: np.ndarray
    auxiliary: np.ndarray

    def __post_init__(self):
        prim = np.asarray(self.primary, dtype=float)
        aux = np.asarray(self.auxiliary, dtype=float)
        if prim.shape != aux.shape:
            raise ValueError(
                f"primary and auxiliary batches must match in shape, "
                f"got {prim.shape} vs {aux.shape}"
            )
        if prim.shape[0] < 1:
            raise ValueError("batches must contain at least one scenario")
        if not (np.all(np.isfinite(prim)) and np.all(np.isfinite(aux))):
            raise ValueError("scenario batches contain non-finite values")
        object.__setattr__(self, "primary", prim)
        object.__setattr__(self, "auxiliary", aux)

    @property
    def size(self) -> int:
        return self.primary.shape[0]


@dataclass(frozen=True)
class GradientEstimate:
    vector: np.ndarray
    root: float
    batch_size: int
    denominator: Optional[float]
    root_estimate: RiskEstimate
    saturated: bool = False


def ubsr_grad(
    loss: LossSpec,
    theta: np.ndarray,
    batch: DoubleBatch,
    config: BisectionConfig,
    value_fn: Callable = portfolio_value,
    grad_fn: Callable = portfolio_gradient,
) -> GradientEstimate:
    """Self-normalized shortfall-risk gradient estimate at theta.

    The shift comes from a search-and-bisect run on the auxiliary batch;
    numerator and denominator sums run over the primary batch.  Raises
    :class:`ZeroDenominator` when every primary scenario lands on a flat
    stretch of the loss (slope sum <= 0 cannot be normalized).
    """
    theta = np.asarray(theta, dtype=float)
    root_est = ubsr_sb(loss, value_fn(theta, batch.auxiliary), config)

    args = -value_fn(theta, batch.primary) - root_est.root
    weights, saturated = deriv_flagged(loss, args)
    denominator = float(np.sum(weights))
    if not np.isfinite(denominator):
        raise EstimationError(
            f"slope sum is non-finite (batch size {batch.size}, shift {root_est.root:g})"
        )
    if denominator <= 0.0:
        raise ZeroDenominator(
            f"sum of loss slopes is {denominator:g} on the primary batch "
            f"(size {batch.size}, shift {root_est.root:g}); the self-normalized "
            f"gradient is undefined"
        )
    numerator = weights @ grad_fn(theta, batch.primary)
    vector = -numerator / denominator
    if not np.all(np.isfinite(vector)):
        raise EstimationError("gradient estimate is non-finite")
    return GradientEstimate(
        vector=vector,
        root=root_est.root,
        batch_size=batch.size,
        denominator=denominator,
        root_estimate=root_est,
        saturated=saturated or root_est.saturated,
    )


def oce_grad(
    utility: UtilitySpec,
    theta: np.ndarray,
    batch: DoubleBatch,
    config: BisectionConfig,
    value_fn: Callable = portfolio_value,
    grad_fn: Callable = portfolio_gradient,
) -> GradientEstimate:
    """Certainty-equivalent gradient estimate -(1/m) sum u'(-F - t) dF.

    No normalization, so an all-flat batch legitimately yields the zero
    vector rather than an error.
    """
    theta = np.asarray(theta, dtype=float)
    root_est = oce_sb(utility, value_fn(theta, batch.auxiliary), config)

    args = -value_fn(theta, batch.primary) - root_est.root
    weights, saturated = deriv_flagged(utility, args)
    vector = -(weights @ grad_fn(theta, batch.primary)) / batch.size
    if not np.all(np.isfinite(vector)):
        raise EstimationError("gradient estimate is non-finite")
    return GradientEstimate(
        vector=vector,
        root=root_est.root,
        batch_size=batch.size,
        denominator=None,
        root_estimate=root_est,
        saturated=saturated or root_est.saturated,
    )
