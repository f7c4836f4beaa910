"""Sample-average estimation of shortfall risk and certainty equivalents.

Given an i.i.d. sample z_1..z_m of the position X, the shortfall-risk
estimate is the minimal root of the nonincreasing sample residual

    g(t) = (1/m) * sum_i l(-z_i - t) - lam .

The solver first finds a sign-changing bracket by geometric expansion from
the unit interval adjacent to 0, doubling the endpoint on the unresolved
side only (so at most one side ever expands), then bisects until the bracket
is no wider than 2*delta and returns the midpoint.  Certainty-equivalent
estimation reuses the same machinery on g(t) = mean(u'(-z - t)) - 1 with an
extra residual test |g(t)| <= epsilon in the bisection loop, then plugs the
root into t + mean(u(-z - t)).

Exact zeros of g are sent to the upper endpoint during bisection; combined
with the left-derivative convention for utilities this makes the bisection
limit the *minimal* root when g has a flat stretch at zero (step/hinge
functions), matching the min in the risk definition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .risk_functions import (
    CVaRHingeUtility,
    HeavisideLoss,
    LossSpec,
    UtilitySpec,
    deriv_flagged,
    eval_flagged,
)

__all__ = [
    "BisectionConfig",
    "RiskEstimate",
    "EstimationError",
    "BracketNotFound",
    "MaxIterationsExceeded",
    "as_batch",
    "saa_g",
    "oce_g",
    "bracket_root",
    "ubsr_sb",
    "oce_sb",
    "oce_saa",
    "oce_objective",
    "var_estimate",
    "cvar_estimate",
    "default_config",
    "iteration_budget",
    "sample_window",
]


class EstimationError(RuntimeError):
    """Base class for estimator failures."""


class BracketNotFound(EstimationError):
    """The residual never changed sign within the doubling budget."""


class MaxIterationsExceeded(EstimationError):
    """The bisection loop hit its iteration cap before the width target."""


@dataclass(frozen=True)
class BisectionConfig:
    """Accuracy and budget knobs for the search-and-bisect solvers.

    ``delta`` is half the final bracket width (the root is within delta of
    the returned midpoint).  ``epsilon`` is the residual tolerance used only
    by the certainty-equivalent solver; ``None`` means the solver default
    of 1.  The caps exist to turn infeasible problems into diagnosable
    errors instead of unbounded loops.
    """

    delta: float
    epsilon: Optional[float] = None
    max_bracket_doublings: int = 128
    max_bisections: int = 200

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_bracket_doublings < 1 or self.max_bisections < 1:
            raise ValueError("iteration caps must be at least 1")


def default_config(m: int, epsilon: float = 1.0) -> BisectionConfig:
    """The conventional schedule: delta = 1/sqrt(m), epsilon = 1."""
    if m < 1:
        raise ValueError(f"batch size must be >= 1, got {m}")
    return BisectionConfig(delta=1.0 / math.sqrt(m), epsilon=epsilon)


@dataclass(frozen=True)
class RiskEstimate:
    """Solver output with full diagnostics.

    ``value`` is the risk number (equal to ``root`` for shortfall risk; the
    plugged-in certainty equivalent for OCE).  ``bracket`` is the final
    bisection bracket containing the root; ``search_bracket`` the bracket at
    the end of the expansion phase (the quantity the iteration budget is
    stated against).  ``converged`` is False when the residual target was
    unattainable or the deciding residual evaluation saturated; the
    midpoint-within-delta guarantee still holds in the unattainable case,
    and ``flags`` says which condition fired.
    """

    value: float
    root: float
    bracket: Tuple[float, float]
    search_bracket: Tuple[float, float]
    doublings: int
    bisections: int
    residual: float
    converged: bool
    delta: float
    epsilon: Optional[float] = None
    saturated: bool = False
    flags: Tuple[str, ...] = ()

    @property
    def iterations(self) -> Tuple[int, int]:
        return (self.doublings, self.bisections)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "root": self.root,
            "bracket": {"low": self.bracket[0], "high": self.bracket[1]},
            "search_bracket": {
                "low": self.search_bracket[0],
                "high": self.search_bracket[1],
            },
            "iterations": {"doublings": self.doublings, "bisections": self.bisections},
            "residual": self.residual,
            "converged": self.converged,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "saturated": self.saturated,
            "flags": list(self.flags),
        }


def as_batch(samples) -> np.ndarray:
    """Validate and return a 1-D float sample array (m >= 1, all finite)."""
    z = np.asarray(samples, dtype=float)
    if z.ndim != 1:
        raise ValueError(f"sample batch must be 1-D, got shape {z.shape}")
    if z.size < 1:
        raise ValueError("sample batch must contain at least one sample")
    if not np.all(np.isfinite(z)):
        raise ValueError("sample batch contains non-finite values")
    return z


def saa_g(loss: LossSpec, batch, t: float) -> float:
    """Sample residual (1/m) sum l(-z_i - t) - lam at shift t."""
    val, _ = _loss_residual(loss, as_batch(batch), float(t))
    return val


def oce_g(utility: UtilitySpec, batch, t: float) -> float:
    """Sample residual (1/m) sum u'(-z_i - t) - 1 at shift t."""
    val, _ = _utility_residual(utility, as_batch(batch), float(t))
    return val


def _loss_residual(loss: LossSpec, z: np.ndarray, t: float) -> Tuple[float, bool]:
    vals, sat = eval_flagged(loss, -z - t)
    return float(np.mean(vals) - loss.lam), sat


def _utility_residual(utility: UtilitySpec, z: np.ndarray, t: float) -> Tuple[float, bool]:
    vals, sat = deriv_flagged(utility, -z - t)
    return float(np.mean(vals) - 1.0), sat


def _expand_bracket(
    g: Callable[[float], Tuple[float, bool]],
    max_doublings: int,
    describe: Callable[[], str],
):
    """Find low < high with g(low) >= 0 >= g(high) by geometric expansion.

    Starts from (0, 1) when g(0) > 0 and from (-1, 0) otherwise, then
    doubles only the endpoint whose sign is unresolved; the opposite count
    is always zero.  Returns (low, high, g_low, g_high, doublings, saturated).
    """
    g0, sat = g(0.0)
    doublings = 0
    if g0 > 0.0:
        low, high = 0.0, 1.0
        g_low = g0
        g_high, s = g(high)
        sat = sat or s
        while g_high > 0.0:
            if doublings >= max_doublings:
                raise BracketNotFound(
                    f"residual still positive at t={high:g} after "
                    f"{max_doublings} doublings; {describe()}"
                )
            high *= 2.0
            doublings += 1
            g_high, s = g(high)
            sat = sat or s
    else:
        low, high = -1.0, 0.0
        g_high = g0
        g_low, s = g(low)
        sat = sat or s
        while g_low < 0.0:
            if doublings >= max_doublings:
                raise BracketNotFound(
                    f"residual still negative at t={low:g} after "
                    f"{max_doublings} doublings; {describe()}"
                )
            low *= 2.0
            doublings += 1
            g_low, s = g(low)
            sat = sat or s
    return low, high, g_low, g_high, doublings, sat


def bracket_root(loss: LossSpec, batch, config: BisectionConfig):
    """Expansion phase only: a bracket (low, high) with g(low) >= 0 >= g(high),
    plus the doubling count."""
    z = as_batch(batch)
    g = lambda t: _loss_residual(loss, z, t)
    low, high, _, _, doublings, _ = _expand_bracket(
        g, config.max_bracket_doublings, lambda: _range_note(loss, z)
    )
    return (low, high), doublings


def _range_note(loss: LossSpec, z: np.ndarray) -> str:
    # Observed residual-mean range over a wide shift span, for error messages.
    lo_t = float(-np.max(z) - 1e6)
    hi_t = float(-np.min(z) + 1e6)
    hi_mean = float(np.mean(eval_flagged(loss, -z - lo_t)[0]))
    lo_mean = float(np.mean(eval_flagged(loss, -z - hi_t)[0]))
    return (
        f"lam={loss.lam:g} appears to lie outside the observed mean-loss range "
        f"[{lo_mean:g}, {hi_mean:g}] for this batch"
    )


def ubsr_sb(loss: LossSpec, batch, config: BisectionConfig) -> RiskEstimate:
    """Shortfall-risk estimate: search for a bracket, bisect to width 2*delta.

    The returned root is the midpoint of the final bracket, hence within
    delta of the minimal root of the sample residual.
    """
    z = as_batch(batch)
    g = lambda t: _loss_residual(loss, z, t)
    low, high, _, _, doublings, sat_any = _expand_bracket(
        g, config.max_bracket_doublings, lambda: _range_note(loss, z)
    )
    search = (low, high)

    width = high - low
    mid = 0.5 * (low + high)
    bisections = 0
    while width > 2.0 * config.delta:
        if bisections >= config.max_bisections:
            raise MaxIterationsExceeded(
                f"bracket width {width:g} still above 2*delta={2 * config.delta:g} "
                f"after {bisections} bisections"
            )
        g_mid, s = g(mid)
        sat_any = sat_any or s
        if g_mid > 0.0:
            low = mid
        else:
            high = mid
        width = high - low
        mid = 0.5 * (low + high)
        bisections += 1

    residual, res_sat = g(mid)
    flags = ()
    converged = True
    if res_sat:
        flags = ("saturated_residual",)
        converged = False
    return RiskEstimate(
        value=mid,
        root=mid,
        bracket=(low, high),
        search_bracket=search,
        doublings=doublings,
        bisections=bisections,
        residual=residual,
        converged=converged,
        delta=config.delta,
        epsilon=None,
        saturated=sat_any or res_sat,
        flags=flags,
    )


def oce_sb(utility: UtilitySpec, batch, config: BisectionConfig) -> RiskEstimate:
    """Optimal-shift estimate for the certainty equivalent.

    Bisects g(t) = mean(u'(-z - t)) - 1 until the bracket is narrower than
    2*delta *and* the midpoint residual is within epsilon.  For kinked u'
    the residual target can be unattainable: the solver then stops at the
    bisection cap with converged=False and the ``residual_unattainable``
    flag, still returning a root within delta of the minimal one.
    """
    z = as_batch(batch)
    epsilon = 1.0 if config.epsilon is None else config.epsilon
    g = lambda t: _utility_residual(utility, z, t)
    low, high, _, _, doublings, sat_any = _expand_bracket(
        g, config.max_bracket_doublings, lambda: _oce_range_note(utility, z)
    )
    search = (low, high)

    width = high - low
    mid = 0.5 * (low + high)
    residual, res_sat = g(mid)
    sat_any = sat_any or res_sat
    bisections = 0
    flags: Tuple[str, ...] = ()
    converged = True
    while width > 2.0 * config.delta or abs(residual) > epsilon or res_sat:
        if bisections >= config.max_bisections:
            if width <= 2.0 * config.delta:
                # delta guarantee holds; the residual target is out of reach
                # (discontinuous u' jumping across the tolerance band).
                flags = ("residual_unattainable",)
                converged = False
                break
            raise MaxIterationsExceeded(
                f"bracket width {width:g} still above 2*delta={2 * config.delta:g} "
                f"after {bisections} bisections"
            )
        if residual > 0.0:
            low = mid
        else:
            high = mid
        width = high - low
        mid = 0.5 * (low + high)
        residual, res_sat = g(mid)
        sat_any = sat_any or res_sat
        bisections += 1

    if res_sat:
        flags = flags + ("saturated_residual",)
        converged = False
    return RiskEstimate(
        value=mid,
        root=mid,
        bracket=(low, high),
        search_bracket=search,
        doublings=doublings,
        bisections=bisections,
        residual=residual,
        converged=converged,
        delta=config.delta,
        epsilon=epsilon,
        saturated=sat_any,
        flags=flags,
    )


def _oce_range_note(utility: UtilitySpec, z: np.ndarray) -> str:
    lo_t = float(-np.max(z) - 1e6)
    hi_t = float(-np.min(z) + 1e6)
    hi_mean = float(np.mean(deriv_flagged(utility, -z - lo_t)[0]))
    lo_mean = float(np.mean(deriv_flagged(utility, -z - hi_t)[0]))
    return (
        f"threshold 1 appears to lie outside the observed mean-marginal range "
        f"[{lo_mean:g}, {hi_mean:g}] for this batch"
    )


def oce_objective(utility: UtilitySpec, batch, t: float) -> float:
    """The certainty-equivalent objective t + (1/m) sum u(-z_i - t)."""
    z = as_batch(batch)
    vals, _ = eval_flagged(utility, -z - float(t))
    return float(t + np.mean(vals))


def oce_saa(utility: UtilitySpec, batch, config: BisectionConfig) -> RiskEstimate:
    """Certainty-equivalent estimate: optimal shift via :func:`oce_sb`, then
    plug the root into the objective."""
    z = as_batch(batch)
    shift = oce_sb(utility, z, config)
    vals, sat = eval_flagged(utility, -z - shift.root)
    value = float(shift.root + np.mean(vals))
    flags = shift.flags
    converged = shift.converged
    if sat and "saturated_residual" not in flags:
        flags = flags + ("saturated_value",)
        converged = False
    return RiskEstimate(
        value=value,
        root=shift.root,
        bracket=shift.bracket,
        search_bracket=shift.search_bracket,
        doublings=shift.doublings,
        bisections=shift.bisections,
        residual=shift.residual,
        converged=converged,
        delta=shift.delta,
        epsilon=shift.epsilon,
        saturated=shift.saturated or sat,
        flags=flags,
    )


def var_estimate(alpha: float, batch, config: BisectionConfig) -> RiskEstimate:
    """Value at risk at level alpha via the step loss at threshold alpha."""
    return ubsr_sb(HeavisideLoss(lam=alpha), batch, config)


def cvar_estimate(alpha: float, batch, config: BisectionConfig) -> RiskEstimate:
    """Conditional value at risk at level alpha via the hinge utility."""
    return oce_saa(CVaRHingeUtility(alpha=alpha), batch, config)


def iteration_budget(estimate: RiskEstimate) -> float:
    """Iteration allowance 2*(1 + log2(max(|high|, |low|)/delta)) + 4, stated
    against the post-expansion search bracket; doublings + bisections of every
    solver run must stay within it."""
    lo, hi = estimate.search_bracket
    extent = max(abs(lo), abs(hi))
    return 2.0 * (1.0 + math.log2(extent / estimate.delta)) + 4.0


def sample_window(batch, bracket: Tuple[float, float], pad: float = 10.0) -> Tuple[float, float]:
    """Window of loss arguments -z - t visited while t runs over ``bracket``,
    padded outward; the window regularity reports are stated on."""
    z = as_batch(batch)
    low, high = bracket
    return (float(-np.max(z) - high - pad), float(-np.min(z) - low + pad))
