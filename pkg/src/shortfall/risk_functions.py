"""Loss and utility function catalog for shortfall-risk estimation.

A loss function l is convex and nondecreasing; together with a threshold
``lam`` it defines the shortfall risk of a position X as

    SR(X) = min{ t : E[l(-X - t)] <= lam }.

A utility-type function u (convex, nondecreasing, u(0) = 0 in our sign
convention) defines the optimized certainty equivalent

    OCE(X) = inf_t { t + E[u(-X - t)] },

whose optimal shift solves E[u'(-X - t)] = 1, i.e. a shortfall-risk problem
for the loss l = u' at threshold 1.

Derivative conventions at kinks are chosen so that bisection on the sample
counterpart of E[u'(-X - t)] - 1 lands on the *minimal* root:

* losses report the right derivative at a kink,
* utilities report the left derivative of u (so the hinge has u'(0) = 0).

Specs are frozen dataclasses: immutable, hashable, safe to share across
worker processes.  ``to_json``/``from_json`` give a stable wire format used
by the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

__all__ = [
    "EntropicLoss",
    "PiecewiseLinearLoss",
    "PolynomialLoss",
    "HeavisideLoss",
    "CVaRHingeUtility",
    "EntropicUtility",
    "MonotoneMVUtility",
    "ONPVUtility",
    "QuarticUtility",
    "LossSpec",
    "UtilitySpec",
    "RiskFunctionSpec",
    "FunctionRegularity",
    "loss_eval",
    "loss_deriv",
    "utility_eval",
    "utility_deriv",
    "eval_flagged",
    "regularity",
    "expectile_loss",
    "to_json",
    "from_json",
    "loss_from_json",
    "utility_from_json",
]

# exp() overflows doubles near 709.78; clamp a little below and flag it.
_EXP_CLAMP = 700.0


def _arr(x):
    return np.asarray(x, dtype=float)


def _like(x, vals):
    """Return a scalar for scalar input, else the array."""
    if np.ndim(x) == 0:
        return float(vals)
    return vals


def _clamped_exp(exponent):
    exponent = _arr(exponent)
    saturated = bool(np.any(exponent > _EXP_CLAMP))
    return np.exp(np.minimum(exponent, _EXP_CLAMP)), saturated


# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class EntropicLoss:
    """l(x) = exp(beta * x); threshold lam must sit in the range (0, inf)."""

    beta: float
    lam: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.lam > 0:
            raise ValueError(
                f"lam must lie in (0, inf), the range of the entropic loss; got {self.lam}"
            )

    def value_flagged(self, x):
        return _clamped_exp(self.beta * _arr(x))

    def value(self, x):
        vals, _ = self.value_flagged(x)
        return _like(x, vals)

    def deriv(self, x):
        vals, _ = _clamped_exp(self.beta * _arr(x))
        return _like(x, self.beta * vals)


@dataclass(frozen=True)
class PiecewiseLinearLoss:
    """l(x) = c + a * max(x, 0) - b * max(-x, 0), with a >= b >= 0.

    Right derivative at the kink: l'(0) = a.  Strictly increasing iff b > 0.
    The expectile family is the special case a in [1/2, 1), b = 1 - a, c = 0
    at threshold lam = 0 (see :func:`expectile_loss`).
    """

    a: float
    b: float
    c: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if not (self.a >= self.b >= 0.0):
            raise ValueError(
                f"need slopes a >= b >= 0, got a={self.a}, b={self.b}"
            )
        if self.a <= 0:
            raise ValueError("slope a must be positive for a nonconstant loss")

    def value_flagged(self, x):
        x = _arr(x)
        vals = self.c + self.a * np.maximum(x, 0.0) - self.b * np.maximum(-x, 0.0)
        return vals, False

    def value(self, x):
        vals, _ = self.value_flagged(x)
        return _like(x, vals)

    def deriv(self, x):
        x = _arr(x)
        return _like(x, np.where(x >= 0.0, self.a, self.b))


@dataclass(frozen=True)
class PolynomialLoss:
    """l(x) = max(x, 0)**a / a with a > 1; l'(x) = max(x, 0)**(a - 1)."""

    a: float
    lam: float = 1.0

    def __post_init__(self):
        if not self.a > 1:
            raise ValueError(f"polynomial exponent must exceed 1, got {self.a}")

    def value_flagged(self, x):
        xp = np.maximum(_arr(x), 0.0)
        return xp**self.a / self.a, False

    def value(self, x):
        vals, _ = self.value_flagged(x)
        return _like(x, vals)

    def deriv(self, x):
        xp = np.maximum(_arr(x), 0.0)
        return _like(x, xp ** (self.a - 1.0))


@dataclass(frozen=True)
class HeavisideLoss:
    """l(x) = 1{x > 0} (so l(0) = 0); lam = alpha in (0, 1) makes the root a
    value-at-risk.  Not differentiable anywhere useful: ``deriv`` raises.
    """

    lam: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(
                f"lam must lie in (0, 1), the range of the step loss; got {self.lam}"
            )

    def value_flagged(self, x):
        return (_arr(x) > 0.0).astype(float), False

    def value(self, x):
        vals, _ = self.value_flagged(x)
        return _like(x, vals)

    def deriv(self, x):
        raise ValueError("the step loss has no derivative; gradient-based "
                         "routines cannot use HeavisideLoss")


# ---------------------------------------------------------------------------
# utilities


@dataclass(frozen=True)
class CVaRHingeUtility:
    """u(x) = max(x, 0) / (1 - alpha).

    The certainty-equivalent value for this u is the conditional value at
    risk at level alpha (tail mass 1 - alpha).  Left derivative at the kink:
    u'(0) = 0.
    """

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    def value_flagged(self, x):
        return np.maximum(_arr(x), 0.0) / (1.0 - self.alpha), False

    def value(self, x):
        vals, _ = self.value_flagged(x)
        return _like(x, vals)

    def deriv(self, x):
        x = _arr(x)
        return _like(x, np.where(x > 0.0, 1.0 / (1.0 - self.alpha), 0.0))


@dataclass(frozen=True)
class EntropicUtility:
    """u(x) = (exp(beta * x) - 1) / beta; u' is the entropic loss at lam = 1."""

    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    def value_flagged(self, x):
        ex, sat = _clamped_exp(self.beta * _arr(x))
        return (ex - 1.0) / self.beta, sat

    def value(self, x):
        vals, _ = self.value_flagged(x)
        return _like(x, vals)

    def deriv(self, x):
        ex, _ = _clamped_exp(self.beta * _arr(x))
        return _like(x, ex)


@dataclass(frozen=True)
class MonotoneMVUtility:
    """u(x) = (max(1 + x, 0)**a - 1) / a with a > 1 (a = 2 is the monotone
    mean-variance utility); u'(x) = max(1 + x, 0)**(a - 1)."""

    a: float = 2.0

    def __post_init__(self):
        if not self.a > 1:
            raise ValueError(f"exponent must exceed 1, got {self.a}")

    def value_flagged(self, x):
        base = np.maximum(1.0 + _arr(x), 0.0)
        return (base**self.a - 1.0) / self.a, False

    def value(self, x):
        vals, _ = self.value_flagged(x)
        return _like(x, vals)

    def deriv(self, x):
        base = np.maximum(1.0 + _arr(x), 0.0)
        return _like(x, base ** (self.a - 1.0))


@dataclass(frozen=True)
class ONPVUtility:
    """Optimized-net-present-value utility u(x) = a*max(x,0) - b*max(-x,0)
    with 0 < b < 1 < a.  Left derivative at the kink: u'(0) = b."""

    a: float
    b: float

    def __post_init__(self):
        if not (0.0 < self.b < 1.0 < self.a):
            raise ValueError(
                f"need 0 < b < 1 < a, got a={self.a}, b={self.b}"
            )

    def value_flagged(self, x):
        x = _arr(x)
        return self.a * np.maximum(x, 0.0) - self.b * np.maximum(-x, 0.0), False

    def value(self, x):
        vals, _ = self.value_flagged(x)
        return _like(x, vals)

    def deriv(self, x):
        x = _arr(x)
        return _like(x, np.where(x > 0.0, self.a, self.b))


@dataclass(frozen=True)
class QuarticUtility:
    """u(x) = (1 + x)**4 - 1 for x >= -1, and -1 below.

    Continuous, convex, nondecreasing, and C^1 at the joint (u'(-1) = 0).
    """

    def value_flagged(self, x):
        x = _arr(x)
        return np.where(x >= -1.0, (1.0 + x) ** 4 - 1.0, -1.0), False

    def value(self, x):
        vals, _ = self.value_flagged(x)
        return _like(x, vals)

    def deriv(self, x):
        x = _arr(x)
        return _like(x, np.where(x >= -1.0, 4.0 * (1.0 + x) ** 3, 0.0))


LossSpec = Union[EntropicLoss, PiecewiseLinearLoss, PolynomialLoss, HeavisideLoss]
UtilitySpec = Union[
    CVaRHingeUtility, EntropicUtility, MonotoneMVUtility, ONPVUtility, QuarticUtility
]
RiskFunctionSpec = Union[LossSpec, UtilitySpec]

_LOSS_TYPES = (EntropicLoss, PiecewiseLinearLoss, PolynomialLoss, HeavisideLoss)
_UTILITY_TYPES = (
    CVaRHingeUtility,
    EntropicUtility,
    MonotoneMVUtility,
    ONPVUtility,
    QuarticUtility,
)


def expectile_loss(a: float) -> PiecewiseLinearLoss:
    """Piecewise-linear loss whose shortfall root at lam = 0 is the
    a-expectile of the negated position; requires a in [1/2, 1)."""
    if not 0.5 <= a < 1.0:
        raise ValueError(f"expectile level must lie in [1/2, 1), got {a}")
    return PiecewiseLinearLoss(a=a, b=1.0 - a, c=0.0, lam=0.0)


# ---------------------------------------------------------------------------
# family-checked evaluation entry points


def _check_family(spec, types, family):
    if not isinstance(spec, types):
        raise TypeError(f"expected a {family} spec, got {type(spec).__name__}")


def loss_eval(spec: LossSpec, x):
    _check_family(spec, _LOSS_TYPES, "loss")
    return spec.value(x)


def loss_deriv(spec: LossSpec, x):
    """Right derivative at kinks."""
    _check_family(spec, _LOSS_TYPES, "loss")
    return spec.deriv(x)


def utility_eval(spec: UtilitySpec, x):
    _check_family(spec, _UTILITY_TYPES, "utility")
    return spec.value(x)


def utility_deriv(spec: UtilitySpec, x):
    """Left derivative at kinks (so the hinge reports u'(0) = 0)."""
    _check_family(spec, _UTILITY_TYPES, "utility")
    return spec.deriv(x)


def eval_flagged(spec: RiskFunctionSpec, x) -> Tuple[np.ndarray, bool]:
    """Vectorized evaluation plus an exponent-saturation flag.

    Exponentials clamp the exponent at 700 before exponentiation; the flag
    reports whether any input hit the clamp.  Saturated values keep a valid
    sign for bracketing but callers must not declare convergence on them.
    """
    return spec.value_flagged(x)


def deriv_flagged(spec: RiskFunctionSpec, x) -> Tuple[np.ndarray, bool]:
    """Derivative plus saturation flag (only exponentials can saturate)."""
    if isinstance(spec, EntropicLoss):
        ex, sat = _clamped_exp(spec.beta * _arr(x))
        return spec.beta * ex, sat
    if isinstance(spec, EntropicUtility):
        return _clamped_exp(spec.beta * _arr(x))
    return _arr(spec.deriv(_arr(x))), False


# ---------------------------------------------------------------------------
# local regularity reports


@dataclass(frozen=True)
class FunctionRegularity:
    """Local properties of a catalog function on a window [x_lo, x_hi].

    ``b1`` is the infimum of the first derivative on the window, ``lipschitz``
    its supremum, and ``smoothness`` a bound on the derivative's modulus (the
    supremum of the second derivative where one exists); ``None`` marks
    unbounded/undefined.  The two booleans are global properties of the
    variant, not of the window.
    """

    b1: Optional[float]
    smoothness: Optional[float]
    lipschitz: Optional[float]
    strictly_increasing: bool
    continuous_derivative: bool


def regularity(spec: RiskFunctionSpec, window: Tuple[float, float]) -> FunctionRegularity:
    lo, hi = float(window[0]), float(window[1])
    if not lo <= hi:
        raise ValueError(f"window must be ordered, got ({lo}, {hi})")

    if isinstance(spec, EntropicLoss):
        return FunctionRegularity(
            b1=spec.beta * np.exp(min(spec.beta * lo, _EXP_CLAMP)),
            smoothness=spec.beta**2 * np.exp(min(spec.beta * hi, _EXP_CLAMP)),
            lipschitz=spec.beta * np.exp(min(spec.beta * hi, _EXP_CLAMP)),
            strictly_increasing=True,
            continuous_derivative=True,
        )
    if isinstance(spec, PiecewiseLinearLoss):
        linear = spec.a == spec.b
        return FunctionRegularity(
            b1=spec.b if spec.b > 0 else None,
            smoothness=0.0 if linear else None,
            lipschitz=spec.a,
            strictly_increasing=spec.b > 0,
            continuous_derivative=linear,
        )
    if isinstance(spec, PolynomialLoss):
        a = spec.a
        d_lo = max(lo, 0.0) ** (a - 1.0)
        d_hi = max(hi, 0.0) ** (a - 1.0)
        if a >= 2.0:
            smooth = (a - 1.0) * max(hi, 0.0) ** (a - 2.0)
        elif lo > 0.0:
            smooth = (a - 1.0) * lo ** (a - 2.0)
        else:
            smooth = None  # l'' blows up at 0+ for 1 < a < 2
        return FunctionRegularity(
            b1=d_lo if d_lo > 0 else None,
            smoothness=smooth,
            lipschitz=d_hi,
            strictly_increasing=False,
            continuous_derivative=True,
        )
    if isinstance(spec, HeavisideLoss):
        return FunctionRegularity(
            b1=None,
            smoothness=None,
            lipschitz=None,
            strictly_increasing=False,
            continuous_derivative=False,
        )
    if isinstance(spec, CVaRHingeUtility):
        scale = 1.0 / (1.0 - spec.alpha)
        return FunctionRegularity(
            b1=scale if lo > 0 else None,
            smoothness=None,
            lipschitz=scale,
            strictly_increasing=False,
            continuous_derivative=False,
        )
    if isinstance(spec, EntropicUtility):
        return FunctionRegularity(
            b1=np.exp(min(spec.beta * lo, _EXP_CLAMP)),
            smoothness=spec.beta * np.exp(min(spec.beta * hi, _EXP_CLAMP)),
            lipschitz=np.exp(min(spec.beta * hi, _EXP_CLAMP)),
            strictly_increasing=True,
            continuous_derivative=True,
        )
    if isinstance(spec, MonotoneMVUtility):
        a = spec.a
        base_lo = max(1.0 + lo, 0.0)
        base_hi = max(1.0 + hi, 0.0)
        if a >= 2.0:
            smooth = (a - 1.0) * base_hi ** (a - 2.0)
        elif base_lo > 0.0:
            smooth = (a - 1.0) * base_lo ** (a - 2.0)
        else:
            smooth = None
        return FunctionRegularity(
            b1=(base_lo ** (a - 1.0)) if base_lo > 0 else None,
            smoothness=smooth,
            lipschitz=base_hi ** (a - 1.0),
            strictly_increasing=False,
            continuous_derivative=True,
        )
    if isinstance(spec, ONPVUtility):
        return FunctionRegularity(
            b1=spec.b,
            smoothness=None,
            lipschitz=spec.a,
            strictly_increasing=True,
            continuous_derivative=False,
        )
    if isinstance(spec, QuarticUtility):
        base_lo = max(1.0 + lo, 0.0)
        base_hi = max(1.0 + hi, 0.0)
        return FunctionRegularity(
            b1=(4.0 * base_lo**3) if base_lo > 0 else None,
            smoothness=12.0 * base_hi**2,
            lipschitz=4.0 * base_hi**3,
            strictly_increasing=False,
            continuous_derivative=True,
        )
    raise TypeError(f"unknown spec type {type(spec).__name__}")


# ---------------------------------------------------------------------------
# JSON wire format


def to_json(spec: RiskFunctionSpec) -> dict:
    if isinstance(spec, EntropicLoss):
        return {"kind": "entropic", "beta": spec.beta, "lambda": spec.lam}
    if isinstance(spec, PiecewiseLinearLoss):
        return {
            "kind": "piecewise_linear",
            "a": spec.a,
            "b": spec.b,
            "c": spec.c,
            "lambda": spec.lam,
        }
    if isinstance(spec, PolynomialLoss):
        return {"kind": "polynomial", "a": spec.a, "lambda": spec.lam}
    if isinstance(spec, HeavisideLoss):
        return {"kind": "heaviside", "lambda": spec.lam}
    if isinstance(spec, CVaRHingeUtility):
        return {"kind": "cvar_hinge", "alpha": spec.alpha}
    if isinstance(spec, EntropicUtility):
        return {"kind": "entropic_utility", "beta": spec.beta}
    if isinstance(spec, MonotoneMVUtility):
        return {"kind": "monotone_mv", "a": spec.a}
    if isinstance(spec, ONPVUtility):
        return {"kind": "onpv", "a": spec.a, "b": spec.b}
    if isinstance(spec, QuarticUtility):
        return {"kind": "quartic"}
    raise TypeError(f"unknown spec type {type(spec).__name__}")


def from_json(payload: dict) -> RiskFunctionSpec:
    if not isinstance(payload, dict) or "kind" not in payload:
        raise ValueError("risk-function JSON must be an object with a 'kind' field")
    kind = payload["kind"]
    try:
        if kind == "entropic":
            return EntropicLoss(beta=float(payload["beta"]),
                                lam=float(payload.get("lambda", 1.0)))
        if kind == "piecewise_linear":
            return PiecewiseLinearLoss(
                a=float(payload["a"]),
                b=float(payload["b"]),
                c=float(payload.get("c", 0.0)),
                lam=float(payload.get("lambda", 0.0)),
            )
        if kind == "polynomial":
            return PolynomialLoss(a=float(payload["a"]),
                                  lam=float(payload.get("lambda", 1.0)))
        if kind == "heaviside":
            return HeavisideLoss(lam=float(payload["lambda"]))
        if kind == "cvar_hinge":
            return CVaRHingeUtility(alpha=float(payload["alpha"]))
        if kind == "entropic_utility":
            return EntropicUtility(beta=float(payload["beta"]))
        if kind == "monotone_mv":
            return MonotoneMVUtility(a=float(payload["a"]))
        if kind == "onpv":
            return ONPVUtility(a=float(payload["a"]), b=float(payload["b"]))
        if kind == "quartic":
            return QuarticUtility()
    except KeyError as exc:
        raise ValueError(f"risk-function JSON for kind={kind!r} is missing {exc}") from None
    raise ValueError(f"unknown risk-function kind {kind!r}")


def loss_from_json(payload: dict) -> LossSpec:
    spec = from_json(payload)
    if not isinstance(spec, _LOSS_TYPES):
        # bad payload data, not a caller type error
        raise ValueError(f"{payload.get('kind')!r} is not a loss kind")
    return spec


def utility_from_json(payload: dict) -> UtilitySpec:
    spec = from_json(payload)
    if not isinstance(spec, _UTILITY_TYPES):
        raise ValueError(f"{payload.get('kind')!r} is not a utility kind")
    return spec
