"""Scenario models: synthetic markets, samplers, closed forms, returns I/O.

Samplers draw with an externally supplied numpy Generator so that callers
control the stream.  The Gaussian vector sampler consumes exactly d standard
normals per draw (one row of a standard-normal matrix pushed through the
Cholesky factor), which makes sample streams independent of the batching
schedule: drawing m then m' scenarios visits the same underlying variates as
drawing m + m' at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

__all__ = [
    "GaussianVectorSampler",
    "EmpiricalBootstrapSampler",
    "PointMassSampler",
    "synthetic_market",
    "ScalarDist",
    "GaussianDist",
    "UniformDist",
    "ExponentialDist",
    "PointMassDist",
    "parse_dist",
    "analytic_var",
    "analytic_cvar",
    "analytic_entropic",
    "entropic_objective",
    "entropic_gradient",
    "independent_streams",
    "ReturnsData",
    "read_returns",
    "write_returns",
]


def independent_streams(seed: int, n: int) -> List[np.random.Generator]:
    """n independent, reproducible generators for parallel repetitions."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# vector scenario samplers


@dataclass
class GaussianVectorSampler:
    """Multivariate normal scenario source with cached Cholesky factor."""

    mu: np.ndarray
    sigma: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        d = self.mu.shape[0]
        if self.mu.ndim != 1 or self.sigma.shape != (d, d):
            raise ValueError(
                f"need mu of shape (d,) and sigma of shape (d, d), got "
                f"{self.mu.shape} and {self.sigma.shape}"
            )
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-12):
            raise ValueError("covariance matrix is not symmetric")
        try:
            self._chol = np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance matrix is not positive definite") from exc

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        normals = rng.standard_normal((m, self.dim))
        return normals @ self._chol.T + self.mu


@dataclass
class PointMassSampler:
    """Degenerate scenario source: every draw is the same vector."""

    point: np.ndarray

    def __post_init__(self):
        self.point = np.atleast_1d(np.asarray(self.point, dtype=float))

    @property
    def dim(self) -> int:
        return self.point.shape[0]

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return np.tile(self.point, (m, 1))


@dataclass
class EmpiricalBootstrapSampler:
    """Uniform row resampling of a returns panel plus independent Gaussian
    noise with per-asset variance noise_scale * var_i, so that
    Var(draw_i) = (1 + noise_scale) * var_i with var_i the variance of the
    empirical distribution of column i."""

    rows: np.ndarray
    noise_scale: float = 0.1
    _noise_std: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ValueError(
                f"need a non-empty (T, d) panel, got shape {self.rows.shape}"
            )
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("returns panel contains non-finite values")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be >= 0, got {self.noise_scale}")
        self._noise_std = np.sqrt(self.noise_scale * self.rows.var(axis=0, ddof=0))

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        idx = rng.integers(0, self.rows.shape[0], size=m)
        noise = rng.standard_normal((m, self.dim)) * self._noise_std
        return self.rows[idx] + noise


def synthetic_market(d: int, structure_seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic synthetic market moments.

    mu_i = 0.02 * (i + 1) for i = 0..d-1, and sigma = A A^T / d + 0.01 I
    with A a (d, d) standard-normal matrix drawn from a generator seeded
    with ``structure_seed``.  Same (d, structure_seed) -> same market.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    mu = 0.02 * np.arange(1, d + 1, dtype=float)
    a = np.random.default_rng(structure_seed).standard_normal((d, d))
    sigma = a @ a.T / d + 0.01 * np.eye(d)
    return mu, sigma


# ---------------------------------------------------------------------------
# scalar sample distributions for estimation experiments


@dataclass(frozen=True)
class GaussianDist:
    mean: float
    var: float

    def __post_init__(self):
        # var = 0 is the degenerate point-mass limit and stays legal
        if not self.var >= 0:
            raise ValueError(f"variance must be nonnegative, got {self.var}")

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return self.mean + math.sqrt(self.var) * rng.standard_normal(m)


@dataclass(frozen=True)
class UniformDist:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got ({self.lo}, {self.hi})")

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=m)


@dataclass(frozen=True)
class ExponentialDist:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.exponential(1.0 / self.rate, size=m)


@dataclass(frozen=True)
class PointMassDist:
    c: float

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return np.full(m, self.c, dtype=float)


ScalarDist = Union[GaussianDist, UniformDist, ExponentialDist, PointMassDist]


def parse_dist(text: str) -> ScalarDist:
    """Parse 'name:params' distribution strings used on the command line.

    Formats: gaussian:MEAN,VAR | uniform:LO,HI | exponential:RATE |
    pointmass:C.
    """
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    try:
        params = [float(p) for p in rest.split(",")] if rest else []
        if name == "gaussian":
            return GaussianDist(mean=params[0], var=params[1])
        if name == "uniform":
            return UniformDist(lo=params[0], hi=params[1])
        if name == "exponential":
            return ExponentialDist(rate=params[0])
        if name == "pointmass":
            return PointMassDist(c=params[0])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"cannot parse distribution spec {text!r}: {exc}") from None
    raise ValueError(
        f"unknown distribution {name!r}; expected gaussian:MEAN,VAR, "
        f"uniform:LO,HI, exponential:RATE, or pointmass:C"
    )


# ---------------------------------------------------------------------------
# closed-form risk values (used as experiment truths where available)


def analytic_var(dist: ScalarDist, alpha: float) -> Optional[float]:
    """min{t : P(X < -t) <= alpha}, i.e. the negated alpha-quantile of X."""
    if isinstance(dist, GaussianDist):
        return -(dist.mean + math.sqrt(dist.var) * float(norm.ppf(alpha)))
    if isinstance(dist, UniformDist):
        return -(dist.lo + alpha * (dist.hi - dist.lo))
    if isinstance(dist, ExponentialDist):
        return math.log(1.0 - alpha) / dist.rate
    if isinstance(dist, PointMassDist):
        return -dist.c
    return None


def analytic_cvar(dist: ScalarDist, alpha: float) -> Optional[float]:
    """-E[X | X <= q_X(1 - alpha)] (average loss on the worst 1-alpha tail)."""
    if isinstance(dist, GaussianDist):
        z = float(norm.ppf(1.0 - alpha))
        return -dist.mean + math.sqrt(dist.var) * float(norm.pdf(z)) / (1.0 - alpha)
    if isinstance(dist, UniformDist):
        return -(dist.lo + 0.5 * (1.0 - alpha) * (dist.hi - dist.lo))
    if isinstance(dist, ExponentialDist):
        a = alpha
        return -(a * math.log(a) + 1.0 - a) / (dist.rate * (1.0 - a))
    if isinstance(dist, PointMassDist):
        return -dist.c
    return None


def analytic_entropic(dist: ScalarDist, beta: float) -> Optional[float]:
    """(1/beta) log E[exp(-beta X)] where the moment exists in closed form."""
    if isinstance(dist, GaussianDist):
        return -dist.mean + 0.5 * beta * dist.var
    if isinstance(dist, UniformDist):
        lo, hi = dist.lo, dist.hi
        mgf = (math.exp(-beta * lo) - math.exp(-beta * hi)) / (beta * (hi - lo))
        return math.log(mgf) / beta
    if isinstance(dist, ExponentialDist):
        return math.log(dist.rate / (dist.rate + beta)) / beta
    if isinstance(dist, PointMassDist):
        return -dist.c
    return None


def entropic_objective(theta: np.ndarray, mu: np.ndarray, sigma: np.ndarray, beta: float) -> float:
    """Entropic risk of the linear-Gaussian portfolio: -theta.mu + (beta/2) theta.Sigma.theta."""
    theta = np.asarray(theta, dtype=float)
    return float(-theta @ mu + 0.5 * beta * theta @ sigma @ theta)


def entropic_gradient(theta: np.ndarray, mu: np.ndarray, sigma: np.ndarray, beta: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return -np.asarray(mu, dtype=float) + beta * np.asarray(sigma, dtype=float) @ theta


# ---------------------------------------------------------------------------
# returns CSV ingestion


@dataclass
class ReturnsData:
    dates: List[str]
    tickers: List[str]
    values: np.ndarray  # (T, d), simple returns as decimals
    dropped_rows: int = 0


def read_returns(path, prices: bool = False) -> ReturnsData:
    """Read a returns panel CSV with header ``date,TICKER1,...,TICKERd``.

    Rows containing blank cells are dropped (count reported on the result).
    With ``prices=True`` the columns are price levels and are converted to
    simple returns p_t / p_{t-1} - 1, consuming the first row.
    """
    frame = pd.read_csv(path)
    if frame.shape[1] < 2:
        raise ValueError("returns CSV needs a date column plus at least one ticker")
    if frame.columns[0] != "date":
        raise ValueError(
            f"first column must be named 'date', got {frame.columns[0]!r}"
        )
    tickers = [str(c) for c in frame.columns[1:]]
    numeric = frame[frame.columns[1:]].apply(pd.to_numeric, errors="coerce")
    keep = numeric.notna().all(axis=1) & frame["date"].notna()
    dropped = int((~keep).sum())
    dates = [str(v) for v in frame.loc[keep, "date"]]
    values = numeric.loc[keep].to_numpy(dtype=float)
    if values.shape[0] < (2 if prices else 1):
        raise ValueError("not enough complete rows in the returns CSV")
    if prices:
        if np.any(values == 0.0):
            raise ValueError("price rows contain zeros; cannot form returns")
        values = values[1:] / values[:-1] - 1.0
        dates = dates[1:]
    return ReturnsData(dates=dates, tickers=tickers, values=values, dropped_rows=dropped)


def write_returns(path, data: ReturnsData) -> None:
    frame = pd.DataFrame(data.values, columns=data.tickers)
    frame.insert(0, "date", data.dates)
    frame.to_csv(path, index=False)
