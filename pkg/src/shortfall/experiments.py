"""Monte Carlo experiment harnesses and report writers.

Estimation sweeps draw N independent batches per batch size m, estimate the
risk with delta = 1/sqrt(m), and report mean absolute and squared errors
against a truth value (closed form where one exists, otherwise a frozen
large-sample reference run), plus fitted log-log decay slopes.

Repetitions are independently seeded by spawning one child stream per
(batch-size, repetition) index from a root seed, so results are identical
whether cells run sequentially or on a process pool, and in which order.

Every solver run leaves an :class:`AuditRecord` with its iteration counts
and search bracket so the iteration-budget contract can be checked across
whole experiment suites.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import t as student_t

from .estimation import (
    BisectionConfig,
    RiskEstimate,
    cvar_estimate,
    default_config,
    oce_saa,
    ubsr_sb,
    var_estimate,
)
from .optimization import (
    OCEObjective,
    ProjectionSpec,
    SGConfig,
    SGTrace,
    UBSRObjective,
    sg_run,
)
from .risk_functions import (
    CVaRHingeUtility,
    EntropicLoss,
    EntropicUtility,
    HeavisideLoss,
    LossSpec,
    UtilitySpec,
)
from .scenarios import ScalarDist, analytic_cvar, analytic_entropic, analytic_var

__all__ = [
    "SlopeFit",
    "fit_loglog",
    "AuditRecord",
    "SweepRow",
    "SweepResult",
    "estimation_sweep",
    "VarCVaRCell",
    "var_cvar_grid",
    "SGRateResult",
    "sg_error_curve",
    "resolve_truth",
    "reference_truth",
    "write_sweep_outputs",
    "write_var_cvar_outputs",
    "read_report_csv",
]


# ---------------------------------------------------------------------------
# log-log slope fitting


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    stderr: float
    ci_low: float
    ci_high: float

    def to_json(self) -> dict:
        return asdict(self)


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> SlopeFit:
    """Least-squares slope of log y against log x, with R^2 and a 95% CI."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    n = lx.size
    if n < 2:
        raise ValueError("need at least two points for a slope fit")
    mx, my = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - mx) ** 2))
    if sxx == 0:
        raise ValueError("x values are all identical")
    slope = float(np.sum((lx - mx) * (ly - my)) / sxx)
    intercept = my - slope * mx
    resid = ly - (intercept + slope * lx)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ly - my) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    if n > 2:
        stderr = math.sqrt(ss_res / (n - 2) / sxx)
        half = float(student_t.ppf(0.975, n - 2)) * stderr
    else:
        stderr = float("nan")
        half = float("nan")
    return SlopeFit(
        slope=slope,
        intercept=float(intercept),
        r2=r2,
        stderr=stderr,
        ci_low=slope - half,
        ci_high=slope + half,
    )


# ---------------------------------------------------------------------------
# iteration audits


@dataclass(frozen=True)
class AuditRecord:
    """Iteration accounting for one solver run, kept small and picklable."""

    doublings: int
    bisections: int
    search_low: float
    search_high: float
    delta: float

    @classmethod
    def from_estimate(cls, est: RiskEstimate) -> "AuditRecord":
        return cls(
            doublings=est.doublings,
            bisections=est.bisections,
            search_low=est.search_bracket[0],
            search_high=est.search_bracket[1],
            delta=est.delta,
        )

    def budget(self) -> float:
        extent = max(abs(self.search_low), abs(self.search_high))
        return 2.0 * (1.0 + math.log2(extent / self.delta)) + 4.0

    def within_budget(self) -> bool:
        return self.doublings + self.bisections <= self.budget()


# ---------------------------------------------------------------------------
# estimation sweep


@dataclass(frozen=True)
class SweepRow:
    m: int
    mae: float
    mae_stderr: float
    mse: float
    mse_stderr: float
    reps: int


@dataclass
class SweepResult:
    rows: List[SweepRow]
    mae_fit: SlopeFit
    mse_fit: SlopeFit
    errors: Dict[int, np.ndarray]
    audits: List[AuditRecord]
    truth: float
    truth_source: str


def _sweep_chunk(task) -> List[Tuple[float, AuditRecord]]:
    kind, spec, dist, m, seed_seqs = task
    out = []
    cfg = default_config(m)
    for ss in seed_seqs:
        rng = np.random.default_rng(ss)
        z = dist.draw(rng, m)
        est = ubsr_sb(spec, z, cfg) if kind == "ubsr" else oce_saa(spec, z, cfg)
        out.append((est.value, AuditRecord.from_estimate(est)))
    return out


def _chunked(seq, n_chunks):
    size = max(1, math.ceil(len(seq) / n_chunks))
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def estimation_sweep(
    kind: str,
    spec: Union[LossSpec, UtilitySpec],
    dist: ScalarDist,
    m_list: Sequence[int],
    reps: int,
    seed: int,
    true_value: float,
    truth_source: str = "caller",
    workers: int = 1,
) -> SweepResult:
    """Error decay of the SAA estimator over batch sizes.

    ``kind`` is "ubsr" (spec is a loss) or "oce" (spec is a utility; errors
    are measured on the certainty-equivalent *value*).
    """
    if kind not in ("ubsr", "oce"):
        raise ValueError(f"kind must be 'ubsr' or 'oce', got {kind!r}")
    m_list = [int(m) for m in m_list]
    children = np.random.SeedSequence(seed).spawn(len(m_list) * reps)

    tasks = []
    for i, m in enumerate(m_list):
        cell_seeds = children[i * reps : (i + 1) * reps]
        for chunk in _chunked(cell_seeds, max(1, workers)):
            tasks.append((kind, spec, dist, m, chunk))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk_results = list(pool.map(_sweep_chunk, tasks))
    else:
        chunk_results = [_sweep_chunk(t) for t in tasks]

    # reassemble in task order; tasks were emitted grouped by m
    per_m: Dict[int, List[float]] = {m: [] for m in m_list}
    audits: List[AuditRecord] = []
    for (_, _, _, m, _), results in zip(tasks, chunk_results):
        for value, audit in results:
            per_m[m].append(value)
            audits.append(audit)

    rows = []
    errors: Dict[int, np.ndarray] = {}
    for m in m_list:
        err = np.asarray(per_m[m]) - true_value
        errors[m] = err
        abs_err = np.abs(err)
        sq_err = err**2
        rows.append(
            SweepRow(
                m=m,
                mae=float(abs_err.mean()),
                mae_stderr=float(abs_err.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0,
                mse=float(sq_err.mean()),
                mse_stderr=float(sq_err.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0,
                reps=reps,
            )
        )

    mae_fit = fit_loglog(m_list, [r.mae for r in rows])
    mse_fit = fit_loglog(m_list, [r.mse for r in rows])
    return SweepResult(
        rows=rows,
        mae_fit=mae_fit,
        mse_fit=mse_fit,
        errors=errors,
        audits=audits,
        truth=true_value,
        truth_source=truth_source,
    )


# ---------------------------------------------------------------------------
# truth resolution


def resolve_truth(
    kind: str, spec: Union[LossSpec, UtilitySpec], dist: ScalarDist
) -> Optional[Tuple[float, str]]:
    """Closed-form risk value for (spec, dist) where one exists."""
    if kind == "ubsr":
        if isinstance(spec, EntropicLoss):
            base = analytic_entropic(dist, spec.beta)
            if base is not None:
                # threshold shifts the entropic root by -log(lam)/beta
                return base - math.log(spec.lam) / spec.beta, "closed_form"
        if isinstance(spec, HeavisideLoss):
            val = analytic_var(dist, spec.lam)
            if val is not None:
                return val, "closed_form"
    else:
        if isinstance(spec, EntropicUtility):
            val = analytic_entropic(dist, spec.beta)
            if val is not None:
                return val, "closed_form"
        if isinstance(spec, CVaRHingeUtility):
            val = analytic_cvar(dist, spec.alpha)
            if val is not None:
                return val, "closed_form"
    return None


_REFERENCE_M = 2_000_000
_REFERENCE_STREAM = 713_987_341  # frozen stream so the fallback truth is stable


def reference_truth(
    kind: str,
    spec: Union[LossSpec, UtilitySpec],
    dist: ScalarDist,
    m: int = _REFERENCE_M,
) -> Tuple[float, str]:
    """Large-sample fallback truth: one tight estimate on a frozen stream."""
    rng = np.random.default_rng(np.random.SeedSequence([_REFERENCE_STREAM]))
    z = dist.draw(rng, m)
    cfg = BisectionConfig(delta=1e-4, epsilon=1.0)
    est = ubsr_sb(spec, z, cfg) if kind == "ubsr" else oce_saa(spec, z, cfg)
    return est.value, f"reference_run(m={m})"


# ---------------------------------------------------------------------------
# VaR/CVaR grid


@dataclass(frozen=True)
class VarCVaRCell:
    alpha: float
    m: int
    measure: str  # "var" or "cvar"
    mean_error: float
    std_error: float
    truth: float
    reps: int


def _var_cvar_chunk(task):
    alpha, m, dist, truth_var, truth_cvar, seed_seqs = task
    cfg = default_config(m)
    var_vals, cvar_vals = [], []
    audits = []
    for ss in seed_seqs:
        rng = np.random.default_rng(ss)
        z = dist.draw(rng, m)
        v = var_estimate(alpha, z, cfg)
        c = cvar_estimate(alpha, z, cfg)
        var_vals.append(v.value)
        cvar_vals.append(c.value)
        audits.append(AuditRecord.from_estimate(v))
        audits.append(AuditRecord.from_estimate(c))
    return var_vals, cvar_vals, audits


def var_cvar_grid(
    alphas: Sequence[float],
    dist: ScalarDist,
    m_list: Sequence[int],
    reps: int,
    seed: int,
    workers: int = 1,
) -> Tuple[List[VarCVaRCell], List[AuditRecord]]:
    """Mean/std of VaR and CVaR estimation error over an (alpha, m) grid,
    against the distribution's analytic values."""
    alphas = [float(a) for a in alphas]
    m_list = [int(m) for m in m_list]
    cells = [(a, m) for a in alphas for m in m_list]
    children = np.random.SeedSequence(seed).spawn(len(cells) * reps)

    tasks = []
    for i, (a, m) in enumerate(cells):
        tv = analytic_var(dist, a)
        tc = analytic_cvar(dist, a)
        if tv is None or tc is None:
            raise ValueError(f"no analytic VaR/CVaR for {dist!r}")
        cell_seeds = children[i * reps : (i + 1) * reps]
        for chunk in _chunked(cell_seeds, max(1, workers)):
            tasks.append((a, m, dist, tv, tc, chunk))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_var_cvar_chunk, tasks))
    else:
        results = [_var_cvar_chunk(t) for t in tasks]

    acc: Dict[Tuple[float, int], Tuple[List[float], List[float]]] = {
        cell: ([], []) for cell in cells
    }
    audits: List[AuditRecord] = []
    for (a, m, _, tv, tc, _), (var_vals, cvar_vals, chunk_audits) in zip(tasks, results):
        acc[(a, m)][0].extend(var_vals)
        acc[(a, m)][1].extend(cvar_vals)
        audits.extend(chunk_audits)

    out: List[VarCVaRCell] = []
    for a, m in cells:
        tv = analytic_var(dist, a)
        tc = analytic_cvar(dist, a)
        var_err = np.asarray(acc[(a, m)][0]) - tv
        cvar_err = np.asarray(acc[(a, m)][1]) - tc
        out.append(
            VarCVaRCell(
                alpha=a, m=m, measure="var",
                mean_error=float(var_err.mean()),
                std_error=float(var_err.std(ddof=1)) if reps > 1 else 0.0,
                truth=tv, reps=reps,
            )
        )
        out.append(
            VarCVaRCell(
                alpha=a, m=m, measure="cvar",
                mean_error=float(cvar_err.mean()),
                std_error=float(cvar_err.std(ddof=1)) if reps > 1 else 0.0,
                truth=tc, reps=reps,
            )
        )
    return out, audits


# ---------------------------------------------------------------------------
# SG convergence curves


@dataclass
class SGRateResult:
    checkpoints: List[int]
    mean_err_sq: Dict[float, np.ndarray]  # step constant c -> mean over seeds
    slope: Dict[float, SlopeFit]
    best_c: float
    n_seeds: int


def _sg_curve_task(task) -> Tuple[float, np.ndarray]:
    objective, sampler, projection, config, theta_star, checkpoints = task
    trace = sg_run(objective, sampler, projection, config, optimum=theta_star)
    idx = [k - 1 for k in checkpoints]
    return config.step_c, trace.err_sq[idx]


def sg_error_curve(
    objective: Union[UBSRObjective, OCEObjective],
    sampler,
    projection: ProjectionSpec,
    base_config: SGConfig,
    theta_star: np.ndarray,
    checkpoints: Sequence[int],
    n_seeds: int,
    c_values: Sequence[float] = (1.0,),
    seed: int = 0,
    workers: int = 1,
) -> SGRateResult:
    """Mean squared iterate error at the given iteration checkpoints, per
    step constant c, averaged over independently seeded runs."""
    checkpoints = sorted(int(k) for k in checkpoints)
    horizon = checkpoints[-1]
    seed_ints = np.random.SeedSequence(seed).generate_state(n_seeds)

    tasks = []
    for c in c_values:
        for s in seed_ints:
            cfg = replace(base_config, n_iterations=horizon, step_c=float(c), seed=int(s))
            tasks.append((objective, sampler, projection, cfg, np.asarray(theta_star), checkpoints))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sg_curve_task, tasks))
    else:
        results = [_sg_curve_task(t) for t in tasks]

    mean_err: Dict[float, np.ndarray] = {}
    for c in c_values:
        rows = np.vstack([r for cc, r in results if cc == float(c)])
        mean_err[float(c)] = rows.mean(axis=0)

    slopes = {c: fit_loglog(checkpoints, errs) for c, errs in mean_err.items()}
    best_c = min(mean_err, key=lambda c: mean_err[c][-1])
    return SGRateResult(
        checkpoints=checkpoints,
        mean_err_sq=mean_err,
        slope=slopes,
        best_c=best_c,
        n_seeds=n_seeds,
    )


# ---------------------------------------------------------------------------
# report writers


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_sweep_outputs(
    prefix: str,
    result: SweepResult,
    config_echo: dict,
    elapsed_seconds: float,
    with_timestamp: bool = True,
    raw_errors: bool = False,
) -> List[str]:
    """Write {prefix}_report.csv, {prefix}_summary.json and (optionally)
    {prefix}_errors.csv with the raw per-repetition errors."""
    paths = []
    report = pd.DataFrame([asdict(r) for r in result.rows])
    report_path = f"{prefix}_report.csv"
    report.to_csv(report_path, index=False)
    paths.append(report_path)

    summary = {
        "config": _jsonable(config_echo),
        "truth": {"value": result.truth, "source": result.truth_source},
        "rows": [asdict(r) for r in result.rows],
        "mae_fit": result.mae_fit.to_json(),
        "mse_fit": result.mse_fit.to_json(),
        "iteration_budget_ok": all(a.within_budget() for a in result.audits),
    }
    if with_timestamp:
        # timing fields vary run to run, so they travel with the timestamp
        summary["elapsed_seconds"] = elapsed_seconds
        summary["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    summary_path = f"{prefix}_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2)
        fh.write("\n")
    paths.append(summary_path)

    if raw_errors:
        rows = []
        for m, errs in result.errors.items():
            for i, e in enumerate(errs):
                rows.append({"m": m, "rep": i, "error": e})
        errors_path = f"{prefix}_errors.csv"
        pd.DataFrame(rows).to_csv(errors_path, index=False)
        paths.append(errors_path)
    return paths


def write_var_cvar_outputs(
    prefix: str,
    cells: List[VarCVaRCell],
    audits: List[AuditRecord],
    config_echo: dict,
    elapsed_seconds: float,
    with_timestamp: bool = True,
) -> List[str]:
    paths = []
    report = pd.DataFrame([asdict(c) for c in cells])
    report_path = f"{prefix}_report.csv"
    report.to_csv(report_path, index=False)
    paths.append(report_path)

    summary = {
        "config": _jsonable(config_echo),
        "cells": [asdict(c) for c in cells],
        "iteration_budget_ok": all(a.within_budget() for a in audits),
    }
    if with_timestamp:
        summary["elapsed_seconds"] = elapsed_seconds
        summary["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    summary_path = f"{prefix}_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2)
        fh.write("\n")
    paths.append(summary_path)
    return paths


def read_report_csv(path) -> pd.DataFrame:
    """Parser for the report CSVs this module writes (round-trip checked)."""
    return pd.read_csv(path, float_precision="round_trip")
