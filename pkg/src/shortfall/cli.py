"""Command-line interface.

Subcommands: estimate (one risk number from samples or a named
distribution), sweep-estimation (error-decay study over batch sizes),
var-cvar-sweep (quantile/tail grid study), optimize (projected SG on the
synthetic market), portfolio (SG allocation on a returns CSV via the
noise-augmented bootstrap).

Exit codes: 0 success, 1 usage or I/O error, 2 finished with warnings (an
estimate whose residual tolerance was unattainable), 3 numerical abort.
"""

from __future__ import annotations

import json
import math
import os
import sys
import time
from dataclasses import asdict

import click
import numpy as np
import pandas as pd

from . import __version__
from .estimation import (
    BisectionConfig,
    EstimationError,
    default_config,
    oce_saa,
    ubsr_sb,
)
from .experiments import (
    estimation_sweep,
    reference_truth,
    resolve_truth,
    var_cvar_grid,
    write_sweep_outputs,
    write_var_cvar_outputs,
    _jsonable,
)
from .optimization import (
    BallProjection,
    BoxProjection,
    IdentityProjection,
    OCEObjective,
    SGAbort,
    SGConfig,
    SimplexProjection,
    UBSRObjective,
    deterministic_mv_optimum,
    sg_run,
)
from .risk_functions import (
    CVaRHingeUtility,
    EntropicLoss,
    EntropicUtility,
    HeavisideLoss,
    MonotoneMVUtility,
    ONPVUtility,
    PiecewiseLinearLoss,
    PolynomialLoss,
    QuarticUtility,
    expectile_loss,
    from_json as risk_from_json,
    to_json as risk_to_json,
    _LOSS_TYPES,
)
from .scenarios import (
    EmpiricalBootstrapSampler,
    GaussianVectorSampler,
    PointMassSampler,
    entropic_objective,
    parse_dist,
    read_returns,
    synthetic_market,
)

_DEFAULT_WORKERS = max(1, min(4, os.cpu_count() or 1))


def _build_risk(risk, risk_json, beta, alpha, a, b, c, lam):
    """Resolve the risk flags into ('ubsr'|'oce', spec)."""
    if (risk is None) == (risk_json is None):
        raise click.UsageError("provide exactly one of --risk or --risk-json")
    if risk_json is not None:
        try:
            spec = risk_from_json(json.loads(risk_json))
        except (json.JSONDecodeError, ValueError) as exc:
            raise click.UsageError(f"bad --risk-json: {exc}")
        return ("ubsr" if isinstance(spec, _LOSS_TYPES) else "oce"), spec

    def need(value, flag):
        if value is None:
            raise click.UsageError(f"--risk {risk} requires {flag}")
        return value

    try:
        if risk == "entropic-ubsr":
            return "ubsr", EntropicLoss(beta=need(beta, "--beta"),
                                        lam=1.0 if lam is None else lam)
        if risk == "polynomial-ubsr":
            return "ubsr", PolynomialLoss(a=need(a, "--a"),
                                          lam=1.0 if lam is None else lam)
        if risk == "pw-linear-ubsr":
            return "ubsr", PiecewiseLinearLoss(a=need(a, "--a"), b=need(b, "--b"),
                                               c=c or 0.0,
                                               lam=0.0 if lam is None else lam)
        if risk == "expectile":
            return "ubsr", expectile_loss(need(a, "--a"))
        if risk == "var":
            return "ubsr", HeavisideLoss(lam=need(alpha, "--alpha"))
        if risk == "cvar":
            return "oce", CVaRHingeUtility(alpha=need(alpha, "--alpha"))
        if risk == "entropic-oce":
            return "oce", EntropicUtility(beta=need(beta, "--beta"))
        if risk == "monotone-mv":
            return "oce", MonotoneMVUtility(a=2.0 if a is None else a)
        if risk == "onpv":
            return "oce", ONPVUtility(a=need(a, "--a"), b=need(b, "--b"))
        if risk == "quartic":
            return "oce", QuarticUtility()
    except ValueError as exc:
        raise click.UsageError(str(exc))
    raise click.UsageError(
        f"unknown --risk {risk!r}; expected one of entropic-ubsr, "
        f"polynomial-ubsr, pw-linear-ubsr, expectile, var, cvar, entropic-oce, "
        f"monotone-mv, onpv, quartic"
    )


def _risk_options(fn):
    for deco in reversed([
        click.option("--risk", type=str, default=None, help="named risk measure"),
        click.option("--risk-json", type=str, default=None,
                     help="full risk-function spec as JSON"),
        click.option("--beta", type=float, default=None),
        click.option("--alpha", type=float, default=None),
        click.option("--a", type=float, default=None),
        click.option("--b", type=float, default=None),
        click.option("--c", type=float, default=None),
        click.option("--lambda", "lam", type=float, default=None,
                     help="shortfall threshold"),
    ]):
        fn = deco(fn)
    return fn


def _read_samples_csv(path):
    """One numeric column, optional single header line."""
    values = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            cell = line.strip().split(",")[0]
            if not cell:
                continue
            try:
                values.append(float(cell))
            except ValueError:
                if i == 0:
                    continue  # header line
                raise click.ClickException(
                    f"{path}:{i + 1}: cannot parse {cell!r} as a number"
                )
    if not values:
        raise click.ClickException(f"{path}: no numeric samples found")
    return np.asarray(values)


@click.group()
@click.version_option(version=__version__, prog_name="shortfall")
def cli():
    """Shortfall-risk and certainty-equivalent estimation tools."""


# ---------------------------------------------------------------------------
# estimate


@cli.command()
@_risk_options
@click.option("--samples", type=click.Path(exists=True, dir_okay=False),
              default=None, help="CSV of samples (one numeric column)")
@click.option("--dist", "dist_text", type=str, default=None,
              help="sample distribution, e.g. gaussian:-1,4")
@click.option("--m", type=int, default=10_000, show_default=True,
              help="batch size when drawing from --dist")
@click.option("--delta", type=float, default=None,
              help="bisection half-width (default 1/sqrt(m))")
@click.option("--epsilon", type=float, default=1.0, show_default=True,
              help="residual tolerance for certainty-equivalent solves")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="also write the result JSON here")
@click.pass_context
def estimate(ctx, risk, risk_json, beta, alpha, a, b, c, lam, samples,
             dist_text, m, delta, epsilon, seed, out):
    """Estimate one risk number from samples or a named distribution."""
    kind, spec = _build_risk(risk, risk_json, beta, alpha, a, b, c, lam)
    if (samples is None) == (dist_text is None):
        raise click.UsageError("provide exactly one of --samples or --dist")
    if samples is not None:
        z = _read_samples_csv(samples)
    else:
        dist = parse_dist(dist_text)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        z = dist.draw(rng, m)

    cfg = BisectionConfig(
        delta=(1.0 / math.sqrt(z.size)) if delta is None else delta,
        epsilon=epsilon,
    )
    est = ubsr_sb(spec, z, cfg) if kind == "ubsr" else oce_saa(spec, z, cfg)

    payload = {
        "risk_function": risk_to_json(spec),
        "kind": kind,
        "m": int(z.size),
        "seed": seed if samples is None else None,
        "estimate": est.to_json(),
    }
    text = json.dumps(_jsonable(payload), indent=2)
    click.echo(text)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    if not est.converged:
        click.echo(
            f"warning: not converged ({', '.join(est.flags) or 'residual'}); "
            f"the root is still within delta={cfg.delta:g} of the sample risk",
            err=True,
        )
        ctx.exit(2)


# ---------------------------------------------------------------------------
# sweep-estimation


@cli.command("sweep-estimation")
@_risk_options
@click.option("--dist", "dist_text", type=str, required=True)
@click.option("--m-list", type=str, default="10,100,1000,10000", show_default=True)
@click.option("--reps", type=int, default=1000, show_default=True)
@click.option("--fast", is_flag=True, help="preset: reps=100")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=_DEFAULT_WORKERS, show_default=True)
@click.option("--out", "prefix", type=str, required=True,
              help="output path prefix")
@click.option("--raw-errors", is_flag=True,
              help="also write per-repetition errors CSV (histogram data)")
@click.option("--no-timestamp", is_flag=True,
              help="omit the timestamp so reruns are byte-identical")
def sweep_estimation(risk, risk_json, beta, alpha, a, b, c, lam, dist_text,
                     m_list, reps, fast, seed, workers, prefix, raw_errors,
                     no_timestamp):
    """Monte Carlo error decay of the estimator over batch sizes."""
    kind, spec = _build_risk(risk, risk_json, beta, alpha, a, b, c, lam)
    dist = parse_dist(dist_text)
    ms = [int(v) for v in m_list.split(",") if v.strip()]
    if fast:
        reps = min(reps, 100)

    known = resolve_truth(kind, spec, dist)
    if known is not None:
        truth, source = known
    else:
        truth, source = reference_truth(kind, spec, dist)

    started = time.perf_counter()
    result = estimation_sweep(
        kind, spec, dist, ms, reps=reps, seed=seed,
        true_value=truth, truth_source=source, workers=workers,
    )
    elapsed = time.perf_counter() - started

    echo = {
        "command": "sweep-estimation",
        "risk_function": risk_to_json(spec),
        "kind": kind,
        "dist": dist_text,
        "m_list": ms,
        "reps": reps,
        "seed": seed,
        "workers": workers,
    }
    paths = write_sweep_outputs(
        prefix, result, echo, elapsed,
        with_timestamp=not no_timestamp, raw_errors=raw_errors,
    )
    click.echo(
        f"mae slope {result.mae_fit.slope:.3f} (r2 {result.mae_fit.r2:.3f}), "
        f"mse slope {result.mse_fit.slope:.3f} (r2 {result.mse_fit.r2:.3f})"
    )
    for p in paths:
        click.echo(p)


# ---------------------------------------------------------------------------
# var-cvar-sweep


def _parse_alphas(text: str):
    if text.startswith("uniform:"):
        n = int(text.split(":", 1)[1])
        if n < 1:
            raise click.UsageError("alpha count must be >= 1")
        return [i / (n + 1) for i in range(1, n + 1)]
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals or not all(0.0 < v < 1.0 for v in vals):
        raise click.UsageError("alphas must lie strictly inside (0, 1)")
    return vals


@cli.command("var-cvar-sweep")
@click.option("--alphas", type=str, default="uniform:25", show_default=True,
              help="'uniform:N' for N levels i/(N+1), or a comma list")
@click.option("--dist", "dist_text", type=str, default="gaussian:0,1",
              show_default=True)
@click.option("--m-list", type=str, default="10,100,1000", show_default=True)
@click.option("--reps", type=int, default=1000, show_default=True)
@click.option("--fast", is_flag=True, help="preset: reps=100")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=_DEFAULT_WORKERS, show_default=True)
@click.option("--out", "prefix", type=str, required=True)
@click.option("--no-timestamp", is_flag=True)
def var_cvar_sweep(alphas, dist_text, m_list, reps, fast, seed, workers,
                   prefix, no_timestamp):
    """Quantile and tail-average estimation errors over an (alpha, m) grid."""
    levels = _parse_alphas(alphas)
    dist = parse_dist(dist_text)
    ms = [int(v) for v in m_list.split(",") if v.strip()]
    if fast:
        reps = min(reps, 100)

    started = time.perf_counter()
    cells, audits = var_cvar_grid(levels, dist, ms, reps=reps, seed=seed,
                                  workers=workers)
    elapsed = time.perf_counter() - started

    echo = {
        "command": "var-cvar-sweep",
        "alphas": levels,
        "dist": dist_text,
        "m_list": ms,
        "reps": reps,
        "seed": seed,
        "workers": workers,
    }
    paths = write_var_cvar_outputs(
        prefix, cells, audits, echo, elapsed, with_timestamp=not no_timestamp
    )
    worst = max(abs(cell.mean_error) for cell in cells)
    click.echo(f"{len(cells)} cells written; worst |mean error| {worst:.4g}")
    for p in paths:
        click.echo(p)


# ---------------------------------------------------------------------------
# optimize


def _parse_projection(text: str):
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    try:
        if name == "simplex":
            return SimplexProjection()
        if name == "box":
            lo, hi = (float(v) for v in rest.split(","))
            return BoxProjection(lower=lo, upper=hi)
        if name == "ball":
            return BallProjection(radius=float(rest))
        if name in ("none", "identity"):
            return IdentityProjection()
    except ValueError as exc:
        raise click.UsageError(f"cannot parse projection {text!r}: {exc}")
    raise click.UsageError(
        f"unknown projection {name!r}; expected simplex, box:LO,HI, ball:R, or none"
    )


@cli.command()
@_risk_options
@click.option("--scenario", "scenario_text", type=str, default="synthetic",
              show_default=True,
              help="'synthetic' (Gaussian market from --dim/--structure-seed) "
                   "or 'pointmass:c1,...,cd' (zero noise)")
@click.option("--dim", type=int, default=5, show_default=True,
              help="number of assets in the synthetic market")
@click.option("--structure-seed", type=int, default=0, show_default=True,
              help="seed that fixes the synthetic market moments")
@click.option("--n", "n_iterations", type=int, default=500, show_default=True)
@click.option("--step-c", type=float, default=1.0, show_default=True)
@click.option("--step-exponent", type=float, default=1.0, show_default=True)
@click.option("--schedule", type=click.Choice(["increasing", "constant", "power"]),
              default="increasing", show_default=True)
@click.option("--m0", type=int, default=1, show_default=True)
@click.option("--power-p", type=float, default=1.0, show_default=True)
@click.option("--epsilon", type=float, default=1.0, show_default=True)
@click.option("--projection", "projection_text", type=str, default="simplex",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "prefix", type=str, required=True)
@click.option("--no-timestamp", is_flag=True)
def optimize(risk, risk_json, beta, alpha, a, b, c, lam, scenario_text, dim,
             structure_seed, n_iterations, step_c, step_exponent, schedule,
             m0, power_p, epsilon, projection_text, seed, prefix, no_timestamp):
    """Projected stochastic-gradient risk minimization on a sampled market."""
    kind, spec = _build_risk(risk, risk_json, beta, alpha, a, b, c, lam)
    if isinstance(spec, HeavisideLoss):
        raise click.UsageError(
            "the quantile loss has no usable derivative, so 'var' cannot be "
            "optimized by stochastic gradients; use cvar instead"
        )
    objective = UBSRObjective(spec) if kind == "ubsr" else OCEObjective(spec)
    projection = _parse_projection(projection_text)
    if scenario_text == "synthetic":
        mu, sigma = synthetic_market(dim, structure_seed)
        sampler = GaussianVectorSampler(mu=mu, sigma=sigma)
    elif scenario_text.startswith("pointmass:"):
        try:
            point = np.array([float(v)
                              for v in scenario_text.split(":", 1)[1].split(",")])
        except ValueError as exc:
            raise click.UsageError(f"cannot parse {scenario_text!r}: {exc}")
        sampler = PointMassSampler(point=point)
        dim = point.size
        mu = sigma = None
    else:
        raise click.UsageError(
            f"unknown scenario {scenario_text!r}; expected 'synthetic' or "
            f"'pointmass:c1,...,cd'"
        )
    config = SGConfig(
        n_iterations=n_iterations, step_c=step_c, step_exponent=step_exponent,
        batch_schedule=schedule, m0=m0, power_p=power_p, epsilon=epsilon,
        seed=seed,
    )

    # For the entropic family on a Gaussian market, the exact optimum is
    # available through the deterministic mean-variance solver.
    oracle_beta = None
    if isinstance(spec, EntropicLoss) and spec.lam == 1.0:
        oracle_beta = spec.beta
    elif isinstance(spec, EntropicUtility):
        oracle_beta = spec.beta
    theta_star = None
    objective_fn = None
    if oracle_beta is not None and mu is not None:
        theta_star = deterministic_mv_optimum(mu, sigma, oracle_beta, projection)
        objective_fn = lambda th: entropic_objective(th, mu, sigma, oracle_beta)

    started = time.perf_counter()
    trace = sg_run(objective, sampler, projection, config,
                   optimum=theta_star, objective_fn=objective_fn)
    elapsed = time.perf_counter() - started

    trace_path = f"{prefix}_trace.csv"
    trace.to_csv(trace_path)
    summary = {
        "command": "optimize",
        "risk_function": risk_to_json(spec),
        "kind": kind,
        "scenario": scenario_text,
        "dim": dim,
        "structure_seed": structure_seed,
        "config": config.to_json(),
        "projection": projection_text,
        "final_theta": trace.final_theta.tolist(),
        "final_grad_norm": float(trace.grad_norm[-1]),
        "total_samples": trace.total_samples,
    }
    if theta_star is not None:
        summary["theta_star"] = theta_star.tolist()
        summary["final_err_sq"] = float(trace.err_sq[-1])
        summary["final_h_gap"] = float(trace.h_gap[-1])
    if not no_timestamp:
        summary["elapsed_seconds"] = elapsed
        summary["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    summary_path = f"{prefix}_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2)
        fh.write("\n")
    click.echo(f"final theta {np.array2string(trace.final_theta, precision=4)}")
    click.echo(trace_path)
    click.echo(summary_path)


# ---------------------------------------------------------------------------
# portfolio


def _parse_portfolio_risk(text: str):
    """Parse strategy specs like cvar:0.95, entropic:0.5, expectile:0.75,
    monotone-mv:2, onpv:2,0.5, quartic."""
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    params = [float(v) for v in rest.split(",")] if rest else []
    try:
        if name == "cvar":
            return "oce", CVaRHingeUtility(alpha=params[0])
        if name in ("entropic", "entropic-ubsr"):
            return "ubsr", EntropicLoss(beta=params[0], lam=1.0)
        if name == "entropic-oce":
            return "oce", EntropicUtility(beta=params[0])
        if name == "expectile":
            return "ubsr", expectile_loss(params[0])
        if name == "monotone-mv":
            return "oce", MonotoneMVUtility(a=params[0] if params else 2.0)
        if name == "onpv":
            return "oce", ONPVUtility(a=params[0], b=params[1])
        if name == "quartic":
            return "oce", QuarticUtility()
    except (IndexError, ValueError) as exc:
        raise click.UsageError(f"cannot parse risk spec {text!r}: {exc}")
    raise click.UsageError(f"unknown portfolio risk {name!r}")


@cli.command()
@click.option("--returns", "returns_path",
              type=click.Path(exists=True, dir_okay=False), required=True,
              help="CSV with header date,TICKER1,...,TICKERd")
@click.option("--prices", is_flag=True,
              help="input columns are price levels; convert to returns")
@click.option("--risk", "risk_texts", type=str, multiple=True, required=True,
              help="strategy spec, repeatable (e.g. cvar:0.95 entropic:0.5)")
@click.option("--benchmark-alpha", type=float, default=0.95, show_default=True,
              help="tail level of the always-included min-cvar benchmark")
@click.option("--noise-scale", type=float, default=0.1, show_default=True)
@click.option("--n", "n_iterations", type=int, default=300, show_default=True)
@click.option("--step-c", type=float, default=1.0, show_default=True)
@click.option("--step-exponent", type=float, default=1.0, show_default=True)
@click.option("--schedule", type=click.Choice(["increasing", "constant", "power"]),
              default="increasing", show_default=True)
@click.option("--m0", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "prefix", type=str, required=True)
@click.option("--no-timestamp", is_flag=True)
def portfolio(returns_path, prices, risk_texts, benchmark_alpha, noise_scale,
              n_iterations, step_c, step_exponent, schedule, m0, seed, prefix,
              no_timestamp):
    """Risk-minimal long-only allocations from a historical returns panel."""
    data = read_returns(returns_path, prices=prices)
    if data.dropped_rows:
        click.echo(f"dropped {data.dropped_rows} incomplete rows", err=True)
    sampler = EmpiricalBootstrapSampler(rows=data.values, noise_scale=noise_scale)
    projection = SimplexProjection()

    # the min-cvar benchmark always runs alongside the requested strategies
    runs = [(text, _parse_portfolio_risk(text)) for text in risk_texts]
    runs.append(("min_cvar", ("oce", CVaRHingeUtility(alpha=benchmark_alpha))))

    strategies = {}
    for i, (text, (kind, spec)) in enumerate(runs):
        objective = UBSRObjective(spec) if kind == "ubsr" else OCEObjective(spec)
        config = SGConfig(
            n_iterations=n_iterations, step_c=step_c,
            step_exponent=step_exponent, batch_schedule=schedule, m0=m0,
            seed=seed + i,
        )
        trace = sg_run(objective, sampler, projection, config)
        strategies[text] = trace

    d = data.values.shape[1]
    weights = {text: trace.final_theta for text, trace in strategies.items()}
    weights["equal_weight"] = np.full(d, 1.0 / d)

    # in-sample cumulative simple returns of the fixed final weights
    cum = {}
    for label, w in weights.items():
        portfolio_returns = data.values @ w
        cum[label] = np.cumprod(1.0 + portfolio_returns) - 1.0

    cum_frame = pd.DataFrame({"date": data.dates, **cum})
    cum_path = f"{prefix}_cumret.csv"
    cum_frame.to_csv(cum_path, index=False)

    weights_payload = {
        label: dict(zip(data.tickers, np.asarray(w).tolist()))
        for label, w in weights.items()
    }
    weights_path = f"{prefix}_weights.json"
    with open(weights_path, "w") as fh:
        json.dump(_jsonable(weights_payload), fh, indent=2)
        fh.write("\n")

    summary = {
        "command": "portfolio",
        "returns": str(returns_path),
        "tickers": data.tickers,
        "rows_used": int(data.values.shape[0]),
        "dropped_rows": data.dropped_rows,
        "noise_scale": noise_scale,
        "benchmark_alpha": benchmark_alpha,
        "strategies": {
            label: {
                "weights": weights_payload[label],
                "in_sample_mean": float((data.values @ weights[label]).mean()),
                "in_sample_vol": float((data.values @ weights[label]).std(ddof=1)),
                **(
                    {"total_samples": strategies[label].total_samples}
                    if label in strategies
                    else {}
                ),
            }
            for label in weights
        },
        "seed": seed,
    }
    if not no_timestamp:
        summary["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    summary_path = f"{prefix}_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2)
        fh.write("\n")

    for label, w in weights_payload.items():
        shown = ", ".join(f"{t}={v:.3f}" for t, v in w.items())
        click.echo(f"{label}: {shown}")
    click.echo(weights_path)
    click.echo(cum_path)
    click.echo(summary_path)


# ---------------------------------------------------------------------------
# entry point with the exit-code contract


def main(argv=None):
    try:
        # with standalone_mode=False click returns ctx.exit codes instead of
        # calling sys.exit, so the return value is the code
        rv = cli.main(args=argv, prog_name="shortfall", standalone_mode=False)
        code = rv if isinstance(rv, int) else 0
    except click.exceptions.Exit as exc:
        code = exc.exit_code
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        code = 1
    except click.Abort:
        click.echo("aborted", err=True)
        code = 1
    except SGAbort as exc:
        click.echo(f"numerical abort: {exc}", err=True)
        code = 3
    except EstimationError as exc:
        click.echo(f"estimation failed: {exc}", err=True)
        code = 3
    except (OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        code = 1
    sys.exit(code)


if __name__ == "__main__":
    main()
