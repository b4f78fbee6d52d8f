"""Command-line entry point.

Every CSV output starts with a ``# vbil <version> seed=<seed> config=<hash>``
comment line; JSON outputs carry the same fields under ``_header``. Wall-clock
times are written to ``<name>.timing.json`` sidecars so the main outputs are
byte-identical across reruns.

Exit codes: 0 success, 2 usage or configuration error, 3 the optimiser hit
its iteration cap, 4 numerical abort.
"""

from __future__ import annotations

import json
import logging
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import config as cfgmod
from .errors import (
    ConditioningError,
    ConfigError,
    ContractError,
    DomainError,
    InvalidStateError,
    NumericalAbort,
    VbilError,
)
from .likelihood import io
from .optimizer import StopReason, run_vbil, theorem1_variance_study, kl_decomposition_check
from .pmmh import kde_summary, run_pmmh
from .report import density_grid, reported_moments

EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_ABORT = 4

_NUMERICAL = (NumericalAbort, InvalidStateError, ConditioningError)
_USAGE = (ConfigError, ContractError, DomainError)

log = logging.getLogger("vbil")


def _setup_logging():
    level = os.environ.get("VBIL_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _header(seed, chash, **extra) -> str:
    parts = [f"vbil {__version__}", f"seed={seed}", f"config={chash}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return " ".join(parts)


def parse_header(path) -> dict:
    """Key-value fields of the leading ``#`` comment of a CSV output."""
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(re.findall(r"(\w+)=(\S+)", first))


def _json_header(seed, chash, **extra) -> dict:
    return {"tool": "vbil", "version": __version__, "seed": seed, "config_hash": chash, **extra}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _timing_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".timing.json")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from exc


def _run(fn):
    """Map package errors onto exit codes."""
    try:
        return fn()
    except _USAGE as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except _NUMERICAL as exc:
        click.echo(f"numerical abort: {exc}", err=True)
        sys.exit(EXIT_ABORT)
    except VbilError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)


@click.group()
@click.version_option(__version__, prog_name="vbil")
def main():
    """Variational Bayes with intractable likelihoods."""
    _setup_logging()


# ---------------------------------------------------------------------------
# simulate


@main.group()
def simulate():
    """Simulate a dataset and write it as CSV."""


def _sim_out(out, seed, params, writer, payload):
    chash = cfgmod.config_hash(params)
    writer(out, payload, comment=_header(seed, chash, model=params["model"]))
    click.echo(f"wrote {out}")


@simulate.command("glmm")
@click.option("--beta", default="-1.5,2.5", show_default=True)
@click.option("--tau2", default=1.5, show_default=True, type=float)
@click.option("--n", "n", default=300, show_default=True, type=int)
@click.option("--ni", default=5, show_default=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def simulate_glmm(beta, tau2, n, ni, seed, out):
    """Logistic random-intercept panels with X = [1, U(0, 1)]."""
    from .models.glmm import glmm_simulate

    b = _floats(beta)
    params = {"model": "glmm", "beta": b, "tau2": tau2, "n": n, "ni": ni, "seed": seed}
    _run(lambda: _sim_out(out, seed, params, io.write_panel_csv, glmm_simulate(b, tau2, n, ni, np.random.default_rng(seed))))


@simulate.command("six-city")
@click.option("--n", "n", default=537, show_default=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def simulate_six_city(n, seed, out):
    """Wheeze-like panels: 4 visits per child, covariates age, smoke, age x smoke."""
    from .models.glmm import six_city_like_simulate

    params = {"model": "glmm", "layout": "six-city", "n": n, "seed": seed}
    _run(lambda: _sim_out(out, seed, params, io.write_panel_csv, six_city_like_simulate(np.random.default_rng(seed), n=n)))


@simulate.command("sv")
@click.option("--mu", default=0.0, show_default=True, type=float)
@click.option("--phi", default=0.9, show_default=True, type=float)
@click.option("--sigma2", default=0.1, show_default=True, type=float)
@click.option("--T", "T", default=1001, show_default=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def simulate_sv(mu, phi, sigma2, T, seed, out):
    """Stochastic volatility series."""
    from .models.sv import sv_simulate

    params = {"model": "sv", "mu": mu, "phi": phi, "sigma2": sigma2, "T": T, "seed": seed}
    _run(lambda: _sim_out(out, seed, params, io.write_series_csv, sv_simulate(mu, phi, sigma2, T, np.random.default_rng(seed)).y))


@simulate.command("stable")
@click.option("--alpha", default=1.5, show_default=True, type=float)
@click.option("--beta", default=0.5, show_default=True, type=float)
@click.option("--gamma", default=1.0, show_default=True, type=float)
@click.option("--delta", default=0.0, show_default=True, type=float)
@click.option("--n", "n", default=500, show_default=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def simulate_stable(alpha, beta, gamma, delta, n, seed, out):
    """Independent alpha-stable draws."""
    from .likelihood.abc import alpha_stable_simulate

    params = {"model": "stable", "alpha": alpha, "beta": beta, "gamma": gamma, "delta": delta, "n": n, "seed": seed}
    _run(lambda: _sim_out(out, seed, params, io.write_abc_csv, alpha_stable_simulate(alpha, beta, gamma, delta, n, np.random.default_rng(seed))))


@simulate.command("bernoulli")
@click.option("--theta", default=0.3, show_default=True, type=float)
@click.option("--n", "n", default=200, show_default=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def simulate_bernoulli(theta, n, seed, out):
    """Independent 0/1 trials."""
    from .models.bernoulli import bernoulli_simulate

    params = {"model": "bernoulli", "theta": theta, "n": n, "seed": seed}
    _run(lambda: _sim_out(out, seed, params, io.write_abc_csv, bernoulli_simulate(theta, n, np.random.default_rng(seed))))


@simulate.command("mixture")
@click.option("--omega", default=0.3, show_default=True, type=float)
@click.option("--mu", default="-3,3", show_default=True)
@click.option("--var", "var", default="2,3", show_default=True)
@click.option("--n", "n", default=200, show_default=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def simulate_mixture(omega, mu, var, n, seed, out):
    """Two-component normal mixture."""
    from .models.mixture import mixture_simulate

    m, v = _floats(mu), _floats(var)
    params = {"model": "mixture", "omega": omega, "mu": m, "var": v, "n": n, "seed": seed}
    _run(lambda: _sim_out(out, seed, params, io.write_abc_csv, mixture_simulate(n, np.random.default_rng(seed), omega, m, v)))


# ---------------------------------------------------------------------------
# shared options


def _config_option(f):
    return click.option(
        "--config", "config_path", required=True,
        help="JSON config file, or the name of a bundled fixture (e.g. 'sv').",
    )(f)


def _common(f):
    opts = [
        click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False)),
        click.option("--seed", type=int, default=None, help="Overrides the config seed."),
        click.option("--workers", type=int, default=None, help="Likelihood worker threads [default: all cores]."),
        click.option("--sigma2", type=float, default=None, help="Target variance of log p_hat."),
        click.option("--particles", type=int, default=None, help="Fixed particle / pseudo-data count."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return _config_option(f)


def _resolve_config(path: str) -> dict:
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = cfgmod.bundled_config(path)
    return cfgmod.load_config(p)


def _effective_config(config_path, seed, sigma2, particles, **overrides) -> dict:
    cfg = cfgmod.policy_override(_resolve_config(config_path), sigma2, particles)
    if seed is not None:
        cfg["seed"] = seed
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    return cfg


def _workers(n):
    n = n or os.cpu_count() or 1
    if n < 1:
        raise ConfigError("--workers must be at least 1")
    return n


def _load(cfg, data_path):
    try:
        data = cfgmod.load_data(cfg, data_path)
    except ValueError as exc:
        if isinstance(exc, VbilError):
            raise
        raise ConfigError(f"{data_path}: {exc}") from exc
    return data


# ---------------------------------------------------------------------------
# fit


def _trace_rows(trace):
    return [
        [r.t, r.lb_hat, r.lb_scaled, r.lb_window_avg, *map(float, r.lam)]
        for r in trace.iterations
    ]


def _write_trace(path, trace, header):
    p = trace.final_family.n_params
    cols = ["iter", "lb_hat", "lb_scaled", "lb_window_avg"] + [f"lambda_{k + 1}" for k in range(p)]
    io.write_table(path, cols, _trace_rows(trace), comment=header)


def _fit_summary(spec, family, seed) -> dict:
    mean, sd = reported_moments(family, spec.report, seed=seed)
    return {
        "family": family.describe(),
        "lambda": family.lam.tolist(),
        "parameters": [
            {"name": n, "mean": float(m), "sd": float(s)}
            for n, m, s in zip(spec.reported_names, mean, sd)
        ],
    }


def _write_density(path, spec, family, header):
    rows = []
    for name, (x, dens) in zip(spec.reported_names, density_grid(family, spec.report)):
        rows += [[name, float(a), float(b)] for a, b in zip(x, dens)]
    io.write_table(path, ["parameter", "x", "density"], rows, comment=header)


def _fit(cfg, data_path, out_dir, workers):
    data = _load(cfg, data_path)
    spec = cfgmod.build_model(cfg, data)
    vcfg = cfgmod.vbil_config(cfg)
    seed = vcfg.seed
    chash = cfgmod.config_hash(cfg)
    header = _header(seed, chash, model=cfg["model"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with ThreadPoolExecutor(max_workers=_workers(workers)) as ex:
        trace = run_vbil(spec, spec.family, vcfg, ex)
        _write_trace(out / "trace.csv", trace, header)
        result = {
            "_header": _json_header(seed, chash),
            "model": cfg["model"],
            "method": "vbil",
            "iterations": len(trace.iterations),
            "stop_reason": trace.stop_reason.value,
            "log_marginal_likelihood": trace.final_log_marginal_likelihood_estimate,
            **_fit_summary(spec, trace.final_family, seed),
        }
        timing = {"fit_seconds": trace.elapsed_seconds, "likelihood_evaluations": trace.likelihood_evaluations}
        stop_reasons = [trace.stop_reason]
        final_spec, final_family = spec, trace.final_family

        if cfg["model"] == "mixture":
            from .models.mixture import mixture_refine_spec

            result["pilot"] = result.pop("parameters")
            result["pilot_family"] = result.pop("family")
            result.pop("lambda")
            _write_density(out / "pilot_density.csv", spec, trace.final_family, header)
            rspec = mixture_refine_spec(
                np.asarray(data), trace.final_family,
                float(cfg.get("tail_scale", 1.5)), int(cfg.get("refine_draws", 200)),
            )
            rcfg = replace(
                vcfg,
                S=int(cfg.get("refine_S", vcfg.S)),
                max_iterations=int(cfg.get("refine_max_iterations", vcfg.max_iterations)),
                seed=seed + 1,
            )
            rtrace = run_vbil(rspec, rspec.family, rcfg, ex)
            _write_trace(out / "refine_trace.csv", rtrace, header)
            result.update(_fit_summary(rspec, rtrace.final_family, seed))
            result["refine_iterations"] = len(rtrace.iterations)
            result["refine_stop_reason"] = rtrace.stop_reason.value
            timing["refine_seconds"] = rtrace.elapsed_seconds
            stop_reasons.append(rtrace.stop_reason)
            final_spec, final_family = rspec, rtrace.final_family

    _write_density(out / "density.csv", final_spec, final_family, header)
    _write_json(out / "fit.json", result)
    _write_json(_timing_path(out / "fit.json"), timing)
    click.echo(
        f"{result['stop_reason']} after {result['iterations']} iterations; "
        f"log p(y) ~= {result['log_marginal_likelihood']:.4f}"
    )
    if StopReason.MAX_ITERATIONS in stop_reasons:
        click.echo("optimiser reached its iteration cap before the stopping rule fired", err=True)
        sys.exit(EXIT_NOT_CONVERGED)


@main.command()
@_common
@click.option("--samples-per-iter", "S", type=int, default=None, help="Draws per iteration (S).")
@click.option("--max-iters", type=int, default=None)
@click.option("--rqmc/--no-rqmc", default=None, help="Sobol points with a random digital shift.")
@click.option("--natural/--traditional", default=None, help="Natural or Euclidean gradient.")
def fit(config_path, data_path, out_dir, seed, workers, sigma2, particles, S, max_iters, rqmc, natural):
    """Fit the variational posterior: trace.csv, fit.json and density.csv."""

    def go():
        cfg = _effective_config(
            config_path, seed, sigma2, particles,
            S=S, max_iterations=max_iters, rqmc=rqmc, natural=natural,
        )
        _fit(cfg, data_path, out_dir, workers)

    _run(go)


# ---------------------------------------------------------------------------
# baseline


def _baseline(cfg, data_path, out_dir, iterations, burn_in):
    data = _load(cfg, data_path)
    spec = cfgmod.build_model(cfg, data)
    seed = int(cfg["seed"])
    iterations = int(iterations or cfg.get("pmmh_iterations", 20000))
    burn_in = int(burn_in if burn_in is not None else cfg.get("pmmh_burn_in", iterations // 4))
    chash = cfgmod.config_hash({**cfg, "pmmh_iterations": iterations, "pmmh_burn_in": burn_in})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    estimator = cfgmod.baseline_estimator(cfg, spec, seed)
    init, init_cov = cfgmod.baseline_start(spec, seed)
    chain = run_pmmh(spec, iterations, burn_in, seed, estimator, init=init, init_cov=init_cov)

    header = _header(
        seed, chash, model=cfg["model"], burn_in=burn_in, params=",".join(spec.reported_names)
    )
    d = spec.dim
    cols = ["iter"] + [f"theta_{k + 1}" for k in range(d)] + ["log_lik_hat", "accepted"]
    rows = [
        [i, *map(float, chain.draws[i]), float(chain.log_lik[i]), int(chain.accepted[i])]
        for i in range(iterations)
    ]
    io.write_table(out / "chain.csv", cols, rows, comment=header)

    kept = spec.reported(chain.kept)
    summaries = [kde_summary(kept[:, j], n) for j, n in enumerate(spec.reported_names)]
    io.write_table(
        out / "summary.csv", ["parameter", "mean", "sd"],
        [[s.name, s.mean, s.sd] for s in summaries], comment=header,
    )
    rows = []
    for s in summaries:
        rows += [[s.name, float(a), float(b)] for a, b in zip(s.grid, s.density)]
    io.write_table(out / "density.csv", ["parameter", "x", "density"], rows, comment=header)
    _write_json(
        _timing_path(out / "chain.csv"),
        {"pmmh_seconds": chain.elapsed_seconds, "acceptance_rate": chain.acceptance_rate},
    )
    click.echo(f"acceptance rate after burn-in: {chain.acceptance_rate:.3f}")


@main.command()
@_common
@click.option("--iterations", type=int, default=None, help="Chain length including burn-in.")
@click.option("--burn-in", type=int, default=None)
def baseline(config_path, data_path, out_dir, seed, workers, sigma2, particles, iterations, burn_in):
    """Run the PMMH baseline: chain.csv, summary.csv and density.csv."""

    def go():
        cfg = _effective_config(config_path, seed, sigma2, None)
        if particles is not None:
            cfg["pmmh_particles"] = particles
        _baseline(cfg, data_path, out_dir, iterations, burn_in)

    _run(go)


# ---------------------------------------------------------------------------
# compare


def _read_timing(path, key):
    tp = _timing_path(path)
    if not tp.exists():
        return float("nan")
    t = json.loads(tp.read_text())
    return float(sum(v for k, v in t.items() if k.endswith("_seconds"))) if key is None else float(t.get(key, "nan"))


def _chain_reported(chain_path):
    meta = parse_header(chain_path)
    header, table = io.read_table(chain_path)
    theta_cols = [i for i, h in enumerate(header) if h.startswith("theta_")]
    burn_in = int(meta.get("burn_in", 0))
    draws = table[burn_in:, theta_cols]
    if draws.shape[0] < 100:
        raise ContractError(f"{chain_path}: need at least 100 post-burn-in draws")
    model = meta.get("model")
    report = _report_for(model)
    names = meta["params"].split(",") if "params" in meta else None
    return model, (draws if report is None else report(draws)), names


def _compare(fit_paths, chain_path, out_path, overlay_path):
    fits = [json.loads(Path(p).read_text()) for p in fit_paths]
    model, draws, chain_names = _chain_reported(chain_path)
    names = [p["name"] for p in fits[0]["parameters"]]
    for p, f in zip(fit_paths, fits):
        if f.get("model") != model:
            raise ContractError(f"{p} fits model {f.get('model')!r} but the chain is for {model!r}")
        if [q["name"] for q in f["parameters"]] != names:
            raise ContractError(f"{p}: parameterisation does not match the other fits")
    if chain_names is None:
        chain_names = names if draws.shape[1] == len(names) else []
    missing = [n for n in names if n not in chain_names]
    if missing:
        raise ContractError(f"{chain_path}: chain has no parameters {missing}")
    # a refined fit may report a subset of the chain's parameters
    draws = draws[:, [chain_names.index(n) for n in names]]
    summaries = [kde_summary(draws[:, j], n) for j, n in enumerate(names)]

    labels = ["vbil"] if len(fits) == 1 else [f"vbil_{i + 1}" for i in range(len(fits))]
    cols = ["parameter"]
    for lab in labels + ["pmmh"]:
        cols += [f"{lab}_mean", f"{lab}_sd"]
    rows = []
    for j, name in enumerate(names):
        row = [name]
        for f in fits:
            row += [f["parameters"][j]["mean"], f["parameters"][j]["sd"]]
        row += [summaries[j].mean, summaries[j].sd]
        rows.append(row)
    seeds = ",".join(str(f["_header"]["seed"]) for f in fits)
    chashes = ",".join(f["_header"]["config_hash"] for f in fits)
    header = _header(seeds, chashes, model=model)
    io.write_table(out_path, cols, rows, comment=header)

    timing = [[lab, _read_timing(p, None)] for lab, p in zip(labels, fit_paths)]
    timing.append(["pmmh", _read_timing(chain_path, "pmmh_seconds")])
    io.write_table(_timing_path(out_path).with_suffix(".csv"), ["method", "wall_clock_seconds"], timing, comment=header)

    if overlay_path is not None:
        from .expfam import ProductFamily
        from .report import density_grid as grid_of

        family = ProductFamily.from_description(fits[0]["family"])
        report = _report_for(model)
        vb = grid_of(family, report, n_grid=4096, tail=1e-7)
        rows = []
        for j, s in enumerate(summaries):
            x, dens = vb[j]
            q = np.interp(s.grid, x, dens, left=0.0, right=0.0)
            rows += [[s.name, float(a), float(b), float(c)] for a, b, c in zip(s.grid, q, s.density)]
        io.write_table(overlay_path, ["parameter", "x", "vbil_density", "pmmh_density"], rows, comment=header)


def _report_for(model):
    from .models import REPORTS

    return REPORTS.get(model)


@main.command()
@click.option("--fit", "fit_paths", multiple=True, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--chain", "chain_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--overlay", "overlay_path", default=None, type=click.Path(dir_okay=False),
              help="Also write VBIL and PMMH marginal densities on a shared grid.")
def compare(fit_paths, chain_path, out_path, overlay_path):
    """Table of posterior means and sds: VBIL fit(s) against a PMMH chain."""
    _run(lambda: _compare(fit_paths, chain_path, out_path, overlay_path))


# ---------------------------------------------------------------------------
# noise-variance study


def _study(cfg, out_path, workers):
    from .models.bernoulli import bernoulli_beta_spec

    if cfg["model"] != "bernoulli":
        raise ConfigError("the noise-variance study runs on the bernoulli model")
    n, k = int(cfg["n"]), int(cfg["k"])
    spec = bernoulli_beta_spec(n, k, tuple(cfg.get("init", (5.0, 5.0))))
    vcfg = cfgmod.vbil_config(cfg)
    grid = [float(s) for s in cfg.get("sigma2_grid", (0.0, 0.5, 1.0, 2.0, 4.0))]
    reps = int(cfg.get("replications", 200))
    rep = theorem1_variance_study(spec, spec.exact_loglik, spec.family, grid, reps, vcfg)
    chash = cfgmod.config_hash(cfg)
    header = _header(vcfg.seed, chash, model="bernoulli")
    cols = ["coordinate", "slope", "intercept", "r_squared"] + [f"var_sigma2_{s:g}" for s in grid]
    rows = [
        [f"lambda_{j + 1}", rep.slope[j], rep.intercept[j], rep.r_squared[j], *map(float, rep.variances[:, j])]
        for j in range(rep.slope.shape[0])
    ]
    io.write_table(out_path, cols, rows, comment=header)

    kl_rows = kl_decomposition_check(
        spec, spec.exact_loglik, spec.extras["log_evidence"], spec.family, grid,
        int(cfg.get("kl_samples", 100_000)), vcfg.seed,
    )
    out = Path(out_path)
    io.write_table(
        out.with_name(out.stem + "_kl.csv"), ["sigma2", "kl_minus_half_sigma2", "se"],
        [[r.sigma2, r.kl_minus_half_sigma2, r.se] for r in kl_rows], comment=header,
    )
    click.echo("R^2 per coordinate: " + ", ".join(f"{v:.4f}" for v in rep.r_squared))


@main.command("study-theorem1")
@_config_option
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None, help="Accepted for symmetry; the study is sequential.")
def study_theorem1(config_path, out_path, seed, workers):
    """Variance of the final lambda against the log-likelihood noise variance."""

    def go():
        cfg = _effective_config(config_path, seed, None, None)
        _study(cfg, out_path, workers)

    _run(go)


if __name__ == "__main__":  # pragma: no cover
    main()
