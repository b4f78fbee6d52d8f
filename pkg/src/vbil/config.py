"""Flat JSON run configurations and the model/estimator wiring they describe."""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .expfam import BetaFactor, InverseGammaFactor, MvnFactor, ProductFamily
from .likelihood import io
from .likelihood.abc import AbcData
from .likelihood.base import FixedN
from .likelihood.panel import PanelCountsPolicy, PanelISEstimator, adapt_particles
from .likelihood.particle import SsmData
from .likelihood.synthetic import SyntheticNoiseEstimator
from .models.base import ModelSpec
from .optimizer import StepSchedule, VbilConfig

MODELS = ("bernoulli", "glmm", "sv", "stable", "mixture")

DEFAULTS = {
    "seed": 1,
    "S": 500,
    "max_iterations": 200,
    "min_iterations": 0,
    "step_scale": 1.0,
    "step_kappa": 1.0,
    "natural": True,
    "control_variates": True,
    "factorized": False,
    "rqmc": True,
    "stop_window": 5,
    "stop_epsilon": 1e-5,
}


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict) or cfg.get("model") not in MODELS:
        raise ConfigError(f"config must be an object with 'model' in {MODELS}")
    for k, v in cfg.items():
        if isinstance(v, dict):
            raise ConfigError(f"config must be flat; key {k!r} holds an object")
    return {**DEFAULTS, **cfg}


def bundled_config(name: str) -> Path:
    """Path of a config fixture shipped with the package."""
    path = resources.files("vbil") / "configs" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(path))


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def vbil_config(cfg: dict) -> VbilConfig:
    try:
        return VbilConfig(
            S=int(cfg["S"]),
            step=StepSchedule(float(cfg["step_scale"]), float(cfg["step_kappa"])),
            natural=bool(cfg["natural"]),
            control_variates=bool(cfg["control_variates"]),
            factorized=bool(cfg["factorized"]),
            rqmc=bool(cfg["rqmc"]),
            stop_window=int(cfg["stop_window"]),
            stop_epsilon=float(cfg["stop_epsilon"]),
            max_iterations=int(cfg["max_iterations"]),
            min_iterations=int(cfg["min_iterations"]),
            seed=int(cfg["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid optimiser settings: {exc}") from exc


def load_data(cfg: dict, path):
    """Read the data file in the layout the configured model expects."""
    model = cfg["model"]
    if model == "glmm":
        return io.read_panel_csv(path)
    if model == "sv":
        return SsmData(io.read_series_csv(path))
    y = io.read_abc_csv(path)
    if y.shape[0] == 0:
        raise ConfigError(f"{path}: no observations")
    return y


def _family(kind_list, init_list, blocks=None) -> ProductFamily:
    factors = []
    for kind, init in zip(kind_list, init_list):
        if kind == "beta":
            factors.append(BetaFactor.from_shapes(*init))
        elif kind == "beta_mode":
            factors.append(BetaFactor.from_shapes(*init, min_shape=1.0))
        elif kind == "invgamma":
            factors.append(InverseGammaFactor.from_shapes(*init))
        elif kind == "normal":
            mu, var = init
            factors.append(MvnFactor.from_moments(np.atleast_1d(mu), np.atleast_2d(var)))
        else:
            raise ConfigError(f"unknown factor kind {kind!r}")
    return ProductFamily(factors, blocks)


def build_model(cfg: dict, data) -> ModelSpec:
    """Model spec for the VBIL fit described by ``cfg``."""
    from .models import bernoulli, glmm, mixture, stable, sv

    model = cfg["model"]
    if model == "bernoulli":
        y = np.asarray(data)
        if not np.all((y == 0) | (y == 1)):
            raise ConfigError("bernoulli data must be 0/1")
        init = tuple(cfg.get("init", (5.0, 5.0)))
        spec = bernoulli.bernoulli_beta_spec(int(y.shape[0]), int(y.sum()), init)
        if float(cfg.get("sigma2", 0.0)) > 0:
            spec = spec.with_estimator(SyntheticNoiseEstimator(spec.exact_loglik, float(cfg["sigma2"])))
        return spec
    if model == "glmm":
        family = None
        if "init_mean" in cfg:
            family = _family(
                ["normal", "invgamma"],
                [(cfg["init_mean"], cfg["init_cov"]), cfg["init_tau2_shapes"]],
            )
        spec = glmm.glmm_logistic_spec(
            data,
            prior_scale=float(cfg.get("prior_scale", 50.0)),
            tau2_prior=tuple(cfg.get("tau2_prior", (1.0, 0.1))),
            sigma2=float(cfg.get("sigma2", 4.0)),
            pilot_n=int(cfg.get("pilot_n", 20)),
            family=family,
        )
        if "particles" in cfg:
            spec = spec.with_estimator(spec.estimator.with_policy(FixedN(int(cfg["particles"]))))
        return spec
    if model == "sv":
        family = sv.sv_initial_family(
            *cfg.get("init_mu", (0.0, 0.3)),
            tuple(cfg.get("init_tau_shapes", (95.0, 5.0))),
            tuple(cfg.get("init_sigma2_shapes", (11.0, 1.0))),
        )
        return sv.sv_spec(data, int(cfg.get("particles", 100)), family)
    if model == "stable":
        abc = abc_data(cfg, data)
        family = stable.abc_initial_family(abc, float(cfg.get("init_var", 0.01)))
        return stable.abc_alpha_stable_spec(abc, int(cfg.get("particles", 5)), family)
    if model == "mixture":
        return mixture.mixture_pilot_spec(np.asarray(data))
    raise ConfigError(f"unknown model {model!r}")


def abc_data(cfg: dict, y) -> AbcData:
    return AbcData.from_observations(y, float(cfg.get("kernel_var", 0.01)) * np.eye(4))


def baseline_estimator(cfg: dict, spec: ModelSpec, seed: int):
    """Estimator with a fixed particle budget for the PMMH baseline."""
    from .models import glmm

    model = cfg["model"]
    if model == "glmm":
        data = spec.estimator.data
        beta, _ = glmm.logistic_fit(data)
        pilot_theta = np.r_[beta, float(cfg.get("pmmh_pilot_tau2", 1.0))]
        counts = adapt_particles(
            data,
            pilot_theta,
            float(cfg.get("pmmh_sigma2", 1.0)),
            int(cfg.get("pmmh_pilot_n", 200)),
            np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,))),
        )
        return PanelISEstimator(data, PanelCountsPolicy(counts))
    if model == "sv":
        return spec.estimator.with_particles(int(cfg.get("pmmh_particles", 300)))
    if model == "stable":
        return spec.estimator.with_pseudo(int(cfg.get("pmmh_particles", 20)))
    return spec.estimator


def baseline_start(spec: ModelSpec, seed: int, n_draws: int = 4000) -> tuple[np.ndarray, np.ndarray]:
    """PMMH starting point and proposal covariance.

    The chain starts at the mean of the model's initial variational density;
    the proposal covariance is ``2.38^2 / d`` times the covariance of draws
    from that density in unconstrained coordinates.
    """
    u = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(8,))).random(
        (n_draws, spec.family.n_uniforms)
    )
    draws = spec.family.sample(u)
    free = spec.transform.to_unconstrained(draws)
    d = spec.dim
    cov = np.atleast_2d(np.cov(free, rowvar=False)) * 2.38**2 / d
    return spec.family.moments()[0], cov


def policy_override(cfg: dict, sigma2=None, particles=None) -> dict:
    cfg = dict(cfg)
    if sigma2 is not None:
        cfg["sigma2"] = float(sigma2)
    if particles is not None:
        cfg["particles"] = int(particles)
    return cfg

