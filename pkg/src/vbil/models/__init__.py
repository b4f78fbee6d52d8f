"""Model definitions for the worked examples."""

from .base import ModelSpec, Transform
from .bernoulli import bernoulli_beta_spec, bernoulli_simulate, kl_beta
from .glmm import glmm_logistic_spec, glmm_simulate, logistic_fit, six_city_like_simulate
from .mixture import mixture_gibbs, mixture_pilot_spec, mixture_refine_spec, mixture_simulate
from .stable import abc_alpha_stable_spec, tilde_to_stable_rows
from .sv import sv_fixture_data, sv_simulate, sv_spec, tau_to_phi

# transforms from sampled theta to the reported parameters, by model name
REPORTS = {"sv": tau_to_phi, "stable": tilde_to_stable_rows}

__all__ = [
    "ModelSpec",
    "REPORTS",
    "Transform",
    "abc_alpha_stable_spec",
    "bernoulli_beta_spec",
    "bernoulli_simulate",
    "glmm_logistic_spec",
    "glmm_simulate",
    "kl_beta",
    "logistic_fit",
    "mixture_gibbs",
    "mixture_pilot_spec",
    "mixture_refine_spec",
    "mixture_simulate",
    "six_city_like_simulate",
    "sv_fixture_data",
    "sv_simulate",
    "sv_spec",
    "tau_to_phi",
    "tilde_to_stable_rows",
]
