"""Similarity-based Bayesian mixture-of-experts regression.

Gaussian experts gated by similarities to the training inputs under a learned
Mahalanobis metric, fitted with mean-field variational Bayes; predictive
densities are Gaussian mixtures obtained by Monte Carlo marginalization of the
variational posterior.
"""

from .inference import (ElboRecord, ElboTrace, e_step, elbo, elbo_parts, expected_log_normal,
                        expert_weights, fit, gate_objective_and_gradient,
                        greedy_bounded_simplex_min, m_step_experts, m_step_gate_closed,
                        m_step_gate_stochastic, update_s, update_t)
from .mathcore import NIWParams
from .model import (Dataset, FitConfig, Hyperparameters, Linearization, Responsibilities,
                    VariationalState, default_hyperparameters, init_state)
from .predict import (GaussianMixture, NWConfig, fit_nw_config, mixture_logpdf,
                      mixture_logpdf_many, mixture_sample, nadaraya_watson,
                      posterior_predictive)
from .synthdata import SynthSpec, gen_1d, gen_2d, true_conditional_samples

__all__ = [
    "Dataset", "ElboRecord", "ElboTrace", "FitConfig", "GaussianMixture",
    "Hyperparameters", "Linearization", "NIWParams", "NWConfig", "Responsibilities",
    "SynthSpec", "VariationalState", "default_hyperparameters", "e_step", "elbo",
    "elbo_parts", "expected_log_normal", "expert_weights", "fit", "fit_nw_config",
    "gate_objective_and_gradient", "gen_1d", "gen_2d", "greedy_bounded_simplex_min",
    "init_state", "m_step_experts", "m_step_gate_closed", "m_step_gate_stochastic",
    "mixture_logpdf", "mixture_logpdf_many", "mixture_sample", "nadaraya_watson",
    "posterior_predictive", "true_conditional_samples", "update_s", "update_t",
]

__version__ = "0.1.0"
