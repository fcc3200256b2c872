"""Likelihood-free Bayesian inference: adaptive posterior matching under a
trimmed marginally-augmented sliced Wasserstein distance, with ABC baselines."""

from ._core import (
    empirical_quantile,
    evaluate,
    exact_w1,
    list_models,
    mmd_gaussian,
    msw_distance,
    observed_xstar,
    prior_sample,
    rejection_abc,
    run_abi,
    simulate,
    trimmed_w1d,
    wasserstein_abc,
)

__all__ = [
    "empirical_quantile",
    "evaluate",
    "exact_w1",
    "list_models",
    "mmd_gaussian",
    "msw_distance",
    "observed_xstar",
    "prior_sample",
    "rejection_abc",
    "run_abi",
    "simulate",
    "trimmed_w1d",
    "wasserstein_abc",
]

__version__ = "0.1.0"
