"""Sphere-average Gaussian field in R^4: covariance structure, exact sampling,
Liouville cutoff measures, and thick-point multifractal estimators."""

from . import covariance, errors, liouville, multifractal, sampler, specfun

__all__ = [
    "covariance",
    "errors",
    "liouville",
    "multifractal",
    "sampler",
    "specfun",
]

__version__ = "0.1.0"
