"""Derivative of the self-intersection local time of fractional Brownian motion.

Subpackages by layer: :mod:`math_kernels` and :mod:`fbm_model` (special
functions, covariances, kernels), :mod:`fbm_sim` (exact path sampling),
:mod:`dslt` (pathwise estimators), :mod:`quadrature` (exact moments and limit
constants), :mod:`experiments` (Monte Carlo harness) and :mod:`cli`.
"""
from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
    __version__ = "0.0.0"
