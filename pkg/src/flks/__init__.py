"""Flux-limited Keller-Segel models: kinetic, macroscopic and steady-state solvers."""

__version__ = "0.1.0"

from .errors import (ConfigError, DivergenceError, DomainError, FLKSError, ParameterError,  # noqa: E402
                     SchemeFailure, SearchFailure, StepSizeError, SymmetryError, UnsupportedConfiguration)
from .response import (FluxLimiter, ResponseFunction, ScalarChain, VelocitySpace,  # noqa: E402
                       build_scalar_chain, disk_example_limiter, limiter_from_response)

__all__ = ["__version__", "ConfigError", "DivergenceError", "DomainError", "FLKSError", "ParameterError",
           "SchemeFailure", "SearchFailure", "StepSizeError", "SymmetryError", "UnsupportedConfiguration",
           "FluxLimiter", "ResponseFunction", "ScalarChain", "VelocitySpace", "build_scalar_chain",
           "disk_example_limiter", "limiter_from_response"]
