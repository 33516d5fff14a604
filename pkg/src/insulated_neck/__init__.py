"""Numerical laboratory for gradient blow-up in the insulated conductivity problem.

Two convex insulating inclusions a distance ``eps`` apart squeeze the field
into a thin neck; ``|grad u|`` grows like ``eps**(-(1 - gamma_star(n)) / 2)``.
The package evaluates the auxiliary-function inequalities behind that bound
and solves a mode-reduced PDE in the neck to measure the exponent.
"""

from .errors import ConfigError, DomainError, SolverError
from .geometry import NeckGeometry
from .certificate import AuxParams, blow_up_exponent, gamma_star

__all__ = [
    "AuxParams",
    "ConfigError",
    "DomainError",
    "NeckGeometry",
    "SolverError",
    "blow_up_exponent",
    "gamma_star",
]

__version__ = "0.1.0"
