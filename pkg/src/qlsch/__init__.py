"""Numerical harmonic analysis for small-data quasilinear Schrödinger flows
on periodic grids: Littlewood-Paley bands, l^1 dyadic function spaces, a
Crank-Nicolson propagator, the Picard iteration and an estimate lab."""

from . import cli, dyadic_spaces, errors, estimate_lab, expr_dsl, field_core, linear_prop, lp_multipliers, quasilinear
from .dyadic_spaces import FrequencyEnvelope, NormTag, frequency_envelope, l1_sobolev_norm, norm
from .errors import NumericalError, QlschError, ValidationError
from .expr_dsl import MetricSpec, NonlinearitySpec, metric_preset, nonlinearity_preset, parse, unparse
from .field_core import GridSpec, SpaceTimeField, SpatialField, read_field, write_field
from .linear_prop import LinearProblem, PropagatorConfig, free_evolution, solve_linear
from .quasilinear import IterationConfig, QuasilinearProblem, initial_data, iterate

__version__ = "0.1.0"

__all__ = [
    "cli",
    "dyadic_spaces",
    "errors",
    "estimate_lab",
    "expr_dsl",
    "field_core",
    "linear_prop",
    "lp_multipliers",
    "quasilinear",
    "FrequencyEnvelope",
    "NormTag",
    "frequency_envelope",
    "l1_sobolev_norm",
    "norm",
    "NumericalError",
    "QlschError",
    "ValidationError",
    "MetricSpec",
    "NonlinearitySpec",
    "metric_preset",
    "nonlinearity_preset",
    "parse",
    "unparse",
    "GridSpec",
    "SpaceTimeField",
    "SpatialField",
    "read_field",
    "write_field",
    "LinearProblem",
    "PropagatorConfig",
    "free_evolution",
    "solve_linear",
    "IterationConfig",
    "QuasilinearProblem",
    "initial_data",
    "iterate",
]
