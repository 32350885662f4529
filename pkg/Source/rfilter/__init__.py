"""
Robust nonlinear filtering over rough path lifts of the observation.
"""
__version__ = "0.1.0"

from .config import ConfigError, ExperimentConfig
from .flow import FlowError, FlowField, TransformedCoefficients, VectorFields
from .models import MODELS, TEST_FUNCTIONS, load_model, load_test_function
from .oracles import (
    ParticleEnsemble, example_closed_form, particle_filter_estimate,
    simulate_observation, uncorrelated_robust_formula,
)
from .robust_filter import (
    TestFunction, ThetaEstimate, WeightOverflowError, continuity_probe, evaluate_theta,
)
from .rough_path import (
    EnhancedPath, GridMismatchError, HolderSeminorms, PathError,
    geodesic_interpolate, holder_distance, holder_seminorms, lift_piecewise_linear,
)
from .rough_sde import FilterModel, RoughDriftSystem, SamplePath, build_filter_system, solve_rough_sde


__all__ = [
    "ConfigError", "ExperimentConfig",
    "FlowError", "FlowField", "TransformedCoefficients", "VectorFields",
    "MODELS", "TEST_FUNCTIONS", "load_model", "load_test_function",
    "ParticleEnsemble", "example_closed_form", "particle_filter_estimate",
    "simulate_observation", "uncorrelated_robust_formula",
    "TestFunction", "ThetaEstimate", "WeightOverflowError", "continuity_probe", "evaluate_theta",
    "EnhancedPath", "GridMismatchError", "HolderSeminorms", "PathError",
    "geodesic_interpolate", "holder_distance", "holder_seminorms", "lift_piecewise_linear",
    "FilterModel", "RoughDriftSystem", "SamplePath", "build_filter_system", "solve_rough_sde",
]
