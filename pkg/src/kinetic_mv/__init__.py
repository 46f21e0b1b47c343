"""Simulation and estimation for kinetic McKean-Vlasov particle systems.

Particles carry a diffusive position X and a noise-free velocity Y. The
package simulates the N-particle system, estimates the mean-field density
with a Goldenshluger-Lepski bandwidth choice, recovers FitzHugh-Nagumo
parameters from moments and checks concentration of empirical functionals.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .ensemble import Ensemble
from .errors import (BlowUpError, ConfigError, DegenerateDensityError, InsufficientDataError,
                     InvalidModelError, KineticMVError, SingularSystemError, UnsupportedDimensionError)
from .models import (FHN_DEFAULT_INITIAL, FHN_REFERENCE, KOU_REFERENCE, DriftSpec, FhnTheta, GaussianLaw,
                     KineticOuParams, Mixture, PointMass, UniformLaw, density_at, fhn_drift, kou_drift,
                     lyapunov_moments, sample_initial)
from .simulator import SimConfig, TrajectoryRecord, simulate, step

__all__ = [
    "__version__", "BACKEND", "Ensemble",
    "BlowUpError", "ConfigError", "DegenerateDensityError", "InsufficientDataError", "InvalidModelError",
    "KineticMVError", "SingularSystemError", "UnsupportedDimensionError",
    "FHN_DEFAULT_INITIAL", "FHN_REFERENCE", "KOU_REFERENCE", "DriftSpec", "FhnTheta", "GaussianLaw",
    "KineticOuParams", "Mixture", "PointMass", "UniformLaw", "density_at", "fhn_drift", "kou_drift",
    "lyapunov_moments", "sample_initial", "SimConfig", "TrajectoryRecord", "simulate", "step",
]
