"""Numerical laboratory for boundary-driven anharmonic oscillator lattices.

The package implements the closed stationary correlation equations of the
two-phonon closure next to a direct stochastic simulation of the microscopic
dynamics, with the structural checks (conservation laws, soft modes,
generalized stationary families, transport matrix, temperature profiles)
exercised at desk scale.
"""

from .lattice import ConfigError, Grid, LatticeSpec, dispersion, mass_gap_check
from .fields import CorrelationField
from .collision import KernelConfig, default_kernel_config, gibbs_state
from .sde import PhaseState, SimConfig, run_simulation

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Grid", "LatticeSpec", "dispersion", "mass_gap_check",
    "CorrelationField", "KernelConfig", "default_kernel_config", "gibbs_state",
    "PhaseState", "SimConfig", "run_simulation", "__version__",
]
