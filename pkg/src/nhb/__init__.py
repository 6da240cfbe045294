"""Thermostatted Langevin dynamics: sampling, drift certificates, diagnostics and controls."""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractError, DomainError, InfeasibleTargetError, PotentialError,  # noqa: E402
                     StencilError, StepError, UnreachableError)
from .model import (Potential, PotentialSpec, State, SystemParams, hamiltonian, kinetic_energy,  # noqa: E402
                    make_potential, normality_spotcheck)
from .specfun import F_unit, beta_star, dawson, dawson_max  # noqa: E402

__all__ = ["__version__", "ConfigError", "ContractError", "DomainError", "InfeasibleTargetError", "PotentialError",
           "StencilError", "StepError", "UnreachableError", "Potential", "PotentialSpec", "State", "SystemParams",
           "hamiltonian", "kinetic_energy", "make_potential", "normality_spotcheck", "F_unit", "beta_star", "dawson",
           "dawson_max"]
