"""Accelerated weight histogram sampling on finite state and parameter spaces.

Library modules:

* :mod:`model` energies, Gibbs family, exact free energies
* :mod:`kernels` Metropolis kernels and their invariance checks
* :mod:`fixtures` bundled double-well, Ising chain and tiny models
* :mod:`awh` the adaptive sampler itself
* :mod:`ergodic` adaptive ergodic averages
* :mod:`diagnostics` mean field, Lyapunov functions and exact checks
* :mod:`ode` projected Euler for the limit ODE
"""

from .awh import AwhConfig, AwhTrajectory, HyperRectangle, default_box, free_energy_table, run
from .model import EnergyModel, free_energies, optimal_theta

__all__ = [
    "AwhConfig",
    "AwhTrajectory",
    "EnergyModel",
    "HyperRectangle",
    "default_box",
    "free_energies",
    "free_energy_table",
    "optimal_theta",
    "run",
]
