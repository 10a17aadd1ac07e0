"""Bundled models small enough for exact summation.

``double-well-32``  32-site lattice, ``E(x, lambda) = lambda * E0(x)`` with a
                    tilted two-minimum profile, lambda on an 8-point ladder.
``ising-chain-L``   periodic Ising chain with ``2**L`` configurations,
                    lambda = inverse temperature.
``tiny``            3 states, 2 grid points; sized for path enumeration.
"""

from __future__ import annotations

import numpy as np

from .kernels import (
    MetropolisKernel,
    complete_neighbors,
    lattice_neighbors,
    spin_flip_neighbors,
)
from .model import EnergyModel, ModelError, ParameterGrid, StateSpace

DOUBLE_WELL_LADDER = tuple(np.linspace(0.2, 2.0, 8).tolist())
ISING_LADDER = tuple(np.linspace(0.1, 1.0, 8).tolist())

TINY_ENERGY = np.array([
    [0.0, 0.7],
    [1.1, -0.4],
    [0.5, 1.3],
])


def double_well_profile(n: int = 32, height: float = 2.0, tilt: float = 0.5,
                        width: float = 3.0) -> np.ndarray:
    """Quartic double well on ``n`` sites, minima ``width`` sites either side of the centre."""
    s = (np.arange(n) - (n - 1) / 2) / width
    return height * (s**2 - 1.0) ** 2 + tilt * s


def double_well(n: int = 32, ladder=DOUBLE_WELL_LADDER, height: float = 2.0,
                tilt: float = 0.5, width: float = 3.0) -> EnergyModel:
    e0 = double_well_profile(n, height, tilt, width)
    lam = np.asarray(ladder, dtype=float)
    return EnergyModel(StateSpace(n), ParameterGrid(tuple(ladder)), np.outer(e0, lam),
                       name=f"double-well-{n}")


def ising_energies(n_spins: int, coupling: float = 1.0, field: float = 0.0) -> np.ndarray:
    """Dimensionless chain energy per configuration (before the beta factor)."""
    if not 2 <= n_spins <= 12:
        raise ModelError("ising chain length must be in 2..12")
    x = np.arange(1 << n_spins)
    spins = 2 * ((x[:, None] >> np.arange(n_spins)) & 1) - 1
    bonds = (spins * np.roll(spins, -1, axis=1)).sum(axis=1)
    return -coupling * bonds - field * spins.sum(axis=1)


def ising_chain(n_spins: int, ladder=ISING_LADDER, coupling: float = 1.0,
                field: float = 0.0) -> EnergyModel:
    e0 = ising_energies(n_spins, coupling, field)
    beta = np.asarray(ladder, dtype=float)
    return EnergyModel(StateSpace(1 << n_spins), ParameterGrid(tuple(ladder)),
                       np.outer(e0, beta), name=f"ising-chain-{n_spins}")


def tiny() -> EnergyModel:
    return EnergyModel.from_table(TINY_ENERGY, labels=(0, 1), name="tiny")


def default_neighbors(model: EnergyModel) -> np.ndarray:
    """The bundled proposal for a model, chosen from its name."""
    if model.name.startswith("ising-chain-"):
        return spin_flip_neighbors(int(model.n_states).bit_length() - 1)
    if model.name.startswith("double-well-"):
        return lattice_neighbors(model.n_states)
    return complete_neighbors(model.n_states)


def default_kernel(model: EnergyModel) -> MetropolisKernel:
    return MetropolisKernel(model, default_neighbors(model))


def build(name: str, **params) -> EnergyModel:
    """Look up a fixture by name, e.g. ``"double-well-32"`` or ``"ising-chain-6"``."""
    if name == "tiny":
        return tiny()
    if name.startswith("double-well-"):
        return double_well(int(name.rsplit("-", 1)[1]), **params)
    if name.startswith("ising-chain-"):
        return ising_chain(int(name.rsplit("-", 1)[1]), **params)
    raise ModelError(f"unknown fixture {name!r}")
