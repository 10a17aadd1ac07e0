"""Energy models on finite state and parameter spaces, with exact summation.

Every quantity here is computed by enumerating the full state space, so this
module is the reference against which the sampling code is checked.  All
normalizations go through a single max-subtraction in log space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp


class ModelError(ValueError):
    """Raised for malformed models, grids or target distributions."""


@dataclass(frozen=True)
class StateSpace:
    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise ModelError(f"state space needs at least 2 states, got {self.size}")


@dataclass(frozen=True)
class ParameterGrid:
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 2:
            raise ModelError("parameter grid needs at least 2 points")
        if len(set(self.labels)) != len(self.labels):
            raise ModelError("parameter grid labels must be unique")

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class EnergyModel:
    """Gibbs family defined by a dense energy table ``energy[x, j]`` (kT units).

    Parameters
    ----------
    space, grid
        The finite state space and parameter grid.
    energy
        Array of shape ``(space.size, grid.size)``.  Stored read-only.
    name
        Free-form identifier used in reports.
    """

    space: StateSpace
    grid: ParameterGrid
    energy: np.ndarray = field(repr=False)
    name: str = "model"

    def __post_init__(self):
        e = np.array(self.energy, dtype=float)
        if e.shape != (self.space.size, self.grid.size):
            raise ModelError(
                f"energy table has shape {e.shape}, expected "
                f"{(self.space.size, self.grid.size)}"
            )
        if not np.all(np.isfinite(e)):
            raise ModelError("energies must be finite")
        e.setflags(write=False)
        object.__setattr__(self, "energy", e)

    @classmethod
    def from_table(cls, table, labels: Sequence | None = None, name: str = "table") -> "EnergyModel":
        table = np.asarray(table, dtype=float)
        if table.ndim != 2:
            raise ModelError("energy table must be 2-dimensional")
        if labels is None:
            labels = range(table.shape[1])
        return cls(StateSpace(table.shape[0]), ParameterGrid(tuple(labels)), table, name)

    @classmethod
    def from_function(
        cls,
        n_states: int,
        labels: Sequence,
        energy: Callable[[int, object], float],
        name: str = "function",
    ) -> "EnergyModel":
        table = [[energy(x, lam) for lam in labels] for x in range(n_states)]
        return cls(StateSpace(n_states), ParameterGrid(tuple(labels)), np.array(table), name)

    @property
    def n_states(self) -> int:
        return self.space.size

    @property
    def n_lambda(self) -> int:
        return self.grid.size

    def to_csv(self, path) -> None:
        """Write the table as ``state_index,grid_index,energy`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state_index", "grid_index", "energy"])
            for x in range(self.n_states):
                for j in range(self.n_lambda):
                    w.writerow([x, j, format_float(self.energy[x, j])])

    @classmethod
    def from_csv(cls, path, labels: Sequence | None = None, name: str | None = None) -> "EnergyModel":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"state_index", "grid_index", "energy"} - set(reader.fieldnames or ())
            if missing:
                raise ModelError(f"{path}: missing columns {sorted(missing)}")
            for r in reader:
                rows.append((int(r["state_index"]), int(r["grid_index"]), float(r["energy"])))
        if not rows:
            raise ModelError(f"{path}: empty energy table")
        nx = max(r[0] for r in rows) + 1
        nl = max(r[1] for r in rows) + 1
        table = np.full((nx, nl), np.nan)
        for x, j, e in rows:
            table[x, j] = e
        if np.isnan(table).any():
            raise ModelError(f"{path}: energy table is not dense")
        return cls.from_table(table, labels, name or Path(path).stem)


def format_float(v: float) -> str:
    """17 significant digits: round-trips any double."""
    return format(float(v), ".17g")


def validate_rho(rho, n: int | None = None) -> np.ndarray:
    """Check that ``rho`` is a strictly positive probability vector."""
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 1 or (n is not None and rho.shape[0] != n):
        raise ModelError(f"target distribution must have length {n}")
    if not np.all(rho > 0):
        raise ModelError("target distribution must be strictly positive")
    if abs(rho.sum() - 1.0) > 1e-12:
        raise ModelError(f"target distribution sums to {rho.sum()!r}, not 1")
    return rho


def uniform_rho(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _normalize_logs(a: np.ndarray, axis=None) -> np.ndarray:
    return np.exp(a - logsumexp(a, axis=axis, keepdims=True))


# --------------------------------------------------------------------------
# exact quantities
# --------------------------------------------------------------------------


def free_energies(model: EnergyModel) -> np.ndarray:
    """``F(lambda_j) = -log sum_x exp(-E(x, lambda_j))`` for every grid point."""
    return -logsumexp(-model.energy, axis=0)


def free_energy_exact(model: EnergyModel, j: int) -> float:
    return float(-logsumexp(-model.energy[:, j]))


def gibbs_matrix(model: EnergyModel) -> np.ndarray:
    """Column ``j`` is the Gibbs density ``p(x | lambda_j)``."""
    return _normalize_logs(-model.energy, axis=0)


def gibbs_density(model: EnergyModel, x: int, j: int) -> float:
    return float(np.exp(-model.energy[x, j] + free_energy_exact(model, j)))


def marginal_lambda(model: EnergyModel, theta, rho=None) -> np.ndarray:
    """Parameter marginal ``p(lambda | theta) ∝ exp(theta - F)``.

    ``rho`` is accepted for call-site symmetry and ignored.
    """
    theta = np.asarray(theta, dtype=float)
    return _normalize_logs(theta - free_energies(model))


def conditional_matrix(model: EnergyModel, theta) -> np.ndarray:
    """Row ``x`` is ``p(lambda | x, theta)`` over the grid."""
    theta = np.asarray(theta, dtype=float)
    return _normalize_logs(-model.energy + theta[None, :], axis=1)


def conditional_lambda(model: EnergyModel, x: int, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return _normalize_logs(-model.energy[x] + theta)


def joint_density(model: EnergyModel, theta) -> np.ndarray:
    """``p(x, lambda | theta) ∝ exp(-E(x, lambda) + theta(lambda))``."""
    theta = np.asarray(theta, dtype=float)
    return _normalize_logs(-model.energy + theta[None, :])


def state_marginal(model: EnergyModel, theta) -> np.ndarray:
    """``p(x | theta)``: the joint summed over the grid."""
    theta = np.asarray(theta, dtype=float)
    return _normalize_logs(logsumexp(-model.energy + theta[None, :], axis=1))


def optimal_theta(model: EnergyModel, rho) -> np.ndarray:
    """The anchored optimum ``F + log rho`` (additive constant fixed to 0)."""
    rho = validate_rho(rho, model.n_lambda)
    return free_energies(model) + np.log(rho)


def exact_expectation(model: EnergyModel, psi, j: int) -> float:
    """``sum_x psi(x) p(x | lambda_j)``."""
    psi = np.asarray(psi, dtype=float)
    return float(psi @ gibbs_matrix(model)[:, j])
