"""Adaptive ergodic averages at a fixed grid point.

While the design parameter adapts, every sample ``X_k`` contributes
``psi(X_k) * p(lambda | X_k, theta_n)`` to a numerator and
``p(lambda | X_k, theta_n)`` to a denominator; their ratio estimates
``E[psi | lambda]``.  :class:`ErgodicTracker` plugs into :func:`awh.run` as an
observer and keeps, per target grid index, the accumulated weight of every
state, so any observable can be evaluated after the run in O(|X|) memory.  It
also runs the one-coordinate extension ``zeta`` of the recursion for each
registered observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .awh import ChainBlock
from .model import EnergyModel, conditional_matrix, gibbs_matrix, validate_rho


class ErgodicError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class Observable:
    name: str
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError(f"observable {self.name!r} must be a finite vector over states")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def bound(self) -> float:
        """``C = max_x |phi(x)|``."""
        return float(np.max(np.abs(self.values)))

    @property
    def range(self) -> float:
        return float(self.values.max() - self.values.min())

    @classmethod
    def coordinate(cls, n_states: int, name: str = "coordinate") -> "Observable":
        return cls(name, np.arange(n_states, dtype=float))

    @classmethod
    def indicator(cls, n_states: int, states, name: str = "indicator") -> "Observable":
        v = np.zeros(n_states)
        v[list(states)] = 1.0
        return cls(name, v)

    @classmethod
    def constant(cls, n_states: int, c: float, name: str = "constant") -> "Observable":
        return cls(name, np.full(n_states, float(c)))


def block_average_Phi(model: EnergyModel, block: ChainBlock, theta, target: int, phi) -> float:
    """``(1/N_I) sum_k phi(X_k) p(target | X_k, theta)`` over one block."""
    phi = np.asarray(phi, dtype=float)
    cond = conditional_matrix(model, theta)[:, target]
    xs = np.asarray(block.xs)
    return float(np.mean(phi[xs] * cond[xs]))


def update_zeta(zeta: float, phi_value: float, n: int, bound: float | None = None) -> float:
    """Running-mean step ``zeta + (Phi - zeta) / (n + 1)``, clamped to ``[-C, C]``."""
    z = zeta + (phi_value - zeta) / (n + 1)
    if bound is not None:
        z = min(max(z, -bound), bound)
    return z


def optimal_zeta(model: EnergyModel, rho, target: int, phi) -> float:
    """``zeta_* = rho(lambda) * sum_x phi(x) p(x | lambda)``."""
    rho = validate_rho(rho, model.n_lambda)
    phi = np.asarray(phi, dtype=float)
    return float(rho[target] * (phi @ gibbs_matrix(model)[:, target]))


def weighted_ratio(values, weights) -> float:
    """``sum v w / sum w``, shifted by ``v[0]`` so constant ``v`` is returned exactly."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if not total > 0:
        raise ErgodicError("empty_run", "no weight accumulated")
    ref = values[0]
    return float(ref + ((values - ref) @ weights) / total)


@dataclass
class ErgodicTracker:
    """Observer collecting the adaptive ergodic averages of a run.

    Parameters
    ----------
    n_states
        Size of the state space.
    targets
        Grid indices at which expectations are wanted.
    observables
        Observables whose extended coordinate ``zeta`` is tracked (one per
        ``(observable, target)`` pair).
    keep_history
        Retain every ``zeta_n`` and every block's ``Phi`` value.
    """

    n_states: int
    targets: tuple
    observables: tuple = ()
    keep_history: bool = False
    weights: dict = field(init=False)
    numerators: dict = field(init=False)
    denominators: dict = field(init=False)
    zetas: dict = field(init=False)
    history: dict = field(init=False)
    n_blocks: int = field(init=False, default=0)
    n_samples: int = field(init=False, default=0)

    def __post_init__(self):
        self.targets = tuple(int(t) for t in self.targets)
        self.observables = tuple(self.observables)
        self.weights = {t: np.zeros(self.n_states) for t in self.targets}
        keys = [(o.name, t) for o in self.observables for t in self.targets]
        self.numerators = {k: 0.0 for k in keys}
        self.denominators = {t: 0.0 for t in self.targets}
        self.zetas = {k: 0.0 for k in keys}
        self.history = {k: ([0.0], []) for k in keys} if self.keep_history else {}

    def observe(self, n: int, theta, block: ChainBlock, cond: np.ndarray) -> None:
        xs = np.asarray(block.xs)
        counts = np.bincount(xs, minlength=self.n_states).astype(float)
        m = len(xs)
        for t in self.targets:
            p = cond[xs, t]
            self.weights[t] += counts * cond[:, t]
            self.denominators[t] += float(p.sum())
            for o in self.observables:
                key = (o.name, t)
                terms = o.values[xs] * p
                self.numerators[key] += float(terms.sum())
                phi_val = float(terms.sum() / m)
                self.zetas[key] = update_zeta(self.zetas[key], phi_val, n, o.bound)
                if self.keep_history:
                    self.history[key][0].append(self.zetas[key])
                    self.history[key][1].append(phi_val)
        self.n_blocks += 1
        self.n_samples += m

    def expectation(self, target: int, psi) -> float:
        if self.n_samples == 0:
            raise ErgodicError("empty_run", "tracker has seen no samples")
        return weighted_ratio(psi, self.weights[int(target)])

    def hat(self, name: str, target: int) -> float:
        """``(1/(N N_I)) sum_n sum_k phi(X) p(target | X, theta_n)`` for a tracked observable."""
        if self.n_samples == 0:
            raise ErgodicError("empty_run", "tracker has seen no samples")
        return self.numerators[(name, int(target))] / self.n_samples

    def hat_one(self, target: int) -> float:
        return self.denominators[int(target)] / self.n_samples


def adaptive_expectation(tracker: ErgodicTracker, target: int, psi) -> float:
    """Ratio estimator of ``sum_x psi(x) p(x | lambda_target)`` from a completed run."""
    return tracker.expectation(target, psi)
