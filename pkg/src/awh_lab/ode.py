"""Projected limit ODE ``theta' = gbar(theta) + z`` on a hyper-rectangle.

Integrated with projected explicit Euler: ``theta <- clamp(theta + h gbar(theta))``.
The clamp displacement divided by ``h`` is the reflection ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .awh import AwhTrajectory, HyperRectangle
from .diagnostics import V_from_marginal
from .model import EnergyModel, free_energies, marginal_lambda, validate_rho


class OdeError(RuntimeError):
    def __init__(self, code: str, message: str, index: int | None = None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.index = index


@dataclass
class OdeConfig:
    theta0: np.ndarray
    box: HyperRectangle
    h_step: float = 0.01
    t_end: float = 200.0

    def __post_init__(self):
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if not self.h_step > 0 or not self.t_end > 0:
            raise ValueError("h_step and t_end must be positive")
        if not self.box.contains(self.theta0):
            raise ValueError("theta0 must lie in the box")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.h_step))


@dataclass
class OdeTrajectory:
    t: np.ndarray
    thetas: np.ndarray
    V: np.ndarray
    reflections: np.ndarray = field(repr=False)

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]

    def clamped_coords(self) -> np.ndarray:
        return np.count_nonzero(self.reflections, axis=1)


@dataclass(frozen=True)
class DescentReport:
    passed: bool
    violations: tuple
    max_increase: float

    @property
    def first_violation(self) -> int | None:
        return self.violations[0] if self.violations else None


def integrate(model: EnergyModel, rho, config: OdeConfig, drift=None) -> OdeTrajectory:
    """Projected Euler from ``config.theta0`` to ``config.t_end``.

    ``drift`` replaces the mean field when given (a function of ``theta``);
    it exists for negative controls.
    """
    rho = validate_rho(rho, model.n_lambda)
    free = free_energies(model)
    if drift is None:
        def drift(theta):
            return 1.0 - softmax(theta - free) / rho
    n = config.n_steps
    h = config.h_step
    thetas = np.empty((n + 1, model.n_lambda))
    refl = np.zeros((n, model.n_lambda))
    vs = np.empty(n + 1)
    theta = config.theta0.copy()
    thetas[0] = theta
    vs[0] = V_from_marginal(softmax(theta - free), rho)
    for i in range(n):
        theta, disp = config.box.clamp(theta + h * drift(theta))
        thetas[i + 1] = theta
        refl[i] = disp / h
        vs[i + 1] = V_from_marginal(softmax(theta - free), rho)
    return OdeTrajectory(np.arange(n + 1) * h, thetas, vs, refl)


def check_monotone_descent(traj: OdeTrajectory, slack: float = 1e-10,
                           strict: bool = False) -> DescentReport:
    """Flag steps where ``V`` rises by more than ``slack * (1 + V)``.

    With ``strict=True`` the first violation raises ``OdeError("descent_violation")``.
    """
    v = traj.V
    rise = v[1:] - v[:-1]
    bad = np.flatnonzero(rise > slack * (1.0 + v[:-1])) + 1
    report = DescentReport(bad.size == 0, tuple(int(i) for i in bad),
                           float(rise.max()) if rise.size else 0.0)
    if strict and not report.passed:
        raise OdeError("descent_violation", f"V increased at step {bad[0]}", int(bad[0]))
    return report


def step_halving_ratio(model: EnergyModel, rho, theta0, box: HyperRectangle,
                       h_step: float = 0.01, t_probe: float = 1.0) -> float:
    """``|theta_h - theta_{h/2}| / |theta_{h/2} - theta_{h/4}|`` at ``t_probe``.

    About 2 for a first-order scheme.
    """
    ends = []
    for k in (1, 2, 4):
        cfg = OdeConfig(theta0, box, h_step / k, t_probe)
        ends.append(integrate(model, rho, cfg).final_theta)
    num = np.max(np.abs(ends[0] - ends[1]))
    den = np.max(np.abs(ends[1] - ends[2]))
    return float(num / den) if den > 0 else float("inf")


@dataclass
class Overlay:
    t: np.ndarray
    V_sa: np.ndarray
    V_ode: np.ndarray


def sa_time(n_iter: int) -> np.ndarray:
    """``t_n = sum_{i<n} 1/(i+1)`` for ``n = 0..n_iter``."""
    return np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, n_iter + 1))])


def sa_vs_ode_overlay(model: EnergyModel, rho, awh_traj: AwhTrajectory,
                      ode_traj: OdeTrajectory) -> Overlay:
    """Pair the iterates with the ODE on the step-size time scale.

    The ODE value at each ``t_n`` is taken from the nearest earlier grid time;
    past the end of the ODE run the last value is held.
    """
    if awh_traj.thetas.shape[1] != ode_traj.thetas.shape[1]:
        raise OdeError("dimension_mismatch",
                       f"{awh_traj.thetas.shape[1]} vs {ode_traj.thetas.shape[1]} grid points")
    t = sa_time(awh_traj.n_iterations)
    v_sa = np.array([V_from_marginal(marginal_lambda(model, th), rho) for th in awh_traj.thetas])
    idx = np.clip(np.searchsorted(ode_traj.t, t, side="right") - 1, 0, len(ode_traj.t) - 1)
    return Overlay(t, v_sa, ode_traj.V[idx])
