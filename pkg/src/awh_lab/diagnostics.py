"""Stochastic-approximation diagnostics for the AWH recursion.

The recursion reads ``theta_{n+1} = theta_n + eps_n (h(theta_n, xi_{n+1}) + beta_n + Z_n)``
with ``h(theta, xi)(lambda) = 1 - sum_k p(lambda | X_k, theta) / (N_I rho(lambda))``.
Its mean field is ``gbar(theta) = 1 - p(. | theta) / rho`` and
``V(theta) = sum rho gbar**2`` is a Lyapunov function for the limit ODE.

The functions here evaluate those objects exactly (by summation over the
finite spaces) and provide the independent checks used by the test-suite and
the ``diagnose`` command: path enumeration of ``E[h]``, the one-block
transition law, finite-difference gradients, and the prefix decomposition of
``(sum x p)**2 - sum x**2 p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .awh import ChainBlock, HyperRectangle
from .model import (
    EnergyModel,
    conditional_matrix,
    free_energies,
    gibbs_matrix,
    joint_density,
    marginal_lambda,
)
from .ergodic import optimal_zeta

MAX_STATES = 6
MAX_GRID = 3
MAX_INNER = 3


class DiagnosticsError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class LyapunovValue:
    v: float
    grad: np.ndarray


# --------------------------------------------------------------------------
# h, g and the mean field
# --------------------------------------------------------------------------


def h_of(model: EnergyModel, theta, block: ChainBlock, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    cond = conditional_matrix(model, theta)
    xs = np.asarray(block.xs)
    return 1.0 - cond[xs].sum(axis=0) / (len(xs) * rho)


def extended_h(model: EnergyModel, theta, zeta: float, block: ChainBlock, rho, phi,
               target: int) -> np.ndarray:
    """``h`` with the extra coordinate ``Phi(xi, theta) - zeta`` appended."""
    phi = np.asarray(phi, dtype=float)
    cond = conditional_matrix(model, theta)
    xs = np.asarray(block.xs)
    head = 1.0 - cond[xs].sum(axis=0) / (len(xs) * np.asarray(rho, dtype=float))
    big_phi = float(np.mean(phi[xs] * cond[xs, target]))
    return np.append(head, big_phi - zeta)


def gbar_of(model: EnergyModel, theta, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    return 1.0 - marginal_lambda(model, theta) / rho


def gbar_extended(model: EnergyModel, theta, zeta: float, rho, phi, target: int) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    zeta_theta = float(phi @ joint_density(model, theta)[:, target])
    return np.append(gbar_of(model, theta, rho), zeta_theta - zeta)


def _check_small(model: EnergyModel, n_inner: int) -> None:
    if model.n_states > MAX_STATES or model.n_lambda > MAX_GRID or n_inner > MAX_INNER:
        raise DiagnosticsError(
            "instance_too_large",
            f"enumeration needs |X|<={MAX_STATES}, |L|<={MAX_GRID}, N_I<={MAX_INNER}; "
            f"got {model.n_states}, {model.n_lambda}, {n_inner}",
        )


def _kernel_stack(model: EnergyModel, kernel) -> np.ndarray:
    return np.stack([kernel.matrix(j) for j in range(model.n_lambda)])


def bruteforce_mean_h(model: EnergyModel, kernel, theta, rho, n_inner: int) -> np.ndarray:
    """``E[h(theta, xi_1)]`` by summing over every path ``(x_0, l_0, ..., x_N, l_N)``.

    The initial pair is drawn from ``p(x_0 | l_0) p(l_0 | theta)``.
    """
    _check_small(model, n_inner)
    rho = np.asarray(rho, dtype=float)
    q = _kernel_stack(model, kernel)
    cond = conditional_matrix(model, theta)
    gibbs = gibbs_matrix(model)
    marg = marginal_lambda(model, theta)
    nx, nl = model.n_states, model.n_lambda
    paths = np.array(list(product(range(nx), range(nl), repeat=n_inner + 1)), dtype=np.int64)
    xs, ls = paths[:, 0::2], paths[:, 1::2]
    weight = gibbs[xs[:, 0], ls[:, 0]] * marg[ls[:, 0]]
    acc = np.zeros((len(paths), nl))
    for k in range(1, n_inner + 1):
        weight = weight * q[ls[:, k - 1], xs[:, k - 1], xs[:, k]] * cond[xs[:, k], ls[:, k]]
        acc += cond[xs[:, k]]
    h = 1.0 - acc / (n_inner * rho)
    return weight @ h


def single_step_mean_h(model: EnergyModel, kernel, theta, rho) -> np.ndarray:
    """The one-step sum: ``sum_{x1} (1 - p(.|x1)/rho) sum_{x0,l0} q(x0,x1|l0) p(x0|l0) p(l0|theta)``."""
    rho = np.asarray(rho, dtype=float)
    q = _kernel_stack(model, kernel)
    gibbs = gibbs_matrix(model)
    marg = marginal_lambda(model, theta)
    law_x1 = np.einsum("lxy,xl,l->y", q, gibbs, marg)
    return law_x1 @ (1.0 - conditional_matrix(model, theta) / rho)


def transition_paths(model: EnergyModel, kernel, theta, block: ChainBlock):
    """Every next block ``eta`` with its probability given the previous block.

    The first move starts from the previous block's last state and uses the
    previous block's last grid index; thereafter each move uses the grid index
    sampled in the step before.  Returns ``(xs, ls, prob)`` arrays.
    """
    n_inner = len(block)
    _check_small(model, n_inner)
    q = _kernel_stack(model, kernel)
    cond = conditional_matrix(model, theta)
    nx, nl = model.n_states, model.n_lambda
    paths = np.array(list(product(range(nx), range(nl), repeat=n_inner)), dtype=np.int64)
    xs, ls = paths[:, 0::2], paths[:, 1::2]
    prev_x = np.full(len(paths), int(block.xs[-1]))
    prev_l = np.full(len(paths), int(block.lambdas[-1]))
    prob = np.ones(len(paths))
    for k in range(n_inner):
        prob = prob * q[prev_l, prev_x, xs[:, k]] * cond[xs[:, k], ls[:, k]]
        prev_x, prev_l = xs[:, k], ls[:, k]
    return xs, ls, prob


def g_of(model: EnergyModel, kernel, theta, block: ChainBlock, rho,
         method: str = "enumerate") -> np.ndarray:
    """``g(theta, xi) = sum_eta h(theta, eta) p(xi, eta | theta)``.

    ``method="enumerate"`` sums over all next blocks; ``method="recursion"``
    propagates the law of ``(X_k, Lambda_k)`` forward and uses that ``h`` is an
    average over ``k``.
    """
    rho = np.asarray(rho, dtype=float)
    cond = conditional_matrix(model, theta)
    n_inner = len(block)
    if method == "enumerate":
        xs, _, prob = transition_paths(model, kernel, theta, block)
        h = 1.0 - cond[xs].sum(axis=1) / (n_inner * rho)
        return prob @ h
    if method != "recursion":
        raise ValueError(f"unknown method {method!r}")
    _check_small(model, n_inner)
    q = _kernel_stack(model, kernel)
    law = np.zeros((model.n_states, model.n_lambda))
    law[int(block.xs[-1]), int(block.lambdas[-1])] = 1.0
    mean_cond = np.zeros(model.n_lambda)
    for _ in range(n_inner):
        law_x = np.einsum("xl,lxy->y", law, q)
        mean_cond += law_x @ cond
        law = law_x[:, None] * cond
    return 1.0 - mean_cond / (n_inner * rho)


def delta_M(model: EnergyModel, kernel, theta, block_next: ChainBlock,
            block_current: ChainBlock, rho) -> np.ndarray:
    """Martingale increment ``h(theta, xi_{n+1}) - g(theta, xi_n)``."""
    return h_of(model, theta, block_next, rho) - g_of(model, kernel, theta, block_current, rho)


# --------------------------------------------------------------------------
# Lyapunov functions
# --------------------------------------------------------------------------


def _v_and_grad(p: np.ndarray, rho: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    g = 1.0 - p / rho
    v = float(np.sum(rho * g * g))
    grad = 2.0 * float(g @ p) * p - 2.0 * g * p
    return v, grad, g


def lyapunov_V(model: EnergyModel, theta, rho) -> LyapunovValue:
    """``V = sum_s rho(s) gbar(s)**2`` and its closed-form gradient."""
    rho = np.asarray(rho, dtype=float)
    v, grad, _ = _v_and_grad(marginal_lambda(model, theta), rho)
    return LyapunovValue(v, grad)


def V_from_marginal(p, rho) -> float:
    rho = np.asarray(rho, dtype=float)
    return float(np.sum(rho * (1.0 - np.asarray(p) / rho) ** 2))


def descent_inner_product(model: EnergyModel, theta, rho) -> float:
    """``<grad V(theta), gbar(theta)>`` from the closed-form gradient."""
    rho = np.asarray(rho, dtype=float)
    _, grad, g = _v_and_grad(marginal_lambda(model, theta), rho)
    return float(grad @ g)


def gbar_variance(model: EnergyModel, theta, rho) -> float:
    """``Var_{p(.|theta)}(gbar)`` as ``E[g^2] - E[g]^2`` with exact summation."""
    rho = np.asarray(rho, dtype=float)
    p = marginal_lambda(model, theta)
    g = 1.0 - p / rho
    mean = math.fsum(p * g)
    return math.fsum(p * g * g) - mean * mean


def central_difference(fn, theta, step: float = 1e-3) -> np.ndarray:
    """Five-point central difference, error ``O(step**4)``.

    The wide default step keeps rounding in ``fn`` (relative ``eps * |fn| / step``)
    small next to gradients far below ``|fn|``.
    """
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = step
        out[i] = (8.0 * (fn(theta + e) - fn(theta - e))
                  - (fn(theta + 2 * e) - fn(theta - 2 * e))) / (12.0 * step)
    return out


def gradient_relative_error(model: EnergyModel, theta, rho, step: float = 1e-3) -> float:
    """``|analytic - central difference|_inf / |analytic|_inf``."""
    an = lyapunov_V(model, theta, rho).grad
    fd = central_difference(lambda t: lyapunov_V(model, t, rho).v, theta, step)
    scale = float(np.max(np.abs(an)))
    err = float(np.max(np.abs(an - fd)))
    return err / scale if scale > 0 else err


def exact_m(model: EnergyModel, box: HyperRectangle) -> float:
    """``inf_{theta in box, s} p(s | theta)``, attained at a vertex.

    ``p(s | theta)`` increases in ``theta(s)`` and decreases in every other
    coordinate, so for each ``s`` the minimum is at ``theta(s) = lower(s)`` and
    ``theta(t) = upper(t)`` otherwise.
    """
    free = free_energies(model)
    best = math.inf
    for s in range(model.n_lambda):
        vertex = box.upper.copy()
        vertex[s] = box.lower[s]
        a = vertex - free
        logp = a[s] - (a.max() + math.log(np.exp(a - a.max()).sum()))
        best = min(best, math.exp(logp))
    return best


def safe_delta(m: float, bound: float) -> float:
    """``delta = m**2 / (2 C**2)``."""
    return m * m / (2.0 * bound * bound)


def lyapunov_V_delta(model: EnergyModel, theta, zeta: float, rho, phi, target: int,
                     box: HyperRectangle, delta: float | None = None) -> LyapunovValue:
    """``V_delta(theta, zeta) = V(theta) + delta (zeta_* - zeta)**2``.

    ``delta`` defaults to ``m**2 / (2 C**2)`` with ``m`` from :func:`exact_m` on
    the parameter block of ``box`` and ``C = max |phi|``.  The gradient has the
    ``V`` gradient on the grid block and ``-2 delta (zeta_* - zeta)`` last.
    """
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if delta is None:
        delta = safe_delta(exact_m(model, _grid_block(box, model)), float(np.max(np.abs(phi))))
    z_star = optimal_zeta(model, rho, target, phi)
    base = lyapunov_V(model, theta, rho)
    diff = z_star - zeta
    return LyapunovValue(base.v + delta * diff * diff, np.append(base.grad, -2.0 * delta * diff))


def extended_descent_inner_product(model: EnergyModel, theta, zeta: float, rho, phi,
                                   target: int, box: HyperRectangle,
                                   delta: float | None = None) -> float:
    lv = lyapunov_V_delta(model, theta, zeta, rho, phi, target, box, delta)
    return float(lv.grad @ gbar_extended(model, theta, zeta, rho, phi, target))


def _grid_block(box: HyperRectangle, model: EnergyModel) -> HyperRectangle:
    if box.dim == model.n_lambda:
        return box
    return HyperRectangle(box.lower[: model.n_lambda], box.upper[: model.n_lambda])


# --------------------------------------------------------------------------
# prefix decomposition of the Jensen gap
# --------------------------------------------------------------------------


def jensen_difference_check(xs, ps) -> tuple[float, float, float]:
    """Evaluate both sides of

        (sum x p)**2 - sum x**2 p
            = -sum_{j>=2} [p_j P_{j-1} / P_j] (x_j - mean_{<j})**2

    where ``P_j`` is the prefix mass and ``mean_{<j}`` the prefix-weighted mean.
    Returns ``(lhs, rhs, |lhs - rhs|)``.
    """
    x = np.asarray(xs, dtype=float)
    p = np.asarray(ps, dtype=float)
    if x.shape != p.shape or x.ndim != 1 or len(x) < 2:
        raise DiagnosticsError("invalid_probability", "need matching vectors of length >= 2")
    if not np.all(p > 0) or abs(math.fsum(p) - 1.0) > 1e-12:
        raise DiagnosticsError("invalid_probability", "weights must be positive and sum to 1")
    mean = math.fsum(x * p)
    lhs = mean * mean - math.fsum(x * x * p)
    terms = []
    mass = p[0]
    weighted = x[0] * p[0]
    for j in range(1, len(x)):
        prefix_mean = weighted / mass
        new_mass = mass + p[j]
        terms.append(p[j] * mass / new_mass * (x[j] - prefix_mean) ** 2)
        mass = new_mass
        weighted += x[j] * p[j]
    rhs = -math.fsum(terms)
    return lhs, rhs, abs(lhs - rhs)

