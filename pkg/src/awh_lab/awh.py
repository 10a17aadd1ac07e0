"""The accelerated weight histogram recursion.

One outer iteration ``n`` runs ``N_I`` steps of the Gibbs sampler on
``(state, grid index)`` at fixed ``theta_n``, accumulates the conditional
probabilities of every grid point into the weight histogram, and then moves
``theta`` so that the normalized histogram matches the target ``rho``.  Each
new ``theta`` is clamped to a hyper-rectangle.

Random stream order (one ``numpy.random.Generator`` per run): for each inner
step, the kernel's uniforms are drawn first, then one uniform for the grid
index.  A whole block is drawn at once with ``rng.random((N_I, k + 1))``, which
consumes the stream in exactly that order.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from .model import (
    EnergyModel,
    ModelError,
    conditional_matrix,
    optimal_theta,
    validate_rho,
)

UPDATE_MODES = ("log", "linear")


class AwhError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class HyperRectangle:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ModelError("box bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ModelError("box needs lower < upper in every coordinate")
        if not np.all((lo <= 0) & (hi >= 0)):
            raise ModelError("box must contain the origin")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, bound: float, n: int) -> "HyperRectangle":
        return cls(np.full(n, -float(bound)), np.full(n, float(bound)))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all((theta >= self.lower) & (theta <= self.upper)))

    def clamp(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Euclidean projection onto the box and the displacement it caused."""
        theta = np.asarray(theta, dtype=float)
        out = np.minimum(np.maximum(theta, self.lower), self.upper)
        return out, out - theta

    def extend(self, lower: float, upper: float) -> "HyperRectangle":
        """Append one coordinate, e.g. ``[-C, C]`` for an ergodic average."""
        return HyperRectangle(np.append(self.lower, lower), np.append(self.upper, upper))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=None if size is None else (size, self.dim))


def default_box(model: EnergyModel, rho) -> HyperRectangle:
    """``[-B, B]^|L|`` with ``B = 2 max |F + log rho|``; holds the anchored optimum."""
    b = 2.0 * float(np.max(np.abs(optimal_theta(model, rho))))
    return HyperRectangle.cube(max(b, 1.0), model.n_lambda)


@dataclass(frozen=True)
class ChainBlock:
    xs: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self):
        if len(self.xs) != len(self.lambdas):
            raise ValueError("block components must have equal length")

    def __len__(self):
        return len(self.xs)


class BlockObserver(Protocol):
    def observe(self, n: int, theta: np.ndarray, block: ChainBlock, cond: np.ndarray) -> None: ...


@dataclass
class AwhConfig:
    model: EnergyModel
    kernel: Any
    rho: np.ndarray
    box: HyperRectangle
    N: int
    N_I: int
    theta0: np.ndarray | None = None
    x0: int = 0
    lambda0: int = 0
    seed: int = 0
    update_mode: str = "log"
    keep_histograms: bool = False
    keep_blocks: bool = False

    def __post_init__(self):
        n_l = self.model.n_lambda
        self.rho = validate_rho(self.rho, n_l)
        if self.theta0 is None:
            self.theta0 = np.zeros(n_l)
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if self.N < 0 or self.N_I < 1:
            raise ModelError("need N >= 0 and N_I >= 1")
        if self.box.dim != n_l:
            raise ModelError("box dimension does not match the parameter grid")
        if self.theta0.shape != (n_l,) or not self.box.contains(self.theta0):
            raise ModelError("theta0 must lie in the box")
        if not 0 <= self.x0 < self.model.n_states or not 0 <= self.lambda0 < n_l:
            raise ModelError("initial state or grid index out of range")
        if self.update_mode not in UPDATE_MODES:
            raise ModelError(f"update_mode must be one of {UPDATE_MODES}")


@dataclass
class AwhTrajectory:
    """Output of :func:`run`.

    ``thetas[n]`` is ``theta_n`` for ``n = 0..N``; ``displacements[n]`` is the
    clamp correction applied when forming ``theta_{n+1}`` (the step size times
    the projection term).
    """

    thetas: np.ndarray
    displacements: np.ndarray
    histograms: list | None = None
    blocks: list | None = None
    final_state: tuple = (0, 0)
    steps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_iterations(self) -> int:
        return self.thetas.shape[0] - 1

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]

    def clamped_coords(self) -> np.ndarray:
        """Number of coordinates touched by the clamp, per iteration."""
        return np.count_nonzero(self.displacements, axis=1)


def step_sizes(n_iter: int) -> np.ndarray:
    """The gain schedule ``1 / (n + 1)``."""
    return 1.0 / np.arange(1, n_iter + 1)


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


def sample_index(cdf: Sequence[float], u: float) -> int:
    """Inverse CDF: smallest ``i`` with ``u < cdf[i]``."""
    i = bisect_right(cdf, u)
    return i if i < len(cdf) else len(cdf) - 1


def inner_loop(model: EnergyModel, kernel, x: int, lam: int, theta, w0,
               n_inner: int, rng: np.random.Generator):
    """Run ``n_inner`` Gibbs steps at fixed ``theta`` starting from ``(x, lam)``.

    Returns ``(block, W, cond)`` where ``W = w0 + sum_k p(. | X_k, theta)`` and
    ``cond`` is the conditional matrix used for the block.
    """
    cond = conditional_matrix(model, theta)
    cdf = np.cumsum(cond, axis=1).tolist()
    us = rng.random((n_inner, kernel.n_uniforms + 1)).tolist()
    advance = kernel.advance
    xs = [0] * n_inner
    ls = [0] * n_inner
    for k, u in enumerate(us):
        x = advance(x, lam, u)
        lam = sample_index(cdf[x], u[-1])
        xs[k] = x
        ls[k] = lam
    xs_arr = np.array(xs, dtype=np.int64)
    counts = np.bincount(xs_arr, minlength=model.n_states).astype(float)
    w = np.asarray(w0, dtype=float) + counts @ cond
    return ChainBlock(xs_arr, np.array(ls, dtype=np.int64)), w, cond


def reset_histogram(n: int, rho, n_inner: int) -> np.ndarray:
    """``W_{n+1,0} = (n + 1) N_I rho``."""
    return (n + 1) * n_inner * np.asarray(rho, dtype=float)


def update_theta(theta, w, n: int, rho, box: HyperRectangle, mode: str = "log",
                 n_inner: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """One design-parameter update followed by the clamp to ``box``.

    With ``r = W / ((n + 1) N_I rho)``, the log mode moves ``theta`` by
    ``-log r``; the linear mode by ``1 - r``, which equals
    ``(1/(n+1)) * (1 - sum_k p(lambda | X_k) / (N_I rho))`` because
    ``W_{n,0} = n N_I rho``.
    """
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w, dtype=float)
    r = w / ((n + 1) * n_inner * np.asarray(rho, dtype=float))
    if mode == "log":
        if np.any(w <= 0):
            raise AwhError("histogram_nonpositive", f"weight histogram {w!r} has a non-positive entry")
        raw = theta - np.log(r)
    elif mode == "linear":
        raw = theta + (1.0 - r)
    else:
        raise ValueError(f"unknown update mode {mode!r}")
    return box.clamp(raw)


def free_energy_difference(theta, i: int, j: int, rho) -> float:
    """Estimate of ``F(lambda_i) - F(lambda_j)`` from a design parameter."""
    theta = np.asarray(theta, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if i == j:
        return 0.0
    return float(theta[i] - theta[j] - math.log(rho[i]) + math.log(rho[j]))


def free_energy_table(theta, rho) -> np.ndarray:
    """All pairs: entry ``[i, j]`` estimates ``F(lambda_i) - F(lambda_j)``."""
    a = np.asarray(theta, dtype=float) - np.log(np.asarray(rho, dtype=float))
    return a[:, None] - a[None, :]


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


class AwhRun:
    """Stateful driver; ``step()`` performs one outer iteration."""

    def __init__(self, config: AwhConfig, observers: Sequence[BlockObserver] = ()):
        self.config = config
        self.observers = list(observers)
        self.rng = np.random.default_rng(config.seed)
        self.n = 0
        self.x = int(config.x0)
        self.lam = int(config.lambda0)
        self.theta = config.theta0.copy()
        self.w = np.zeros(config.model.n_lambda)

    def step(self):
        c = self.config
        block, w, cond = inner_loop(c.model, c.kernel, self.x, self.lam, self.theta,
                                    self.w, c.N_I, self.rng)
        for obs in self.observers:
            obs.observe(self.n, self.theta, block, cond)
        new_theta, disp = update_theta(self.theta, w, self.n, c.rho, c.box, c.update_mode, c.N_I)
        self.x, self.lam = int(block.xs[-1]), int(block.lambdas[-1])
        self.w = reset_histogram(self.n, c.rho, c.N_I)
        self.theta = new_theta
        self.n += 1
        return block, w, new_theta, disp


def run(config: AwhConfig, observers: Sequence[BlockObserver] = ()) -> AwhTrajectory:
    """Execute ``config.N`` outer iterations; deterministic given ``config.seed``."""
    driver = AwhRun(config, observers)
    n_l = config.model.n_lambda
    thetas = np.empty((config.N + 1, n_l))
    disps = np.zeros((config.N, n_l))
    thetas[0] = config.theta0
    hists = [] if config.keep_histograms else None
    blocks = [] if config.keep_blocks else None
    for n in range(config.N):
        block, w, theta, disp = driver.step()
        thetas[n + 1] = theta
        disps[n] = disp
        if hists is not None:
            hists.append(w)
        if blocks is not None:
            blocks.append(block)
    return AwhTrajectory(thetas, disps, hists, blocks, (driver.x, driver.lam), step_sizes(config.N))
