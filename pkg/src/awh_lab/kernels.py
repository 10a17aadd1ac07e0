"""Within-state transition kernels ``q(x, y | lambda)`` and their checks.

A kernel is driven by uniforms: ``advance(x, j, us)`` maps the current state,
the current grid index and ``n_uniforms`` numbers in [0, 1) to the next state.
``sample`` draws those uniforms from a numpy ``Generator``, so the stream a run
consumes is fixed by the algorithm order alone.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .model import EnergyModel, gibbs_matrix

DENSE_LIMIT = 4096


class KernelError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    value: float = 0.0
    detail: str = ""


# --------------------------------------------------------------------------
# proposals
# --------------------------------------------------------------------------


def lattice_neighbors(n: int) -> np.ndarray:
    """±1 moves on ``0..n-1``; a move off either end stays put (reflection)."""
    x = np.arange(n)
    return np.stack([np.maximum(x - 1, 0), np.minimum(x + 1, n - 1)], axis=1)


def spin_flip_neighbors(n_spins: int) -> np.ndarray:
    """Single spin flips on bit-encoded configurations."""
    x = np.arange(1 << n_spins)
    return np.stack([x ^ (1 << i) for i in range(n_spins)], axis=1)


def complete_neighbors(n: int) -> np.ndarray:
    """Uniform proposal over all states, the current one included."""
    return np.tile(np.arange(n), (n, 1))


def proposal_matrix(neighbors: np.ndarray) -> np.ndarray:
    n, d = neighbors.shape
    p = np.zeros((n, n))
    np.add.at(p, (np.repeat(np.arange(n), d), neighbors.ravel()), 1.0 / d)
    return p


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


class MetropolisKernel:
    """Metropolis kernel for a symmetric uniform-neighbor proposal.

    Consumes two uniforms per step: one picks the neighbor column, one decides
    acceptance.  Both are always drawn, even when the proposal is a self-move.
    """

    n_uniforms = 2

    def __init__(self, model: EnergyModel, neighbors):
        nb = np.asarray(neighbors, dtype=np.int64)
        if nb.ndim != 2 or nb.shape[0] != model.n_states:
            raise KernelError("bad_proposal", "neighbor table must have one row per state")
        if nb.min() < 0 or nb.max() >= model.n_states:
            raise KernelError("bad_proposal", "neighbor index out of range")
        if model.n_states <= DENSE_LIMIT:
            p = proposal_matrix(nb)
            if not np.array_equal(p, p.T):
                raise KernelError("asymmetric_proposal", "proposal(x->y) != proposal(y->x)")
        else:
            _check_symmetric_sparse(nb)
        self.model = model
        self.neighbors = nb
        self._nb = nb.tolist()
        self._d = nb.shape[1]
        self._e = model.energy.tolist()

    @property
    def has_matrix(self) -> bool:
        return self.model.n_states <= DENSE_LIMIT

    def advance(self, x: int, j: int, us) -> int:
        y = self._nb[x][int(us[0] * self._d)]
        de = self._e[y][j] - self._e[x][j]
        if de <= 0.0 or us[1] < math.exp(-de):
            return y
        return x

    def sample(self, rng: np.random.Generator, x: int, j: int) -> int:
        return self.advance(x, j, rng.random(2).tolist())

    def acceptance(self, x: int, y: int, j: int) -> float:
        return math.exp(-max(self._e[y][j] - self._e[x][j], 0.0))

    def matrix(self, j: int) -> np.ndarray:
        if not self.has_matrix:
            raise KernelError("no_dense_matrix", f"|X|={self.model.n_states} exceeds {DENSE_LIMIT}")
        n, d = self.neighbors.shape
        e = self.model.energy[:, j]
        rows = np.repeat(np.arange(n), d)
        cols = self.neighbors.ravel()
        acc = np.exp(-np.maximum(e[cols] - e[rows], 0.0))
        q = np.zeros((n, n))
        np.add.at(q, (rows, cols), acc / d)
        # rejected mass stays on the diagonal
        q[np.arange(n), np.arange(n)] += 1.0 - q.sum(axis=1)
        return q


class MatrixKernel:
    """Kernel given by explicit dense matrices ``q[j][x, y]``; inverse-CDF sampler."""

    n_uniforms = 1
    has_matrix = True

    def __init__(self, matrices):
        q = np.array(matrices, dtype=float)
        if q.ndim == 2:
            q = q[None]
        if q.ndim != 3 or q.shape[1] != q.shape[2]:
            raise KernelError("bad_matrix", "expected matrices of shape (|L|, |X|, |X|)")
        if np.any(q < 0) or np.max(np.abs(q.sum(axis=2) - 1.0)) > 1e-12:
            raise KernelError("bad_matrix", "rows must be probability vectors")
        self._q = q
        self._cdf = np.cumsum(q, axis=2).tolist()

    def _index(self, j: int) -> int:
        return j if self._q.shape[0] > 1 else 0

    def advance(self, x: int, j: int, us) -> int:
        row = self._cdf[self._index(j)][x]
        return min(bisect_right(row, us[0]), len(row) - 1)

    def sample(self, rng: np.random.Generator, x: int, j: int) -> int:
        return self.advance(x, j, rng.random(1).tolist())

    def matrix(self, j: int) -> np.ndarray:
        return self._q[self._index(j)].copy()


def metropolis_kernel(model: EnergyModel, neighbors) -> MetropolisKernel:
    return MetropolisKernel(model, neighbors)


def _check_symmetric_sparse(nb: np.ndarray) -> None:
    n, d = nb.shape
    p = csr_matrix((np.ones(n * d), (np.repeat(np.arange(n), d), nb.ravel())), shape=(n, n))
    if (p - p.T).count_nonzero():
        raise KernelError("asymmetric_proposal", "proposal(x->y) != proposal(y->x)")


# --------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------


def _dense(kernel, j: int) -> np.ndarray:
    if not getattr(kernel, "has_matrix", False):
        raise KernelError("no_dense_matrix", "kernel has no dense representation")
    return kernel.matrix(j)


def invariance_residual(q: np.ndarray, p: np.ndarray) -> float:
    return float(np.max(np.abs(p @ q - p)))


def verify_invariance(kernel, model: EnergyModel, j: int, tol: float = 1e-12) -> CheckReport:
    """``max_y |sum_x q(x, y) p(x | lambda_j) - p(y | lambda_j)|`` against ``tol``."""
    q = _dense(kernel, j)
    r = invariance_residual(q, gibbs_matrix(model)[:, j])
    return CheckReport("invariance", r <= tol, r)


def period(q: np.ndarray) -> int:
    """Period of the positive-entry digraph (assumed strongly connected)."""
    n = q.shape[0]
    adj = [np.flatnonzero(row > 0) for row in q]
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    g = 0
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
                else:
                    g = gcd(g, int(level[u] + 1 - level[v]))
        frontier = nxt
    return g


def verify_irreducible_aperiodic(kernel, j: int) -> CheckReport:
    q = _dense(kernel, j)
    n_comp, _ = connected_components(csr_matrix(q > 0), directed=True, connection="strong")
    if n_comp != 1:
        return CheckReport("irreducible_aperiodic", False, float(n_comp),
                           f"not irreducible: {n_comp} strong components")
    d = period(q)
    if d != 1:
        return CheckReport("irreducible_aperiodic", False, float(d), f"periodic with period {d}")
    return CheckReport("irreducible_aperiodic", True, 1.0)
