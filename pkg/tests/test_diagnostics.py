import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awh_lab import diagnostics as diag
from awh_lab import fixtures
from awh_lab.awh import ChainBlock, HyperRectangle
from awh_lab.ergodic import optimal_zeta
from awh_lab.kernels import MatrixKernel, MetropolisKernel, complete_neighbors
from awh_lab.model import EnergyModel, conditional_matrix, marginal_lambda, optimal_theta


@pytest.fixture(scope="module")
def tiny_kernel():
    model = fixtures.tiny()
    return model, fixtures.default_kernel(model)


RHOS = [np.array([0.5, 0.5]), np.array([0.2, 0.8])]


@pytest.mark.parametrize("rho", RHOS)
@pytest.mark.parametrize("n_inner", [1, 2, 3])
def test_enumerated_mean_equals_mean_field(tiny_kernel, rho, n_inner):
    model, kernel = tiny_kernel
    rng = np.random.default_rng(n_inner)
    for _ in range(20):
        theta = rng.uniform(-3, 3, 2)
        got = diag.bruteforce_mean_h(model, kernel, theta, rho, n_inner)
        assert np.max(np.abs(got - diag.gbar_of(model, theta, rho))) <= 1e-12


def test_single_step_sum_equals_mean_field(tiny_kernel):
    model, kernel = tiny_kernel
    for theta in np.random.default_rng(1).uniform(-3, 3, (20, 2)):
        assert np.allclose(diag.single_step_mean_h(model, kernel, theta, RHOS[1]),
                           diag.gbar_of(model, theta, RHOS[1]), atol=1e-12, rtol=0)


def test_three_grid_points_and_other_kernel():
    model = EnergyModel.from_table(np.random.default_rng(0).normal(size=(4, 3)))
    kernel = MetropolisKernel(model, complete_neighbors(4))
    rho = np.array([0.2, 0.3, 0.5])
    theta = np.array([0.4, -1.0, 0.3])
    got = diag.bruteforce_mean_h(model, kernel, theta, rho, 2)
    assert np.allclose(got, diag.gbar_of(model, theta, rho), atol=1e-12, rtol=0)


def test_non_invariant_kernel_breaks_mean_field(tiny_kernel):
    # negative control: a kernel that does not preserve p(x | lambda)
    model, _ = tiny_kernel
    bad = MatrixKernel(np.full((2, 3, 3), 1.0 / 3.0))
    theta = np.array([0.5, -0.5])
    err = np.abs(diag.bruteforce_mean_h(model, bad, theta, RHOS[0], 2) - diag.gbar_of(model, theta, RHOS[0]))
    assert err.max() > 1e-3


def test_instance_too_large(dw):
    with pytest.raises(diag.DiagnosticsError) as err:
        diag.bruteforce_mean_h(dw, fixtures.default_kernel(dw), np.zeros(8), np.full(8, 1 / 8), 1)
    assert err.value.code == "instance_too_large"


@pytest.mark.parametrize("n_inner", [1, 2, 3])
def test_transition_law(tiny_kernel, n_inner):
    model, kernel = tiny_kernel
    theta = np.array([0.3, -0.1])
    block = ChainBlock(np.array([2] * n_inner), np.array([1] * n_inner))
    _, _, prob = diag.transition_paths(model, kernel, theta, block)
    assert math.fsum(prob) == pytest.approx(1.0, abs=1e-14)
    a = diag.g_of(model, kernel, theta, block, RHOS[1], "enumerate")
    b = diag.g_of(model, kernel, theta, block, RHOS[1], "recursion")
    assert np.allclose(a, b, atol=1e-14, rtol=0)


def _sample_block(model, kernel, theta, block, rng, n_draws):
    """Next blocks drawn with the kernel and the conditional, vectorised over draws."""
    cdf = np.cumsum(conditional_matrix(model, theta), axis=1)
    qcdf = np.cumsum(np.stack([kernel.matrix(j) for j in range(model.n_lambda)]), axis=2)
    n_inner = len(block)
    x = np.full(n_draws, int(block.xs[-1]))
    lam = np.full(n_draws, int(block.lambdas[-1]))
    xs = np.empty((n_draws, n_inner), dtype=int)
    for k in range(n_inner):
        u = rng.random((n_draws, 2))
        x = np.minimum((qcdf[lam, x] <= u[:, :1]).sum(axis=1), model.n_states - 1)
        lam = np.minimum((cdf[x] <= u[:, 1:]).sum(axis=1), model.n_lambda - 1)
        xs[:, k] = x
    return xs


def test_martingale_increment_has_mean_zero(tiny_kernel):
    model, kernel = tiny_kernel
    theta = np.array([0.4, -0.3])
    rho = RHOS[1]
    current = ChainBlock(np.array([0, 1]), np.array([1, 0]))
    n = 10**5
    xs = _sample_block(model, kernel, theta, current, np.random.default_rng(8), n)
    cond = conditional_matrix(model, theta)
    h = 1.0 - cond[xs].sum(axis=1) / (2 * rho)
    dm = h - diag.g_of(model, kernel, theta, current, rho)
    # spot-check the helper on one draw
    one = ChainBlock(xs[0], np.zeros(2, dtype=int))
    assert np.allclose(diag.delta_M(model, kernel, theta, one, current, rho), dm[0])
    band = 4.0 * dm.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(dm.mean(axis=0)) <= band)


def test_descent_identity(dw, dw_rho, dw_box):
    rng = np.random.default_rng(4)
    for theta in dw_box.sample(rng, 200):
        ip = diag.descent_inner_product(dw, theta, dw_rho)
        assert abs(ip + 2.0 * diag.gbar_variance(dw, theta, dw_rho)) <= 1e-12
        assert ip <= 1e-14
        assert diag.gradient_relative_error(dw, theta, dw_rho) <= 1e-6


def test_lyapunov_zero_exactly_at_optimum(dw, dw_rho):
    lv = diag.lyapunov_V(dw, optimal_theta(dw, dw_rho), dw_rho)
    assert lv.v <= 1e-28
    assert np.max(np.abs(lv.grad)) <= 1e-14


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=2, max_size=2), st.floats(-10, 10))
def test_lyapunov_depends_on_differences_only(theta, c):
    model = fixtures.tiny()
    a = diag.lyapunov_V(model, theta, RHOS[1])
    b = diag.lyapunov_V(model, np.array(theta) + c, RHOS[1])
    assert a.v == pytest.approx(b.v, abs=1e-10)
    assert a.v >= 0
    assert abs(a.grad.sum()) <= 1e-12  # orthogonal to the constant direction


@pytest.mark.parametrize("bound", [None, 1.5])
def test_extended_descent(dw, dw_rho, dw_box, bound):
    box = dw_box if bound is None else HyperRectangle.cube(bound, dw.n_lambda)
    phi = np.arange(dw.n_states, dtype=float)
    c = float(np.max(np.abs(phi)))
    m = diag.exact_m(dw, box)
    delta = diag.safe_delta(m, c)
    rng = np.random.default_rng(6)
    for theta in box.sample(rng, 300):
        zeta = rng.uniform(-c, c)
        ip = diag.extended_descent_inner_product(dw, theta, zeta, dw_rho, phi, 4, box, delta)
        assert ip <= 1e-12
    z_star = optimal_zeta(dw, dw_rho, 4, phi)
    at_opt = diag.lyapunov_V_delta(dw, optimal_theta(dw, dw_rho), z_star, dw_rho, phi, 4, box)
    assert at_opt.v <= 1e-14


def test_extended_descent_fails_with_oversized_delta(dw, dw_rho):
    # negative control: far above the safe delta the cross term is not dominated
    box = HyperRectangle.cube(1.5, dw.n_lambda)
    phi = np.arange(dw.n_states, dtype=float)
    rng = np.random.default_rng(0)
    worst = max(
        diag.extended_descent_inner_product(dw, th, rng.uniform(-31, 31), dw_rho, phi, 4, box, 1e6)
        for th in box.sample(rng, 300)
    )
    assert worst > 0


def test_exact_m_is_the_infimum(dw, dw_rho):
    box = HyperRectangle.cube(1.5, dw.n_lambda)
    m = diag.exact_m(dw, box)
    samples = box.sample(np.random.default_rng(2), 2000)
    assert all(marginal_lambda(dw, th).min() >= m * (1 - 1e-12) for th in samples)
    # attained at one of the designated vertices
    vals = []
    for s in range(dw.n_lambda):
        v = box.upper.copy()
        v[s] = box.lower[s]
        vals.append(marginal_lambda(dw, v)[s])
    assert min(vals) == pytest.approx(m, rel=1e-12)


def test_gbar_extended_last_coordinate(tiny):
    phi = np.array([1.0, 2.0, 3.0])
    theta = optimal_theta(tiny, RHOS[1])
    z = optimal_zeta(tiny, RHOS[1], 1, phi)
    g = diag.gbar_extended(tiny, theta, z, RHOS[1], phi, 1)
    assert np.allclose(g, 0.0, atol=1e-14)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_jensen_prefix_identity(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) * 5
    p = rng.dirichlet(np.ones(n))
    lhs, rhs, r = diag.jensen_difference_check(x, p)
    assert r <= 1e-12
    assert lhs <= 1e-12  # the gap is never positive


def test_jensen_hand_example():
    # x = (0, 1), p = (1/2, 1/2): (1/2)^2 - 1/2 = -1/4
    lhs, rhs, r = diag.jensen_difference_check([0.0, 1.0], [0.5, 0.5])
    assert lhs == -0.25 and rhs == pytest.approx(-0.25, abs=1e-16)


@pytest.mark.parametrize("xs,ps", [([1.0], [1.0]), ([1, 2], [0.5, 0.6]), ([1, 2], [1.0, 0.0])])
def test_jensen_rejects_bad_input(xs, ps):
    with pytest.raises(diag.DiagnosticsError):
        diag.jensen_difference_check(xs, ps)


def test_sample_block_helper_matches_enumeration(tiny_kernel):
    # guards the vectorised sampler used above against the exact transition law
    model, kernel = tiny_kernel
    theta = np.array([0.1, 0.2])
    block = ChainBlock(np.array([1]), np.array([0]))
    xs = _sample_block(model, kernel, theta, block, np.random.default_rng(1), 200000)
    ex, _, prob = diag.transition_paths(model, kernel, theta, block)
    law = np.bincount(ex[:, 0], weights=prob, minlength=3)
    assert np.allclose(np.bincount(xs[:, 0], minlength=3) / 200000, law, atol=0.005)
