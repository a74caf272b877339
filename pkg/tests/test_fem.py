"""Assembly, projections, norms and solvers against dense references."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chadapt import fem, mesh as meshmod
from chadapt.fem import FeFunction


@pytest.fixture(scope="module")
def msh():
    return meshmod.criss_cross(0, 1, 0, 1, 3, 3)


def test_mass_matrix_rows_sum_to_areas(msh):
    M = fem.assemble_mass(msh)
    assert np.isclose(M.sum(), 1.0)                 # total area
    assert np.allclose((M - M.T).toarray(), 0.0)    # symmetry


def test_stiffness_kernel_is_constants(msh):
    K = fem.assemble_stiffness(msh)
    assert np.allclose(K @ np.ones(msh.n_vertices), 0.0, atol=1e-12)
    assert np.allclose((K - K.T).toarray(), 0.0)


def test_quadrature_exact_on_monomials(msh):
    # the 6-point rule is exact through degree 4
    pts = fem.quad_points(msh)
    areas, _ = fem.element_geometry(msh)
    for (a, b, exact) in [(0, 0, 1.0), (1, 0, 0.5), (2, 2, 1 / 9.0),
                          (4, 0, 1 / 5.0), (2, 1, 1 / 6.0), (3, 1, 1 / 8.0)]:
        vq = pts[..., 0] ** a * pts[..., 1] ** b
        got = float(areas @ (vq @ fem.QUAD_W))
        assert np.isclose(got, exact, atol=1e-14), (a, b)


def test_discrete_laplacian_of_constant_is_zero(msh):
    v = FeFunction(msh, np.full(msh.n_vertices, 3.0))
    assert np.max(np.abs(fem.discrete_laplacian(msh, v).values)) <= 1e-10


def test_l2_project_reproduces_linears(msh):
    pts = fem.quad_points(msh)
    got = fem.l2_project(msh, 2 * pts[..., 0] - pts[..., 1] + 0.5).values
    want = 2 * msh.vertices[:, 0] - msh.vertices[:, 1] + 0.5
    assert np.allclose(got, want, atol=1e-10)


def test_l2_project_constant(msh):
    got = fem.l2_project(msh, lambda x, y: np.full_like(x, 7.0)).values
    assert np.allclose(got, 7.0, atol=1e-10)


def test_neg_norm_of_constant_is_zero(msh):
    assert fem.neg_norm(msh, np.full(msh.n_vertices, 2.0)) <= 1e-10


def test_neg_norm_scaling(msh):
    rng = np.random.default_rng(1)
    v = rng.standard_normal(msh.n_vertices)
    assert np.isclose(fem.neg_norm(msh, 3.0 * v), 3.0 * fem.neg_norm(msh, v))


def test_spd_solve_trivials(msh):
    M = fem.assemble_mass(msh)
    K = fem.assemble_stiffness(msh)
    A = K + M
    assert np.allclose(fem.spd_solve(A, np.zeros(msh.n_vertices)), 0.0)
    ones = np.ones(msh.n_vertices)
    assert np.allclose(fem.spd_solve(M, M @ ones), ones, atol=1e-10)


def test_nonlinear_load_trivials():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    zero = FeFunction(msh, np.zeros(msh.n_vertices))
    one = FeFunction(msh, np.ones(msh.n_vertices))
    two = FeFunction(msh, np.full(msh.n_vertices, 2.0))
    assert np.allclose(fem.assemble_nonlinear_load(msh, zero, "f"), 0.0)
    assert np.allclose(fem.assemble_nonlinear_load(msh, one, "f"), 0.0,
                       atol=1e-14)
    # h(u) = u^3: integral of 8 over the unit square
    b = fem.assemble_nonlinear_load(msh, two, "h")
    assert np.isclose(b.sum(), 8.0)


def test_element_gradients_linear(msh):
    vals = 4 * msh.vertices[:, 0] - 2 * msh.vertices[:, 1]
    grad = fem.element_gradients(msh, vals)
    assert np.allclose(grad, [4.0, -2.0])


def test_integral_and_mean(msh):
    vals = msh.vertices[:, 0]
    assert np.isclose(fem.integral(msh, vals), 0.5)
    assert np.isclose(fem.mean_value(msh, vals), 0.5)


def test_l2_and_h1_norms(msh):
    vals = msh.vertices[:, 0]
    assert np.isclose(fem.l2_norm(msh, vals), np.sqrt(1 / 3.0))
    assert np.isclose(fem.h1_seminorm(msh, vals), 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1),
       st.floats(min_value=-8.0, max_value=8.0,
                 allow_nan=False, allow_infinity=False))
def test_norm_properties(seed, scale):
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    v = np.random.default_rng(seed).standard_normal(msh.n_vertices)
    n1 = fem.l2_norm(msh, v)
    assert n1 >= 0
    assert np.isclose(fem.l2_norm(msh, scale * v), abs(scale) * n1)
    M = fem.assemble_mass(msh)
    assert np.isclose(n1, np.sqrt(v @ (M @ v)))


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_neg_norm_below_poincare_l2(seed):
    # || v - mean ||_{-1} <= C || v ||, with C from the Poincare constant;
    # on the unit square the discrete norm is far below the L2 norm
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    v = np.random.default_rng(seed).standard_normal(msh.n_vertices)
    assert fem.neg_norm(msh, v) <= 1.0 * fem.l2_norm(msh, v)


def test_stale_function_rejected(msh):
    fine, _ = meshmod.refine(msh, {0})
    vals = np.zeros(msh.n_vertices)
    with pytest.raises(Exception):
        FeFunction(fine, vals)
