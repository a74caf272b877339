"""Time and space indicator terms, the residual estimator and marking."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chadapt import estimators, fem, mesh as meshmod, scheme
from chadapt.errors import ConfigError
from chadapt.fem import FeFunction


def state_from(msh, u, w, eps=0.1, tau=0.01, tau_prev=0.01,
               u_prev=None, w_prev=None, u_prev2=None, w_prev2=None):
    return scheme.SimState(
        mesh=msh, eps=eps, t=1.0, tau=tau, tau_prev=tau_prev,
        u=u, w=w,
        u_prev=u.copy() if u_prev is None else u_prev,
        w_prev=w.copy() if w_prev is None else w_prev,
        u_prev2=u.copy() if u_prev2 is None else u_prev2,
        w_prev2=w.copy() if w_prev2 is None else w_prev2)


def test_all_terms_vanish_on_identical_levels():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    rng = np.random.default_rng(11)
    tb = estimators.time_indicator(state_from(
        msh, rng.standard_normal(msh.n_vertices),
        rng.standard_normal(msh.n_vertices)))
    for name, value in tb.as_dict().items():
        assert abs(value) <= 1e-10, name
    assert tb.eta_time <= 1e-9


def test_eta_time_is_component_sum():
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    rng = np.random.default_rng(4)
    tb = estimators.time_indicator(state_from(
        msh, rng.standard_normal(msh.n_vertices),
        rng.standard_normal(msh.n_vertices),
        u_prev=rng.standard_normal(msh.n_vertices),
        w_prev=rng.standard_normal(msh.n_vertices),
        u_prev2=rng.standard_normal(msh.n_vertices),
        w_prev2=rng.standard_normal(msh.n_vertices)))
    assert tb.eta_time == sum(tb.as_dict().values())


def test_delta_u_constant_increment():
    # u^n - u^{n-1} = 0.01 on a domain of area 4 with eps = 0.01:
    # delta_u = ||0.01|| / eps = (0.01 * 2) / 0.01 = 2
    msh = meshmod.criss_cross(-1, 1, -1, 1, 4, 4)
    u = np.full(msh.n_vertices, 0.3)
    tb = estimators.time_indicator(state_from(
        msh, u + 0.01, np.zeros(msh.n_vertices), eps=0.01,
        u_prev=u.copy(), u_prev2=u.copy()))
    assert np.isclose(tb.delta_u, 2.0)


def test_composite_recovery_term_symmetric_inputs():
    got = estimators.composite_recovery_term(1.0, 1.0, 1.0, 0.1, 0.1, c0=1.0)
    assert np.isclose(got, 0.42426406871192857, rtol=1e-12)
    assert np.isclose(got ** 2, 0.1 * (1 + 2 / 3.0 + 2 / 15.0))


def test_composite_recovery_term_zero_inputs():
    assert estimators.composite_recovery_term(0, 0, 0, 0.1, 0.2) == 0.0


def test_space_indicator_zero_on_linear_solution():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    u = 2 * msh.vertices[:, 0] - msh.vertices[:, 1]
    sb = estimators.space_indicator(state_from(msh, u, np.zeros_like(u)))
    assert sb.E_tilde <= 1e-12
    assert sb.alpha_u <= 1e-12
    assert sb.eta_space <= 1e-12
    assert sb.eta_max <= 1e-12


def test_space_indicator_component_sum():
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    rng = np.random.default_rng(9)
    sb = estimators.space_indicator(state_from(
        msh, rng.standard_normal(msh.n_vertices),
        rng.standard_normal(msh.n_vertices)))
    assert sb.eta_space == sb.E_tilde + sb.alpha_u
    assert sb.E_u > 0


def test_residual_estimator_zero_at_stationary_pure_state():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    u = np.ones(msh.n_vertices)
    rb = estimators.residual_indicator(state_from(msh, u, 0.0 * u))
    assert rb.eta <= 1e-12
    assert np.max(rb.eta_k) <= 1e-12


def test_residual_jumps_vanish_for_linear_w():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    u = np.ones(msh.n_vertices)
    w = msh.vertices[:, 0]  # globally linear: no interior gradient jumps
    rb = estimators.residual_indicator(state_from(msh, u, w))
    interior_tris = ~np.isin(
        msh.triangles, np.flatnonzero(msh.boundary_vertex_mask())).any(axis=1)
    areas, _ = fem.element_geometry(msh)
    h_k = np.sqrt(areas.max())
    # on interior elements only the zero-order -w/eps part remains
    p = fem.quad_points(msh)
    assert np.all(rb.eta_k1[interior_tris] <= 2 * h_k * np.sqrt(areas.max()))


def test_residual_eta_is_sum_of_squares():
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    rng = np.random.default_rng(2)
    rb = estimators.residual_indicator(state_from(
        msh, rng.standard_normal(msh.n_vertices),
        rng.standard_normal(msh.n_vertices)))
    assert np.isclose(rb.eta ** 2, np.sum(rb.eta_k1 ** 2 + rb.eta_k2 ** 2))


def test_mark_worked_example():
    refine, coarsen = estimators.mark(np.array([3.0, 1.0, 0.1]), 3.0,
                                      tol_r=0.7, tol_c=0.05)
    assert refine == {0}
    assert coarsen == {2}


def test_mark_all_equal_coarsens_nothing():
    # every element ties the maximum, so all exceed tol_r * eta_max and
    # none fall below tol_c * eta_max
    refine, coarsen = estimators.mark(np.ones(5), 1.0, tol_r=0.7, tol_c=0.05)
    assert refine == {0, 1, 2, 3, 4}
    assert coarsen == set()


def test_mark_zero_field():
    refine, coarsen = estimators.mark(np.zeros(4), 0.0, tol_r=0.7, tol_c=0.05)
    assert refine == set()
    assert coarsen == set()


def test_mark_rejects_bad_fractions():
    with pytest.raises(ConfigError):
        estimators.mark(np.ones(3), 1.0, tol_r=0.05, tol_c=0.7)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=100, allow_nan=False),
                min_size=1, max_size=30),
       st.floats(min_value=0.3, max_value=0.9),
       st.floats(min_value=0.01, max_value=0.2))
def test_mark_matches_bruteforce(eta, tol_r, tol_c):
    if not tol_c < tol_r:
        return
    eta = np.array(eta)
    emax = float(eta.max())
    refine, coarsen = estimators.mark(eta, emax, tol_r, tol_c)
    assert refine == {i for i in range(len(eta)) if eta[i] > tol_r * emax}
    assert coarsen == {i for i in range(len(eta)) if eta[i] < tol_c * emax}
    assert refine.isdisjoint(coarsen)
