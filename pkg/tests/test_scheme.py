"""Time stepping, the three-level window and mesh transfer of states."""

import numpy as np
import pytest

from chadapt import fem, mesh as meshmod, scheme
from chadapt.errors import StepFailureError


def constant_state(msh, value, eps=0.1, tau=1e-3):
    u = np.full(msh.n_vertices, float(value))
    return scheme.init_state(msh, lambda x, y: np.full_like(x, float(value)),
                             eps, tau0=tau)


def test_init_state_pure_states():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    for value in (1.0, 0.0, -1.0):
        state = constant_state(msh, value)
        assert np.allclose(state.u, value, atol=1e-12)
        assert np.allclose(state.w, 0.0, atol=1e-10)


def test_cn_step_fixed_point_at_pure_state():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    state = constant_state(msh, 1.0)
    u, w, report = scheme.cn_step(state, 1e-3)
    assert report.converged
    assert np.allclose(u.values, 1.0, atol=1e-10)
    assert np.allclose(w.values, 0.0, atol=1e-8)


def test_cn_step_conserves_mass():
    msh = meshmod.criss_cross(-1, 1, -1, 1, 8, 8)
    eps = 0.2
    state = scheme.init_state(
        msh, lambda x, y: np.tanh((x ** 2 + y ** 2 - 0.25) / eps), eps,
        tau0=1e-4)
    mass0 = fem.integral(msh, state.u)
    for _ in range(5):
        u, w, _ = scheme.cn_step(state, 1e-4)
        state = state.advance(u.values, w.values, 1e-4)
    assert abs(fem.integral(msh, state.u) - mass0) <= 1e-11


def test_cn_step_decreases_energy():
    msh = meshmod.criss_cross(-1, 1, -1, 1, 8, 8)
    eps = 0.2
    state = scheme.init_state(
        msh, lambda x, y: np.tanh((x ** 2 + y ** 2 - 0.25) / eps), eps,
        tau0=1e-4)
    e0 = scheme.energy(msh, state.u, eps)
    u, w, _ = scheme.cn_step(state, 1e-4)
    assert scheme.energy(msh, u.values, eps) <= e0 + 1e-12


def test_second_difference_trivials():
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    state = constant_state(msh, 0.5)
    assert np.allclose(scheme.second_difference(state, "u"), 0.0)
    # nodal samples t_k^2 with uniform tau give the constant 2
    tau = 0.1
    t2 = lambda t: np.full(msh.n_vertices, t ** 2)
    d2 = scheme.nodal_second_difference(t2(0.3), t2(0.2), t2(0.1), tau, tau)
    assert np.allclose(d2, 2.0)


def test_reconstruction_hits_endpoints():
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    rng = np.random.default_rng(3)
    state = scheme.SimState(
        mesh=msh, eps=0.1, t=1.0, tau=0.25, tau_prev=0.5,
        u=rng.standard_normal(msh.n_vertices),
        w=rng.standard_normal(msh.n_vertices),
        u_prev=rng.standard_normal(msh.n_vertices),
        w_prev=rng.standard_normal(msh.n_vertices),
        u_prev2=rng.standard_normal(msh.n_vertices),
        w_prev2=rng.standard_normal(msh.n_vertices))
    assert np.allclose(scheme.eval_reconstruction(state, "u", 1.0).values,
                       state.u)
    assert np.allclose(scheme.eval_reconstruction(state, "u", 0.75).values,
                       state.u_prev)
    with pytest.raises(ValueError):
        scheme.eval_reconstruction(state, "u", 0.5)
    with pytest.raises(ValueError):
        scheme.eval_reconstruction(state, "q", 1.0)


def test_reconstruction_derivative_midpoint():
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    state = constant_state(msh, 0.3)
    # all levels equal: derivative vanishes identically
    d = scheme.eval_reconstruction(state, "u", state.t, derivative=True)
    assert np.allclose(d.values, 0.0)


def test_energy_values():
    msh = meshmod.criss_cross(-1, 1, -1, 1, 4, 4)
    eps = 0.01
    ones = np.ones(msh.n_vertices)
    assert np.isclose(scheme.energy(msh, ones, eps), 0.0, atol=1e-12)
    assert np.isclose(scheme.energy(msh, -ones, eps), 0.0, atol=1e-12)
    # u = 0 on a domain of area 4: F(0) = 1/4, energy = |domain|/(4 eps)
    assert np.isclose(scheme.energy(msh, 0.0 * ones, eps), 100.0)


def test_with_mesh_preserves_algebraic_defect():
    msh = meshmod.criss_cross(-1, 1, -1, 1, 8, 8)
    eps = 0.2
    state = scheme.init_state(
        msh, lambda x, y: np.tanh((x ** 2 + y ** 2 - 0.25) / eps), eps,
        tau0=1e-4)
    for _ in range(3):
        u, w, _ = scheme.cn_step(state, 1e-4)
        state = state.advance(u.values, w.values, 1e-4)

    def defect(st):
        return scheme._chemical_potential(st.mesh, st.u, st.eps) - st.w

    rho0 = fem.l2_norm(state.mesh, defect(state))
    fine, tmap = meshmod.refine(state.mesh, set(range(0, 40)))
    moved = state.with_mesh(fine, tmap)
    rho1 = fem.l2_norm(moved.mesh, defect(moved))
    # the transfer must not inflate the scheme's algebraic defect; a
    # naive nodal interpolation of w inflates it by many orders
    assert rho1 <= max(10 * rho0, 1e-10)


def test_with_mesh_identity_on_same_mesh():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    state = constant_state(msh, 0.2)
    moved = state.with_mesh(msh, None)
    assert np.array_equal(moved.u, state.u)
    assert np.array_equal(moved.w, state.w)


def test_newton_failure_raises():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    state = constant_state(msh, 0.5, eps=0.01)
    with pytest.raises(StepFailureError):
        scheme.cn_step(state, 1e6, max_iter=2)
