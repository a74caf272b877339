"""Computable error indicator terms: the ten time terms and two space
terms of the recovery-based estimate, plus the competing residual
estimator and the maximum marking strategy.

Quantities from older time levels are interpolated to the current mesh
before the discrete operators are applied, so every norm is evaluated in
one common space.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import fem, recovery, scheme
from .errors import ConfigError
from .fem import FeFunction, QUAD_BARY, QUAD_W


@dataclass
class TimeIndicatorBreakdown:
    gamma_w: float
    beta_u: float
    eta_w: float
    delta_w: float
    delta_u: float
    gamma_u: float
    xi_u: float
    beta_w: float
    theta_u: float
    zeta_u: float

    TERMS = ("gamma_w", "beta_u", "eta_w", "delta_w", "delta_u",
             "gamma_u", "xi_u", "beta_w", "theta_u", "zeta_u")

    @property
    def eta_time(self):
        return sum(getattr(self, name) for name in self.TERMS)

    def as_dict(self):
        return {name: getattr(self, name) for name in self.TERMS}


@dataclass
class SpaceIndicatorBreakdown:
    E_tilde: float           # composite three-level recovery term
    alpha_u: float
    E_u: float               # current-level recovery estimator
    eta_k: np.ndarray        # per-element recovery indicator, current level

    @property
    def eta_space(self):
        return self.E_tilde + self.alpha_u

    @property
    def eta_max(self):
        return float(self.eta_k.max()) if self.eta_k.size else 0.0


@dataclass
class ResidualBreakdown:
    eta_k1: np.ndarray
    eta_k2: np.ndarray

    @property
    def eta(self):
        return float(np.sqrt(np.sum(self.eta_k1 ** 2 + self.eta_k2 ** 2)))

    @property
    def eta_k(self):
        return np.sqrt(self.eta_k1 ** 2 + self.eta_k2 ** 2)


def _lap(state, vals):
    return fem.discrete_laplacian(state.mesh, FeFunction(state.mesh, vals)).values


def _proj_nonlinearity(state, vals, tag):
    b = fem.assemble_nonlinear_load(state.mesh, FeFunction(state.mesh, vals), tag)
    return fem.mass_solve(state.mesh, b)


def time_indicator(state):
    """All ten time-discretization indicator terms on the current mesh."""
    msh = state.mesh
    eps, tau = state.eps, state.tau
    l2 = lambda v: fem.l2_norm(msh, v)
    neg = lambda v: fem.neg_norm(msh, v)

    un, um1, um2 = state.u, state.u_prev, state.u_prev2
    wn, wm1, wm2 = state.w, state.w_prev, state.w_prev2
    Aun, Aum1 = _lap(state, un), _lap(state, um1)
    Aum2 = _lap(state, um2)
    Awn, Awm1, Awm2 = _lap(state, wn), _lap(state, wm1), _lap(state, wm2)
    d2u = scheme.second_difference(state, "u")
    d2w = scheme.second_difference(state, "w")
    d2Aww = scheme.nodal_second_difference(
        Awn + wn, Awm1 + wm1, Awm2 + wm2, state.tau, state.tau_prev)

    gamma_w = neg(0.5 * (Awn - Awm1))
    beta_u = neg(tau ** 2 / 8.0 * d2u)
    eta_w = (neg((Awm1 + wm1) - (Awn + wn))
             + neg(tau ** 2 / 8.0 * d2Aww))
    delta_w = neg(wn - wm1) + neg(tau ** 2 / 8.0 * d2w)
    delta_u = l2((un - um1) / eps)
    gamma_u = eps * l2(0.5 * (Aun - Aum1))
    pf_n = _proj_nonlinearity(state, un, "f")
    pf_m1 = _proj_nonlinearity(state, um1, "f")
    xi_u = l2((pf_n - pf_m1) / (2.0 * eps))
    beta_w = l2(0.5 * (wn - wm1))

    def resid(Au, u, w):
        return eps * Au + _proj_nonlinearity(state, u, "h") / eps - w

    rn = resid(Aun, un, wn)
    rm1 = resid(Aum1, um1, wm1)
    rm2 = resid(Aum2, um2, wm2)
    theta_u = 2.0 * l2(rm1 - rn) + l2(rm1 - rm2)

    # products of P1 functions formed nodally, then measured as P1 fields
    d2cube = scheme.nodal_second_difference(
        un ** 3, um1 ** 3, um2 ** 3, state.tau, state.tau_prev)
    t2_8 = tau ** 2 / (8.0 * eps)
    t4_64 = tau ** 4 / (64.0 * eps)
    zeta_u = (
        l2((3 * un ** 2 * um1 - 2 * un ** 3 - um1 ** 3) / eps)
        + l2((3 * un * um1 ** 2 - 2 * um1 ** 3 - un ** 3) / eps)
        + l2((3 * un ** 2 * d2u - 3 * un * um1 * d2u) * t2_8)
        + l2((3 * um1 ** 2 * d2u - 3 * un * um1 * d2u) * t2_8)
        + l2((3 * un * um1 * d2u - d2cube) * t2_8)
        + l2((3 * un * d2u ** 2 - 3 * um1 * d2u ** 2) * t4_64)
        + l2(3 * um1 * d2u ** 2 * t4_64)
        + l2(d2u ** 3 * tau ** 6 / (512.0 * eps))
    )

    return TimeIndicatorBreakdown(
        gamma_w=gamma_w, beta_u=beta_u, eta_w=eta_w, delta_w=delta_w,
        delta_u=delta_u, gamma_u=gamma_u, xi_u=xi_u, beta_w=beta_w,
        theta_u=theta_u, zeta_u=zeta_u)


def _level_recovery(msh, vals, boundary_rule):
    """Memoized recovery estimator of a nodal field on its own mesh."""
    key = ("recovery_E", boundary_rule, vals.tobytes())
    if key not in msh._cache:
        eta_k, total = recovery.recovery_estimator(
            msh, FeFunction(msh, vals), boundary_rule=boundary_rule)
        msh._cache[key] = (eta_k, total)
    return msh._cache[key]


def composite_recovery_term(e_n, e_m1, e_m2, tau, tau_prev, c0=1.0):
    """Three-level composite squared space term; returns its square root."""
    sq = (c0 ** 2 / 3.0 * tau * (e_n ** 2 + e_m1 ** 2 + e_n * e_m1)
          + c0 ** 2 * (tau ** 2 * tau_prev * (e_n + e_m1)
                       + tau ** 3 * (e_m1 + e_m2))
          / (6.0 * tau_prev * (tau + tau_prev)) * (e_n + e_m1)
          + c0 ** 2 * tau ** 3
          * (tau_prev * (e_n + e_m1) + tau * (e_m1 + e_m2)) ** 2
          / (30.0 * tau_prev ** 2 * (tau + tau_prev) ** 2))
    return float(np.sqrt(sq))


def space_indicator(state, c0=1.0, c_alpha=1.0, boundary_rule="linear"):
    """Space-discretization terms: the composite recovery term, the
    three-level first-order term, and the current per-element field."""
    eta_k, e_n = _level_recovery(state.mesh, state.u, boundary_rule)
    src1, u1, _ = state.origin_prev
    src2, u2, _ = state.origin_prev2
    _, e_m1 = _level_recovery(src1, u1, boundary_rule)
    _, e_m2 = _level_recovery(src2, u2, boundary_rule)
    e_tilde = composite_recovery_term(e_n, e_m1, e_m2, state.tau,
                                      state.tau_prev, c0)
    alpha_u = c_alpha * (e_n + e_m1 + e_m2) / state.eps
    return SpaceIndicatorBreakdown(E_tilde=e_tilde, alpha_u=alpha_u,
                                   E_u=e_n, eta_k=eta_k)


def residual_indicator(state, t=None):
    """Residual-type local estimators at time t (default: the current
    level).  For P1 elements the discrete Laplacian of the reconstruction
    vanishes elementwise, leaving the zero-order residual parts plus the
    gradient jumps."""
    if t is None:
        t = state.t
    msh = state.mesh
    eps = state.eps
    u_t = scheme.eval_reconstruction(state, "u", t, derivative=True).values
    u_h = scheme.eval_reconstruction(state, "u", t).values
    w_h = scheme.eval_reconstruction(state, "w", t).values

    areas, _ = fem.element_geometry(msh)
    tris = msh.triangles

    def elem_l2(vals):
        vq = vals[tris] @ QUAD_BARY.T
        return np.sqrt(np.maximum(areas * (vq ** 2 @ QUAD_W), 0.0))

    r1 = elem_l2(u_t)
    uq = u_h[tris] @ QUAD_BARY.T
    wq = w_h[tris] @ QUAD_BARY.T
    r2q = (uq ** 3 - uq) / eps ** 2 - wq / eps
    r2 = np.sqrt(np.maximum(areas * (r2q ** 2 @ QUAD_W), 0.0))

    p = msh.vertices[tris]
    h_k = np.max([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1)
                  for i in range(3)], axis=0)

    grad_w = fem.element_gradients(msh, w_h)
    grad_u = fem.element_gradients(msh, u_h)
    ev, etri, is_bnd = msh.edges()
    tang = msh.vertices[ev[:, 1]] - msh.vertices[ev[:, 0]]
    h_e = np.linalg.norm(tang, axis=1)
    normal = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / h_e[:, None]

    jump_sq_1 = np.zeros(len(ev))
    jump_sq_2 = np.zeros(len(ev))
    k1 = etri[:, 0]
    k2 = etri[:, 1]
    inter = ~is_bnd
    j1 = np.einsum("ed,ed->e", grad_w[k1[inter]] - grad_w[k2[inter]], normal[inter])
    j2 = np.einsum("ed,ed->e", grad_u[k1[inter]] - grad_u[k2[inter]], normal[inter])
    # ||J||^2 over the edge times the interior weight 1/2 h
    jump_sq_1[inter] = 0.5 * h_e[inter] * j1 ** 2 * h_e[inter]
    jump_sq_2[inter] = 0.5 * h_e[inter] * j2 ** 2 * h_e[inter]
    # boundary: Neumann residual with full weight h
    jb1 = np.einsum("ed,ed->e", grad_w[k1[is_bnd]], normal[is_bnd])
    jb2 = np.einsum("ed,ed->e", grad_u[k1[is_bnd]], normal[is_bnd])
    jump_sq_1[is_bnd] = h_e[is_bnd] * jb1 ** 2 * h_e[is_bnd]
    jump_sq_2[is_bnd] = h_e[is_bnd] * jb2 ** 2 * h_e[is_bnd]

    edge_term_1 = np.zeros(msh.n_triangles)
    edge_term_2 = np.zeros(msh.n_triangles)
    for side in (0, 1):
        ids = etri[:, side]
        ok = ids >= 0
        np.add.at(edge_term_1, ids[ok], np.sqrt(jump_sq_1[ok]))
        np.add.at(edge_term_2, ids[ok], np.sqrt(jump_sq_2[ok]))

    eta_k1 = h_k * r1 + edge_term_1
    eta_k2 = h_k * r2 + edge_term_2
    return ResidualBreakdown(eta_k1=eta_k1, eta_k2=eta_k2)


def mark(eta_k, eta_max, tol_r, tol_c):
    """Maximum marking: refine above tol_r * eta_max, coarsen below
    tol_c * eta_max."""
    if not (0.0 < tol_c < tol_r < 1.0):
        raise ConfigError("marking fractions must satisfy 0 < tol_c < tol_r < 1")
    eta_k = np.asarray(eta_k, dtype=float)
    refine = set(np.flatnonzero(eta_k > tol_r * eta_max).tolist())
    coarsen = set(np.flatnonzero(eta_k < tol_c * eta_max).tolist())
    return refine, coarsen
