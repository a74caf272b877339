"""Crank-Nicolson mixed time stepping and the three-level time machinery.

The state carries a rolling window of three time levels.  Level data is
always held on the current mesh; alongside each past level we keep the
(mesh, values) pair it was originally computed on, so that after mesh
adaptation past levels can be re-interpolated from their source rather
than transitively.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem, mesh as meshmod
from .errors import StepFailureError
from .fem import FeFunction, QUAD_BARY, QUAD_W


@dataclass
class NewtonReport:
    iterations: int
    residual: float
    converged: bool


@dataclass
class SimState:
    """Three-level rolling window (u^n, w^n), (u^{n-1}, w^{n-1}), (u^{n-2}, w^{n-2})."""

    mesh: object
    eps: float
    t: float
    tau: float        # step that produced the current level
    tau_prev: float   # previous step
    u: np.ndarray
    w: np.ndarray
    u_prev: np.ndarray
    w_prev: np.ndarray
    u_prev2: np.ndarray
    w_prev2: np.ndarray
    origin_prev: tuple = None   # (mesh, u values, w values) on the source mesh
    origin_prev2: tuple = None

    def __post_init__(self):
        if self.tau <= 0 or self.tau_prev <= 0 or self.eps <= 0:
            raise ValueError("tau, tau_prev and eps must be positive")
        if self.origin_prev is None:
            self.origin_prev = (self.mesh, self.u_prev, self.w_prev)
        if self.origin_prev2 is None:
            self.origin_prev2 = (self.mesh, self.u_prev2, self.w_prev2)

    def advance(self, u_new, w_new, tau):
        """Shift the window after an accepted step of size tau."""
        return SimState(
            mesh=self.mesh, eps=self.eps, t=self.t + tau,
            tau=tau, tau_prev=self.tau,
            u=u_new, w=w_new,
            u_prev=self.u, w_prev=self.w,
            u_prev2=self.u_prev, w_prev2=self.w_prev,
            origin_prev=(self.mesh, self.u, self.w),
            origin_prev2=self.origin_prev,
        )

    def with_mesh(self, new_mesh, tmap_from_current):
        """Move every level to ``new_mesh``.

        The current level goes through the supplied structural transfer;
        past levels are re-interpolated from their original meshes to
        avoid stacking interpolation error.

        The pair (u, w) is not interpolated naively.  The scheme's
        second equation forces the algebraic defect
        rho = eps*A u + P f(u)/eps - w to flip sign exactly from step to
        step, so whatever defect a mesh transfer introduces is preserved
        forever by the time stepping.  Interpolating u and rho and
        rebuilding w from them keeps the defect at its pre-transfer size
        (machine zero for a clean history) instead of seeding an O(1)
        persistent oscillation of w.
        """
        def defect(src, uv, wv):
            return _chemical_potential(src, uv, self.eps) - wv

        def move(src, uv, wv, tmap=None):
            if src is new_mesh:
                return uv, wv
            rho = defect(src, uv, wv)
            if tmap is None:
                key = ("xfer", src.generation)
                if key not in new_mesh._cache:
                    new_mesh._cache[key] = meshmod.make_transfer(src, new_mesh)
                tmap = new_mesh._cache[key]
            u_new = meshmod.transfer(uv, tmap, src.generation)
            rho_new = meshmod.transfer(rho, tmap, src.generation)
            w_new = _chemical_potential(new_mesh, u_new, self.eps) - rho_new
            return u_new, w_new

        u, w = move(self.mesh, self.u, self.w, tmap_from_current)
        up, wp = move(*self.origin_prev)
        up2, wp2 = move(*self.origin_prev2)
        return replace(self, mesh=new_mesh, u=u, w=w,
                       u_prev=up, w_prev=wp, u_prev2=up2, w_prev2=wp2)


def _chemical_potential(mesh, u_vals, eps):
    """w with (w, phi) = eps (grad u, grad phi) + (1/eps)(f(u), phi)."""
    K = fem.assemble_stiffness(mesh)
    bf = fem.assemble_nonlinear_load(mesh, FeFunction(mesh, u_vals), "f")
    return fem.mass_solve(mesh, eps * (K @ u_vals) + bf / eps)


def init_state(mesh, u0, eps, tau0=1e-6):
    """Project the initial datum and form the discrete chemical potential;
    both past levels alias level 0."""
    u_h = fem.l2_project(mesh, u0).values
    w_h = _chemical_potential(mesh, u_h, eps)
    return SimState(mesh=mesh, eps=eps, t=0.0, tau=tau0, tau_prev=tau0,
                    u=u_h, w=w_h, u_prev=u_h.copy(), w_prev=w_h.copy(),
                    u_prev2=u_h.copy(), w_prev2=w_h.copy())


def cn_step(state, tau, newton_tol=1e-10, max_iter=30):
    """One Crank-Nicolson step of size tau from the state's current level.

    Solves the coupled mixed system with full Newton (warm start at the
    previous level).  Raises StepFailureError on non-convergence so the
    caller can retry with a smaller step.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    msh = state.mesh
    eps = state.eps
    M = fem.assemble_mass(msh)
    K = fem.assemble_stiffness(msh)
    u_prev, w_prev = state.u, state.w
    bf_prev = fem.assemble_nonlinear_load(msh, FeFunction(msh, u_prev), "f")
    Kw_prev = K @ w_prev
    Ku_prev = K @ u_prev
    Mw_prev = M @ w_prev

    mass_lu = fem._factor(msh, "mass_lu", lambda: fem.assemble_mass(msh))
    u = u_prev.copy()
    w = w_prev.copy()
    tol_abs = None
    report = None
    res_prev = None
    for it in range(1, max_iter + 1):
        bf = fem.assemble_nonlinear_load(msh, FeFunction(msh, u), "f")
        # row 1 scaled by tau for conditioning
        r1 = M @ (u - u_prev) + 0.5 * tau * (K @ w + Kw_prev)
        r2 = (0.5 * eps * (K @ u + Ku_prev) + (bf + bf_prev) / (2 * eps)
              - 0.5 * (M @ w + Mw_prev))
        res = float(np.sqrt(mass_lu.solve(r1) @ r1 + mass_lu.solve(r2) @ r2))
        if tol_abs is None:
            tol_abs = newton_tol * (1.0 + fem.l2_norm(msh, u_prev))
        # a stalled residual within two orders of the target is the
        # attainable roundoff floor for this system, not a divergence
        stalled = (res_prev is not None and res >= 0.5 * res_prev
                   and res <= 100.0 * tol_abs)
        report = NewtonReport(it - 1, res, res <= tol_abs or stalled)
        if report.converged:
            return FeFunction(msh, u), FeFunction(msh, w), report
        res_prev = res
        uq = u[msh.triangles] @ QUAD_BARY.T
        Jf = fem.assemble_weighted_mass(msh, 3.0 * uq ** 2 - 1.0)
        J = sp.bmat([[M, 0.5 * tau * K],
                     [0.5 * eps * K + Jf / (2 * eps), -0.5 * M]], format="csc")
        delta = spla.spsolve(J, -np.concatenate([r1, r2]))
        if not np.all(np.isfinite(delta)):
            break
        u += delta[:msh.n_vertices]
        w += delta[msh.n_vertices:]
    raise StepFailureError(
        f"Newton did not converge in {max_iter} iterations "
        f"(residual {report.residual:.3e})")


def second_difference(state, which):
    """Three-level divided second difference with nonuniform steps."""
    if which == "u":
        vn, vm1, vm2 = state.u, state.u_prev, state.u_prev2
    elif which == "w":
        vn, vm1, vm2 = state.w, state.w_prev, state.w_prev2
    else:
        raise ValueError("field selector must be 'u' or 'w'")
    return nodal_second_difference(vn, vm1, vm2, state.tau, state.tau_prev)


def nodal_second_difference(vn, vm1, vm2, tau, tau_prev):
    return ((vn - vm1) / tau - (vm1 - vm2) / tau_prev) / (0.5 * (tau + tau_prev))


def eval_reconstruction(state, which, t, derivative=False):
    """Piecewise quadratic-in-time extension on (t_{n-1}, t_n].

    With derivative=True, returns the (linear in t) time derivative of
    the extension instead.
    """
    tn = state.t
    tnm1 = tn - state.tau
    if not (tnm1 < t <= tn or np.isclose(t, tnm1)):
        raise ValueError(f"t={t} outside the current interval ({tnm1}, {tn}]")
    if which == "u":
        vn, vm1 = state.u, state.u_prev
    elif which == "w":
        vn, vm1 = state.w, state.w_prev
    else:
        raise ValueError("field selector must be 'u' or 'w'")
    d2 = second_difference(state, which)
    if derivative:
        vals = (vn - vm1) / state.tau + (t - 0.5 * (tn + tnm1)) * d2
    else:
        vals = ((t - tnm1) / state.tau * vn + (tn - t) / state.tau * vm1
                + 0.5 * (t - tnm1) * (t - tn) * d2)
    return FeFunction(state.mesh, vals)


def energy(mesh, u, eps):
    """Discrete Ginzburg-Landau energy int (eps/2)|grad u|^2 + (1/eps) F(u)."""
    vals = u.values if isinstance(u, FeFunction) else np.asarray(u, dtype=float)
    areas, _ = fem.element_geometry(mesh)
    grad = fem.element_gradients(mesh, vals)
    grad_term = 0.5 * eps * float(areas @ np.einsum("kd,kd->k", grad, grad))
    uq = vals[mesh.triangles] @ QUAD_BARY.T
    Fq = 0.25 * (uq ** 2 - 1.0) ** 2
    pot_term = float(areas @ (Fq @ QUAD_W)) / eps
    return grad_term + pot_term
