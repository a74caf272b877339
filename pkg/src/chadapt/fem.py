"""P1 finite element assembly, discrete operators and norms.

All solves go through cached sparse LU factorizations attached to the
mesh (meshes are immutable, so factors stay valid).  The mass matrix is
the consistent one throughout: the discrete Laplacian A and the L2
projection P are exact mass-solves, which the estimator terms rely on.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, LinearSolverError, StaleFunctionError

# 6-point symmetric triangle rule, exact for polynomials of degree 4.
# Barycentric coordinates and weights normalized to sum to 1.
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
QUAD_BARY = np.array([
    [1 - 2 * _A1, _A1, _A1],
    [_A1, 1 - 2 * _A1, _A1],
    [_A1, _A1, 1 - 2 * _A1],
    [1 - 2 * _A2, _A2, _A2],
    [_A2, 1 - 2 * _A2, _A2],
    [_A2, _A2, 1 - 2 * _A2],
])
QUAD_W = np.array([_W1, _W1, _W1, _W2, _W2, _W2])


@dataclass
class FeFunction:
    """Nodal P1 function (scalar or 2-vector valued) bound to one mesh."""

    mesh: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        nv = self.mesh.n_vertices
        if self.values.shape not in ((nv,), (nv, 2)):
            raise StaleFunctionError(
                f"coefficient shape {self.values.shape} does not match mesh "
                f"with {nv} vertices")
        if not np.all(np.isfinite(self.values)):
            raise AssemblyError("non-finite coefficients")

    @property
    def is_scalar(self):
        return self.values.ndim == 1

    @property
    def generation(self):
        return self.mesh.generation


def element_geometry(mesh):
    """Per-element areas and P1 shape-function gradients, cached on the mesh.

    Returns (areas (nt,), grads (nt, 3, 2)) with grads[k, i] the constant
    gradient of the hat function of local vertex i on element k.
    """
    if "elem_geom" not in mesh._cache:
        p = mesh.vertices[mesh.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(np.abs(det) < 1e-300) or np.any(det <= 0):
            raise AssemblyError("degenerate or inverted triangle")
        areas = 0.5 * det
        # gradient of hat_i: rotate opposite edge by 90 degrees / (2A)
        grads = np.empty((mesh.n_triangles, 3, 2))
        for i in range(3):
            a = p[:, (i + 1) % 3]
            b = p[:, (i + 2) % 3]
            grads[:, i, 0] = (a[:, 1] - b[:, 1]) / det
            grads[:, i, 1] = (b[:, 0] - a[:, 0]) / det
        mesh._cache["elem_geom"] = (areas, grads)
    return mesh._cache["elem_geom"]


def quad_points(mesh):
    """Physical coordinates of the degree-4 quadrature points, (nt, 6, 2)."""
    if "quad_pts" not in mesh._cache:
        p = mesh.vertices[mesh.triangles]
        mesh._cache["quad_pts"] = np.einsum("qi,kid->kqd", QUAD_BARY, p)
    return mesh._cache["quad_pts"]


def _accumulate(mesh, local):
    """Scatter (nt, 3, 3) local matrices into a global CSR matrix."""
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(mesh.n_vertices, mesh.n_vertices))
    return mat.tocsr()


def assemble_mass(mesh):
    if "mass" not in mesh._cache:
        areas, _ = element_geometry(mesh)
        base = (np.ones((3, 3)) + np.eye(3)) / 12.0
        local = areas[:, None, None] * base[None]
        mesh._cache["mass"] = _accumulate(mesh, local)
    return mesh._cache["mass"]


def assemble_stiffness(mesh):
    if "stiffness" not in mesh._cache:
        areas, grads = element_geometry(mesh)
        local = areas[:, None, None] * np.einsum("kid,kjd->kij", grads, grads)
        mesh._cache["stiffness"] = _accumulate(mesh, local)
    return mesh._cache["stiffness"]


def assemble_weighted_mass(mesh, weight):
    """Matrix with entries int w phi_i phi_j by degree-4 quadrature.

    ``weight`` is either nodal ((nv,), interpolated as P1) or already
    sampled at the quadrature points ((nt, 6)), as in the Newton Jacobian
    where the quadratic weight keeps the integrand exactly integrable.
    """
    areas, _ = element_geometry(mesh)
    weight = np.asarray(weight, dtype=float)
    if weight.ndim == 1:
        wq = weight[mesh.triangles] @ QUAD_BARY.T          # (nt, 6)
    else:
        wq = weight
    phi = QUAD_BARY                                        # (6, 3)
    local = np.einsum("q,kq,qi,qj->kij", QUAD_W, wq, phi, phi)
    local *= areas[:, None, None]
    return _accumulate(mesh, local)


def assemble_load(mesh, values_at_quad):
    """Load vector b_i = int v phi_i from values at the quadrature points
    (array of shape (nt, 6))."""
    areas, _ = element_geometry(mesh)
    local = np.einsum("q,kq,qi->ki", QUAD_W, values_at_quad, QUAD_BARY)
    local *= areas[:, None]
    b = np.zeros(mesh.n_vertices)
    np.add.at(b, mesh.triangles.ravel(), local.ravel())
    return b


_NONLINEARITIES = {
    "f": lambda u: u ** 3 - u,   # F'(u) for the double well
    "h": lambda u: u ** 3,
}


def assemble_nonlinear_load(mesh, u, g):
    """b_i = int g(u_h) phi_i with degree-4 quadrature (exact for cubic g
    of a P1 function).  ``g`` is a tag from {'f', 'h'} or a callable."""
    if not isinstance(u, FeFunction) or not u.is_scalar:
        raise AssemblyError("expected a scalar FeFunction")
    if u.mesh is not mesh:
        raise StaleFunctionError("function lives on a different mesh")
    gfun = _NONLINEARITIES.get(g, g)
    uq = u.values[mesh.triangles] @ QUAD_BARY.T
    return assemble_load(mesh, gfun(uq))


# -- solves --------------------------------------------------------------

def _factor(mesh, key, matrix_fn):
    if key not in mesh._cache:
        mesh._cache[key] = spla.splu(matrix_fn().tocsc())
    return mesh._cache[key]


def mass_solve(mesh, b):
    lu = _factor(mesh, "mass_lu", lambda: assemble_mass(mesh))
    x = lu.solve(b)
    _check_residual(assemble_mass(mesh), x, b)
    return x


def spd_solve(A, b, rtol=1e-12):
    """Direct sparse solve with a residual check."""
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    x = spla.spsolve(A.tocsc(), b)
    _check_residual(A, x, b, rtol)
    return x


def _check_residual(A, x, b, rtol=1e-10):
    r = np.linalg.norm(A @ x - b)
    scale = np.linalg.norm(b) + np.linalg.norm(x)
    if not np.isfinite(r) or r > rtol * max(scale, 1e-300) + 1e-300:
        raise LinearSolverError(f"linear solve residual {r:.3e} exceeds tolerance")


def discrete_laplacian(mesh, v):
    """A v = M^{-1} K v, the discrete (negative) Laplacian of Eq. <Av,phi> = (grad v, grad phi)."""
    K = assemble_stiffness(mesh)
    return FeFunction(mesh, mass_solve(mesh, K @ v.values))


def l2_project(mesh, field):
    """L2 projection onto the P1 space.

    ``field`` is a callable of (x, y) arrays, or an (nt, 6) array of
    values at the quadrature points.
    """
    if callable(field):
        pts = quad_points(mesh)
        vq = field(pts[..., 0], pts[..., 1])
    else:
        vq = np.asarray(field, dtype=float)
    b = assemble_load(mesh, vq)
    return FeFunction(mesh, mass_solve(mesh, b))


def l2_norm(mesh, values):
    values = np.asarray(values, dtype=float)
    M = assemble_mass(mesh)
    if values.ndim == 1:
        return float(np.sqrt(max(values @ (M @ values), 0.0)))
    return float(np.sqrt(sum(max(values[:, c] @ (M @ values[:, c]), 0.0)
                             for c in range(values.shape[1]))))


def h1_seminorm(mesh, values):
    values = np.asarray(values, dtype=float)
    K = assemble_stiffness(mesh)
    if values.ndim == 1:
        return float(np.sqrt(max(values @ (K @ values), 0.0)))
    return float(np.sqrt(sum(max(values[:, c] @ (K @ values[:, c]), 0.0)
                             for c in range(values.shape[1]))))


def neg_norm(mesh, values):
    """Discrete H^{-1} norm: with vbar = v - mean_M(v), solve K z = M vbar
    on the complement of constants and return sqrt(z' K z)."""
    values = np.asarray(values, dtype=float)
    M = assemble_mass(mesh)
    K = assemble_stiffness(mesh)
    m = M @ np.ones(mesh.n_vertices)
    vol = m.sum()
    vbar = values - (m @ values) / vol
    rhs = M @ vbar
    if np.linalg.norm(rhs) == 0.0:
        return 0.0
    key = "neglap_lu"
    if key not in mesh._cache:
        n = mesh.n_vertices
        aug = sp.bmat([[K, m[:, None]], [m[None, :], None]], format="csc")
        mesh._cache[key] = spla.splu(aug)
    sol = mesh._cache[key].solve(np.concatenate([rhs, [0.0]]))
    z, lam = sol[:-1], sol[-1]
    r = np.linalg.norm(K @ z + lam * m - rhs)
    if not np.isfinite(r) or r > 1e-8 * max(np.linalg.norm(rhs), 1e-300):
        raise LinearSolverError(f"constrained solve residual {r:.3e}")
    return float(np.sqrt(max(z @ (K @ z), 0.0)))


def mean_value(mesh, values):
    """Mass-weighted mean, equal to (1/|Omega|) int v_h."""
    M = assemble_mass(mesh)
    m = M @ np.ones(mesh.n_vertices)
    return float((m @ np.asarray(values, dtype=float)) / m.sum())


def integral(mesh, values):
    """int v_h = 1' M v."""
    M = assemble_mass(mesh)
    return float(np.ones(mesh.n_vertices) @ (M @ np.asarray(values, dtype=float)))


def element_gradients(mesh, values):
    """Constant gradient of a P1 scalar per element, (nt, 2)."""
    _, grads = element_geometry(mesh)
    return np.einsum("ki,kid->kd", np.asarray(values)[mesh.triangles], grads)
