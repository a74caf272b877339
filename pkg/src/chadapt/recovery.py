"""Superconvergent cluster recovery (SCR) of P1 gradients.

At each vertex z the nodal values of u over the cluster of vertices of
all elements containing z are fitted with a linear polynomial in ordinary
least squares; the fitted slope is the recovered gradient at z.  The
cluster is grown by one ring whenever the fit is rank deficient (fewer
than 3 non-collinear points), which also covers boundary vertices.
"""

from dataclasses import dataclass

import numpy as np

from . import fem
from .errors import RecoveryError
from .fem import FeFunction, QUAD_BARY, QUAD_W


@dataclass
class RecoveredGradient:
    """Vector-valued P1 interpolant of the nodal recovered gradients."""

    mesh: object
    values: np.ndarray  # (nv, 2)

    @property
    def generation(self):
        return self.mesh.generation


def _vertex_rings(mesh):
    """Adjacency: for each vertex, the sorted vertex ids of its patch
    (vertices of all incident elements, itself included)."""
    if "scr_rings" not in mesh._cache:
        rings = [set() for _ in range(mesh.n_vertices)]
        for tri in mesh.triangles:
            for v in tri:
                rings[v].update(int(x) for x in tri)
        mesh._cache["scr_rings"] = [np.array(sorted(r)) for r in rings]
    return mesh._cache["scr_rings"]


def _fit_plane(coords, vals):
    """Least-squares fit a + b x + c y; returns (b, c) or None if the
    cluster is (nearly) collinear."""
    centroid = coords.mean(axis=0)
    shifted = coords - centroid
    A = np.column_stack([np.ones(len(vals)), shifted])
    # collinearity test on the shifted coordinates
    if len(vals) < 3:
        return None
    s = np.linalg.svd(shifted, compute_uv=False)
    scale = np.linalg.norm(shifted) + 1e-300
    if s[-1] <= 1e-10 * scale:
        return None
    sol, *_ = np.linalg.lstsq(A, vals, rcond=None)
    return sol[1:]


def _fit_quadratic_grad(coords, vals, at):
    """Least-squares quadratic fit; returns its gradient evaluated at ``at``,
    or None when the cluster does not determine a quadratic."""
    if len(vals) < 6:
        return None
    centroid = coords.mean(axis=0)
    x, y = (coords - centroid).T
    A = np.column_stack([np.ones(len(vals)), x, y, x * x, x * y, y * y])
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        return None
    sol, *_ = np.linalg.lstsq(A, vals, rcond=None)
    zx, zy = at - centroid
    return np.array([sol[1] + 2 * sol[3] * zx + sol[4] * zy,
                     sol[2] + sol[4] * zx + 2 * sol[5] * zy])


def _grow(rings, cluster):
    grown = set(cluster.tolist())
    for v in cluster:
        grown.update(rings[v].tolist())
    return np.array(sorted(grown))


def scr_recover(mesh, u, boundary_rule="linear"):
    """Recovered gradient G u as a vector P1 field.

    boundary_rule 'linear' applies the same first-ring linear fit at every
    vertex (growing the cluster only on rank deficiency).  'quadratic'
    fits a quadratic over a two-ring cluster at boundary vertices and
    evaluates its gradient at the vertex, which restores full second-order
    recovery accuracy along the boundary.
    """
    if not isinstance(u, FeFunction) or not u.is_scalar:
        raise RecoveryError("expected a scalar FeFunction")
    rings = _vertex_rings(mesh)
    bnd = mesh.boundary_vertex_mask() if boundary_rule == "quadratic" else None
    out = np.empty((mesh.n_vertices, 2))
    for z in range(mesh.n_vertices):
        cluster = rings[z]
        if bnd is not None and bnd[z]:
            cluster = _grow(rings, cluster)
            g = _fit_quadratic_grad(mesh.vertices[cluster], u.values[cluster],
                                    mesh.vertices[z])
            if g is not None:
                out[z] = g
                continue
        while True:
            g = _fit_plane(mesh.vertices[cluster], u.values[cluster])
            if g is not None:
                break
            grown = _grow(rings, cluster)
            if len(grown) == len(cluster):
                raise RecoveryError(
                    f"cluster around vertex {z} cannot be made well-posed")
            cluster = grown
        out[z] = g
    return RecoveredGradient(mesh, out)


def recovery_estimator(mesh, u, boundary_rule="linear"):
    """Per-element eta_K = ||G u - grad u_h||_{L2(K)} and the global
    estimator E with E^2 = sum eta_K^2."""
    g = scr_recover(mesh, u, boundary_rule=boundary_rule)
    areas, _ = fem.element_geometry(mesh)
    grad_u = fem.element_gradients(mesh, u.values)              # (nt, 2)
    gq = np.einsum("qi,kid->kqd", QUAD_BARY, g.values[mesh.triangles])
    diff = gq - grad_u[:, None, :]
    eta_sq = areas * np.einsum("q,kqd->k", QUAD_W, diff ** 2)
    eta_k = np.sqrt(np.maximum(eta_sq, 0.0))
    return eta_k, float(np.sqrt(eta_sq.sum()))
