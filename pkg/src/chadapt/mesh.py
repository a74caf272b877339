"""Conforming triangular meshes with newest-vertex bisection.

Triangles are stored peak-first: for a triangle ``(p0, p1, p2)`` the
designated refinement edge is ``(p1, p2)`` (the edge opposite the peak
``p0``).  Bisection inserts the midpoint m of the refinement edge and
produces the children ``(m, p0, p1)`` and ``(m, p2, p0)``, so the new
vertex is the peak of both children and each child's refinement edge is
an edge of the parent.  This is the classical newest-vertex rule; it
keeps all descendants within a fixed number of similarity classes, so
shape regularity never degrades below the initial mesh.

Meshes are immutable after construction; refine/coarsen return new
meshes together with a TransferMap for moving nodal data across.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import MeshError, StaleFunctionError

_ORIENTATION_TOL = 1e-14


class Mesh:
    """Immutable conforming 2D triangulation.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, peak-first vertex ordering
    generation : monotone counter distinguishing meshes in a lineage
    n_initial_vertices : vertices 0..n_initial_vertices-1 belong to the
        initial mesh and are never removed by coarsening
    """

    def __init__(self, vertices, triangles, generation=0, n_initial_vertices=None,
                 min_angle_floor=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (nt, 3) array")
        if self.triangles.shape[0] == 0:
            raise MeshError("empty mesh")
        self.generation = int(generation)
        self.n_initial_vertices = (self.vertices.shape[0]
                                   if n_initial_vertices is None
                                   else int(n_initial_vertices))
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        if min_angle_floor is None:
            min_angle_floor = 0.5 * self.min_angle()
        self.min_angle_floor = float(min_angle_floor)
        self._cache = {}

    # -- basic queries ---------------------------------------------------

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def signed_areas(self):
        if "signed_areas" not in self._cache:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._cache["signed_areas"] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._cache["signed_areas"]

    def areas(self):
        return np.abs(self.signed_areas())

    def min_angle(self):
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosang = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return float(np.min(angles))

    def edges(self):
        """Unique edges as sorted vertex pairs plus incidence data.

        Returns (edge_vertices (ne,2), edge_triangles (ne,2) with -1 for
        boundary, is_boundary (ne,) bool).
        """
        if "edges" not in self._cache:
            t = self.triangles
            raw = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
            raw_sorted = np.sort(raw, axis=1)
            tri_of = np.tile(np.arange(self.n_triangles), 3)
            ev, inv = np.unique(raw_sorted, axis=0, return_inverse=True)
            etri = -np.ones((ev.shape[0], 2), dtype=np.int64)
            for k in range(inv.shape[0]):
                e = inv[k]
                if etri[e, 0] < 0:
                    etri[e, 0] = tri_of[k]
                elif etri[e, 1] < 0:
                    etri[e, 1] = tri_of[k]
                else:
                    raise MeshError("edge shared by more than two triangles")
            self._cache["edges"] = (ev, etri, etri[:, 1] < 0)
        return self._cache["edges"]

    def boundary_vertex_mask(self):
        if "bnd_vertices" not in self._cache:
            ev, _, is_bnd = self.edges()
            mask = np.zeros(self.n_vertices, dtype=bool)
            mask[ev[is_bnd].ravel()] = True
            self._cache["bnd_vertices"] = mask
        return self._cache["bnd_vertices"]

    def vertex_to_triangles(self):
        """List of incident triangle ids per vertex."""
        if "v2t" not in self._cache:
            v2t = [[] for _ in range(self.n_vertices)]
            for i, tri in enumerate(self.triangles):
                for v in tri:
                    v2t[v].append(i)
            self._cache["v2t"] = v2t
        return self._cache["v2t"]

    def validate(self):
        """Check conformity, orientation and the min-angle bound; raise on failure."""
        if np.any(self.signed_areas() <= _ORIENTATION_TOL):
            raise MeshError("non-positively-oriented or degenerate triangle")
        self.edges()  # raises on non-manifold edges
        if self.min_angle() < self.min_angle_floor - 1e-12:
            raise MeshError("minimum angle dropped below the shape-regularity floor")
        return True


@dataclass
class TransferMap:
    """Barycentric interpolation data mapping nodal fields between meshes."""

    source_generation: int
    target_generation: int
    tri: np.ndarray          # (nv_target,) source triangle per target vertex
    bary: np.ndarray         # (nv_target, 3) barycentric coordinates
    source_triangles: np.ndarray  # (nt_source, 3) vertex ids, frozen copy

    def __post_init__(self):
        if np.any(self.bary < -1e-12) or np.any(np.abs(self.bary.sum(axis=1) - 1.0) > 1e-12):
            raise MeshError("invalid barycentric coordinates in transfer map")


def identity_transfer(mesh):
    nv = mesh.n_vertices
    tri = np.zeros(nv, dtype=np.int64)
    bary = np.zeros((nv, 3))
    v2t = mesh.vertex_to_triangles()
    for v in range(nv):
        t = v2t[v][0]
        tri[v] = t
        bary[v] = (mesh.triangles[t] == v).astype(float)
    return TransferMap(mesh.generation, mesh.generation, tri, bary,
                       mesh.triangles.copy())


def transfer(values, tmap, source_generation):
    """Interpolate nodal values through a TransferMap.

    ``values`` is (nv_source,) or (nv_source, c); ``source_generation``
    must equal the map's source generation.
    """
    if source_generation != tmap.source_generation:
        raise StaleFunctionError(
            f"function generation {source_generation} does not match "
            f"transfer source {tmap.source_generation}")
    vals = np.asarray(values, dtype=float)
    corner = vals[tmap.source_triangles[tmap.tri]]  # (nvt, 3) or (nvt, 3, c)
    if vals.ndim == 1:
        return np.einsum("ij,ij->i", tmap.bary, corner)
    return np.einsum("ij,ijc->ic", tmap.bary, corner)


# -- initial meshes ------------------------------------------------------

def criss_cross(x0, x1, y0, y1, nx, ny):
    """Uniform criss-cross triangulation of a rectangle.

    Each of the nx*ny cells is split into four triangles around its
    center.  Refinement edges are the cell sides (the longest edges), a
    labeling that is compatible across neighboring cells.
    """
    if nx < 1 or ny < 1 or x1 <= x0 or y1 <= y0:
        raise MeshError("invalid rectangle or resolution")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    n_grid = grid.shape[0]

    def gid(i, j):
        return i * (ny + 1) + j

    centers = []
    tris = []
    for i in range(nx):
        for j in range(ny):
            c = n_grid + len(centers)
            centers.append([0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])])
            sw, se = gid(i, j), gid(i + 1, j)
            nw, ne = gid(i, j + 1), gid(i + 1, j + 1)
            # peak = center, refinement edge = cell side, CCW orientation
            tris.append([c, sw, se])  # bottom
            tris.append([c, se, ne])  # right
            tris.append([c, ne, nw])  # top
            tris.append([c, nw, sw])  # left
    vertices = np.concatenate([grid, np.array(centers)])
    mesh = Mesh(vertices, np.array(tris, dtype=np.int64), generation=0)
    mesh.validate()
    return mesh


# -- refinement ----------------------------------------------------------

def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def refine(mesh, marked):
    """Bisect every marked element at least once; apply conformity closure.

    Returns (new mesh, TransferMap from ``mesh`` to the new mesh).
    """
    marked = set(int(k) for k in marked)
    if not marked:
        return mesh, identity_transfer(mesh)
    if not all(0 <= k < mesh.n_triangles for k in marked):
        raise MeshError("marked set contains invalid element ids")

    tris = mesh.triangles
    marked_edges = set()
    for k in marked:
        p0, p1, p2 = tris[k]
        marked_edges.add(_edge_key(p1, p2))

    # closure: a triangle with any marked edge must have its refinement
    # edge marked, so the bisection pattern is consistent on both sides
    changed = True
    while changed:
        changed = False
        for tri in tris:
            p0, p1, p2 = tri
            ref = _edge_key(p1, p2)
            if ref in marked_edges:
                continue
            if (_edge_key(p2, p0) in marked_edges or
                    _edge_key(p0, p1) in marked_edges):
                marked_edges.add(ref)
                changed = True

    nv_old = mesh.n_vertices
    mid_index = {}
    new_coords = []
    for e in sorted(marked_edges):
        mid_index[e] = nv_old + len(new_coords)
        new_coords.append(0.5 * (mesh.vertices[e[0]] + mesh.vertices[e[1]]))

    new_tris = []
    # transfer data for midpoints: (source triangle, local ids of edge ends)
    mid_tri = {}

    def emit_bisect(tri_id, q0, q1, q2, depth):
        # refinement edge (q1, q2)
        e = _edge_key(q1, q2)
        if e not in marked_edges:
            new_tris.append((q0, q1, q2))
            return
        m = mid_index[e]
        mid_tri.setdefault(e, tri_id)
        if depth == 0:
            emit_bisect(tri_id, m, q0, q1, 1)
            emit_bisect(tri_id, m, q2, q0, 1)
        else:
            # children of children are never split in a single pass
            new_tris.append((m, q0, q1))
            new_tris.append((m, q2, q0))

    for i, (p0, p1, p2) in enumerate(tris):
        emit_bisect(i, p0, p1, p2, 0)

    vertices = np.concatenate([mesh.vertices, np.array(new_coords)])
    new_mesh = Mesh(vertices, np.array(new_tris, dtype=np.int64),
                    generation=mesh.generation + 1,
                    n_initial_vertices=mesh.n_initial_vertices,
                    min_angle_floor=mesh.min_angle_floor)

    # transfer map: old vertices keep their value, midpoints average the
    # edge endpoints (barycentric 1/2, 1/2 on a containing source triangle)
    nvt = new_mesh.n_vertices
    tmap_tri = np.zeros(nvt, dtype=np.int64)
    tmap_bary = np.zeros((nvt, 3))
    ident = identity_transfer(mesh)
    tmap_tri[:nv_old] = ident.tri
    tmap_bary[:nv_old] = ident.bary
    for e, m in mid_index.items():
        t = mid_tri.get(e)
        if t is None:
            # edge marked by closure but its triangles untouched cannot
            # happen: closure forces every marked-edge triangle to split
            raise MeshError("internal refinement inconsistency")
        loc = tris[t]
        bary = np.array([(loc[j] in e) * 0.5 for j in range(3)])
        tmap_tri[m] = t
        tmap_bary[m] = bary
    tmap = TransferMap(mesh.generation, new_mesh.generation,
                       tmap_tri, tmap_bary, tris.copy())
    return new_mesh, tmap


# -- coarsening ----------------------------------------------------------

def coarsen(mesh, marked):
    """Merge marked sibling pairs by reversing one bisection level.

    A newest vertex z is removed only when every triangle containing z is
    marked, has z as its peak, and the patch pairs up into siblings (2
    triangles on the boundary, 4 in the interior).  Initial-mesh vertices
    are never removed.  Requests that cannot be honored are skipped.
    """
    marked = set(int(k) for k in marked)
    if not marked:
        return mesh, identity_transfer(mesh)

    tris = mesh.triangles
    v2t = mesh.vertex_to_triangles()
    removable = {}
    for z in range(mesh.n_initial_vertices, mesh.n_vertices):
        patch = v2t[z]
        if len(patch) not in (2, 4):
            continue
        if not all(t in marked for t in patch):
            continue
        if not all(tris[t][0] == z for t in patch):
            continue
        # siblings (z,p0,p1) and (z,p2,p0) share p0 as first[1] == second[2];
        # the index pattern alone can also match children of two different
        # parents around an interior z, so require z to actually be the
        # midpoint of the reconstructed refinement edge (p1, p2)
        def is_sibling(t1, t2):
            if tris[t1][1] != tris[t2][2]:
                return False
            mid = 0.5 * (mesh.vertices[tris[t1][2]] + mesh.vertices[tris[t2][1]])
            return np.array_equal(mid, mesh.vertices[z])

        pairs = []
        used = set()
        for t1 in patch:
            if t1 in used:
                continue
            for t2 in patch:
                if t2 == t1 or t2 in used:
                    continue
                if is_sibling(t1, t2):
                    pairs.append((t1, t2))
                    used.update((t1, t2))
                    break
                if is_sibling(t2, t1):
                    pairs.append((t2, t1))
                    used.update((t1, t2))
                    break
        if len(used) == len(patch):
            removable[z] = pairs

    if not removable:
        return mesh, identity_transfer(mesh)

    merged = {}      # first-child triangle id -> parent triple
    dropped = set()  # second-child triangle ids
    for z, pairs in removable.items():
        for t1, t2 in pairs:
            parent = (tris[t1][1], tris[t1][2], tris[t2][1])
            merged[min(t1, t2)] = (max(t1, t2), parent)
            dropped.add(max(t1, t2))

    keep_vertex = np.ones(mesh.n_vertices, dtype=bool)
    keep_vertex[list(removable)] = False
    new_index = -np.ones(mesh.n_vertices, dtype=np.int64)
    new_index[keep_vertex] = np.arange(int(keep_vertex.sum()))

    new_tris = []
    for i in range(mesh.n_triangles):
        if i in dropped:
            continue
        if i in merged:
            tri = merged[i][1]
        else:
            tri = tris[i]
        new_tris.append([new_index[v] for v in tri])

    new_mesh = Mesh(mesh.vertices[keep_vertex], np.array(new_tris, dtype=np.int64),
                    generation=mesh.generation + 1,
                    n_initial_vertices=mesh.n_initial_vertices,
                    min_angle_floor=mesh.min_angle_floor)

    # surviving vertices carry their value over unchanged
    old_ids = np.flatnonzero(keep_vertex)
    ident = identity_transfer(mesh)
    tmap = TransferMap(mesh.generation, new_mesh.generation,
                       ident.tri[old_ids], ident.bary[old_ids], tris.copy())
    return new_mesh, tmap


# -- generic cross-mesh interpolation ------------------------------------

def locate_points(mesh, points, tol=1e-10):
    """Find a containing triangle and barycentric coordinates per point.

    Candidate triangles come from a centroid KD-tree; points that slip
    through (e.g. exactly on the boundary with roundoff) fall back to the
    globally best triangle by least barycentric violation.
    """
    points = np.asarray(points, dtype=float)
    tris = mesh.triangles
    p = mesh.vertices[tris]
    centroids = p.mean(axis=1)
    tree = cKDTree(centroids)

    a = p[:, 0]
    d1 = p[:, 1] - a
    d2 = p[:, 2] - a
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]

    def barys(tri_ids, pts):
        r = pts - a[tri_ids]
        l1 = (r[:, 0] * d2[tri_ids, 1] - r[:, 1] * d2[tri_ids, 0]) / det[tri_ids]
        l2 = (d1[tri_ids, 0] * r[:, 1] - d1[tri_ids, 1] * r[:, 0]) / det[tri_ids]
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    n = points.shape[0]
    out_tri = -np.ones(n, dtype=np.int64)
    out_bary = np.zeros((n, 3))
    pending = np.arange(n)
    k = 4
    while pending.size and k <= max(64, mesh.n_triangles):
        kk = min(k, mesh.n_triangles)
        _, cand = tree.query(points[pending], k=kk)
        cand = np.atleast_2d(cand)
        still = []
        for row, pi in enumerate(pending):
            b = barys(cand[row], np.repeat(points[pi][None], kk, axis=0))
            good = np.flatnonzero(b.min(axis=1) >= -tol)
            if good.size:
                j = good[0]
                out_tri[pi] = cand[row, j]
                out_bary[pi] = b[j]
            else:
                still.append(pi)
        pending = np.array(still, dtype=np.int64)
        k *= 4
    for pi in pending:
        b = barys(np.arange(mesh.n_triangles),
                  np.repeat(points[pi][None], mesh.n_triangles, axis=0))
        j = int(np.argmax(b.min(axis=1)))
        out_tri[pi] = j
        out_bary[pi] = b[j]
    out_bary = np.clip(out_bary, 0.0, None)
    out_bary /= out_bary.sum(axis=1, keepdims=True)
    return out_tri, out_bary


def make_transfer(source_mesh, target_mesh):
    """Interpolation transfer map between two arbitrary meshes of one domain."""
    tri, bary = locate_points(source_mesh, target_mesh.vertices)
    return TransferMap(source_mesh.generation, target_mesh.generation,
                       tri, bary, source_mesh.triangles.copy())
