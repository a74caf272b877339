"""Superconvergent cluster recovery of gradients."""

import numpy as np
import pytest

from chadapt import fem, mesh as meshmod, recovery
from chadapt.errors import RecoveryError
from chadapt.fem import FeFunction


def test_linear_field_recovered_exactly():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    u = FeFunction(msh, 2 * msh.vertices[:, 0] + 3 * msh.vertices[:, 1])
    g = recovery.scr_recover(msh, u)
    assert np.allclose(g.values, [2.0, 3.0], atol=1e-10)


def test_constant_field_recovers_zero():
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    u = FeFunction(msh, np.full(msh.n_vertices, 5.0))
    g = recovery.scr_recover(msh, u)
    assert np.allclose(g.values, 0.0, atol=1e-10)


def test_estimator_zero_on_linear_field():
    msh = meshmod.criss_cross(0, 1, 0, 1, 4, 4)
    u = FeFunction(msh, msh.vertices[:, 0] - 0.5 * msh.vertices[:, 1] + 1.0)
    eta_k, total = recovery.recovery_estimator(msh, u)
    assert total <= 1e-12
    assert np.max(eta_k) <= 1e-12


def test_recovery_on_adapted_mesh():
    msh = meshmod.criss_cross(0, 1, 0, 1, 3, 3)
    msh, _ = meshmod.refine(msh, {0, 7, 11})
    u = FeFunction(msh, 4 * msh.vertices[:, 0] - msh.vertices[:, 1])
    g = recovery.scr_recover(msh, u)
    assert np.allclose(g.values, [4.0, -1.0], atol=1e-9)


def test_quadratic_boundary_rule_interior_agreement():
    msh = meshmod.criss_cross(0, 1, 0, 1, 6, 6)
    u = FeFunction(msh, msh.vertices[:, 0] ** 2)
    lin = recovery.scr_recover(msh, u, boundary_rule="linear")
    quad = recovery.scr_recover(msh, u, boundary_rule="quadratic")
    interior = ~msh.boundary_vertex_mask()
    assert np.allclose(lin.values[interior], quad.values[interior])
    # the quadratic rule reproduces x^2 exactly on the boundary as well
    bnd = ~interior
    assert np.allclose(quad.values[bnd, 0], 2 * msh.vertices[bnd, 0],
                       atol=1e-9)


def test_recovered_gradient_beats_raw_gradient():
    errs = {"rec": [], "raw": []}
    for n in (8, 16):
        msh = meshmod.criss_cross(0, 1, 0, 1, n, n)
        u = FeFunction(msh, np.sin(msh.vertices[:, 0])
                       * msh.vertices[:, 1] ** 2)
        g = recovery.scr_recover(msh, u)
        pts = fem.quad_points(msh)
        areas, _ = fem.element_geometry(msh)
        exact = np.stack([np.cos(pts[..., 0]) * pts[..., 1] ** 2,
                          2 * np.sin(pts[..., 0]) * pts[..., 1]], axis=-1)
        gq = np.einsum("qi,kid->kqd", fem.QUAD_BARY, g.values[msh.triangles])
        raw = fem.element_gradients(msh, u.values)[:, None, :]
        for name, approx in (("rec", gq), ("raw", raw)):
            d = approx - exact
            errs[name].append(np.sqrt(np.sum(
                areas[:, None] * fem.QUAD_W * np.sum(d ** 2, axis=-1))))
    # halving h should shrink the recovered error faster than the raw one
    assert errs["rec"][1] / errs["rec"][0] < errs["raw"][1] / errs["raw"][0]
    assert errs["rec"][1] < errs["raw"][1]


def test_vector_input_rejected():
    msh = meshmod.criss_cross(0, 1, 0, 1, 2, 2)
    with pytest.raises(RecoveryError):
        recovery.scr_recover(msh, np.zeros(msh.n_vertices))
