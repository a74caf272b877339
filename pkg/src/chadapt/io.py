"""Artifact writers: legacy ASCII VTK snapshots and the history CSV.

Both writers are deterministic: vertex order is the mesh generation
order and floats are printed with repr-exact precision, so identical
runs produce byte-identical files.
"""

import csv

import numpy as np

from .estimators import TimeIndicatorBreakdown

HISTORY_FIXED_COLUMNS = ("step", "t", "tau", "nodes", "elements", "energy",
                         "eta_time", "eta_space", "newton_iters")
SPACE_COLUMNS = ("E_tilde", "alpha_u", "E_u", "res_eta1", "res_eta2")
HISTORY_COLUMNS = (HISTORY_FIXED_COLUMNS + TimeIndicatorBreakdown.TERMS
                   + SPACE_COLUMNS)


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_history(path, logs):
    """history.csv with one row per accepted step, fixed column schema."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for lg in logs:
            row = [lg.step, _fmt(lg.t), _fmt(lg.tau), lg.n_nodes,
                   lg.n_elements, _fmt(lg.energy), _fmt(lg.eta_time),
                   _fmt(lg.eta_space), lg.newton_iters]
            row += [_fmt(lg.time_terms[name])
                    for name in TimeIndicatorBreakdown.TERMS]
            row += [_fmt(lg.space_terms.get(name, 0.0))
                    for name in SPACE_COLUMNS]
            writer.writerow(row)


def write_vtk(path, mesh, point_data=None, cell_data=None, title="chadapt"):
    """Legacy ASCII VTK unstructured grid of the triangulation (z = 0)."""
    point_data = point_data or {}
    cell_data = cell_data or {}
    nv, nt = mesh.n_vertices, mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    for x, y in mesh.vertices:
        lines.append(f"{x!r} {y!r} 0.0")
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(repr(float(v)) for v in np.asarray(values))
    if cell_data:
        lines.append(f"CELL_DATA {nt}")
        for name, values in cell_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(repr(float(v)) for v in np.asarray(values))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_snapshot(path, state, eta_k, boundary_rule="linear"):
    """VTK snapshot with u, w, the recovered gradient magnitude and the
    per-element indicator."""
    from . import recovery
    from .fem import FeFunction
    g = recovery.scr_recover(state.mesh, FeFunction(state.mesh, state.u),
                             boundary_rule=boundary_rule)
    gmag = np.linalg.norm(g.values, axis=1)
    write_vtk(path, state.mesh,
              point_data={"u": state.u, "w": state.w, "grad_recovered": gmag},
              cell_data={"eta_K": eta_k})
