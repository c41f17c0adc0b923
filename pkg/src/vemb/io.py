"""Field export (legacy VTK polygons), a matching reader, and checkpoints.

The checkpoint format is plain text for bit-exact portability: a header with
the mesh hash, space degrees and time position followed by the two dof
vectors, one C99 hex float per line.
"""

import numpy as np

from .mesh import mesh_hash
from .polybasis import space_dim
from .solver import SolutionState

__all__ = ["export_fields", "read_legacy_vtk", "save_checkpoint",
           "load_checkpoint", "CheckpointError"]


class CheckpointError(Exception):
    pass


def _vertex_field_samples(solver, state):
    """Cellwise projected polynomials sampled at vertices, averaged across
    the cells meeting each vertex (display values only)."""
    mesh = solver.mesh
    nv = mesh.num_vertices
    sums = np.zeros((nv, 4))  # psi, theta, u1, u2
    counts = np.zeros(nv)
    d1 = space_dim(solver.k - 1)
    for ic, loop in enumerate(mesh.cells):
        se = solver.stream_elements[ic]
        te = solver.temp_elements[ic]
        sloc = state.psi[solver.imap.stream_cell_dofs[ic]]
        tloc = state.theta[solver.imap.temp_cell_dofs[ic]]
        pts = mesh.vertices[loop]
        svals = se.basis.eval(pts)
        tvals = te.basis.eval(pts)
        psi_v = svals.T @ (se.projectors.PiD @ sloc)
        th_v = tvals.T @ (te.projectors.PiNabla @ tloc)
        u1_v = svals[:d1].T @ (se.projectors.PiCurl[0] @ sloc)
        u2_v = svals[:d1].T @ (se.projectors.PiCurl[1] @ sloc)
        sums[loop] += np.column_stack([psi_v, th_v, u1_v, u2_v])
        counts[loop] += 1
    return sums / counts[:, None]


def export_fields(solver, state, path, title="vemb fields"):
    """Write psi, theta and the velocity as point data on a legacy VTK file."""
    mesh = solver.mesh
    fields = _vertex_field_samples(solver, state)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.num_vertices} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.16e} {y:.16e} 0.0\n")
        size = sum(len(c) + 1 for c in mesh.cells)
        fh.write(f"CELLS {mesh.num_cells} {size}\n")
        for loop in mesh.cells:
            fh.write(str(len(loop)) + " " + " ".join(str(int(v)) for v in loop) + "\n")
        fh.write(f"CELL_TYPES {mesh.num_cells}\n")
        fh.write("\n".join(["7"] * mesh.num_cells) + "\n")  # VTK_POLYGON
        fh.write(f"POINT_DATA {mesh.num_vertices}\n")
        for name, col in (("psi", 0), ("theta", 1)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write("\n".join(f"{v:.16e}" for v in fields[:, col]) + "\n")
        fh.write("VECTORS velocity double\n")
        for u1, u2 in fields[:, 2:]:
            fh.write(f"{u1:.16e} {u2:.16e} 0.0\n")


def read_legacy_vtk(path):
    """Parse a file written by :func:`export_fields` back into arrays.

    Returns a dict with points, cells, and the point-data fields; used by the
    round-trip schema test and available for quick postprocessing.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    if not lines[0].startswith("# vtk DataFile"):
        raise ValueError("not a legacy VTK file")
    if lines[2] != "ASCII" or lines[3] != "DATASET UNSTRUCTURED_GRID":
        raise ValueError("unsupported VTK layout")
    i = 4
    out = {}
    assert lines[i].startswith("POINTS")
    npts = int(lines[i].split()[1])
    pts = np.array([[float(v) for v in lines[i + 1 + j].split()] for j in range(npts)])
    out["points"] = pts[:, :2]
    i += 1 + npts
    assert lines[i].startswith("CELLS")
    ncells = int(lines[i].split()[1])
    cells = []
    for j in range(ncells):
        row = [int(v) for v in lines[i + 1 + j].split()]
        if row[0] != len(row) - 1:
            raise ValueError("malformed CELLS row")
        cells.append(row[1:])
    out["cells"] = cells
    i += 1 + ncells
    assert lines[i].startswith("CELL_TYPES")
    i += 1 + ncells
    assert lines[i].startswith("POINT_DATA")
    i += 1
    fields = {}
    while i < len(lines) and lines[i]:
        head = lines[i].split()
        if head[0] == "SCALARS":
            name = head[1]
            i += 2  # skip LOOKUP_TABLE
            fields[name] = np.array([float(lines[i + j]) for j in range(npts)])
            i += npts
        elif head[0] == "VECTORS":
            name = head[1]
            i += 1
            fields[name] = np.array(
                [[float(v) for v in lines[i + j].split()] for j in range(npts)])
            i += npts
        else:
            raise ValueError(f"unexpected VTK section {head[0]!r}")
    out["fields"] = fields
    return out


def save_checkpoint(path, solver, state):
    """Write the state with enough metadata to refuse mismatched restarts."""
    with open(path, "w") as fh:
        fh.write("VEMB-CHECKPOINT 1\n")
        fh.write(f"mesh_hash {mesh_hash(solver.mesh)}\n")
        fh.write(f"k {solver.k}\n")
        fh.write(f"l {solver.l}\n")
        fh.write(f"n {state.n}\n")
        fh.write(f"t {float(state.t).hex()}\n")
        for name, vec in (("psi", state.psi), ("theta", state.theta)):
            fh.write(f"{name} {len(vec)}\n")
            fh.write("\n".join(float(v).hex() for v in vec) + "\n")


def load_checkpoint(path, solver=None):
    """Read a checkpoint; when a solver is given, verify mesh hash and degrees."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "VEMB-CHECKPOINT 1":
        raise CheckpointError("not a vemb checkpoint")
    meta = {}
    i = 1
    for key in ("mesh_hash", "k", "l", "n", "t"):
        name, value = lines[i].split(maxsplit=1)
        if name != key:
            raise CheckpointError(f"expected header field {key!r}, got {name!r}")
        meta[key] = value
        i += 1
    vectors = {}
    for name in ("psi", "theta"):
        head, count = lines[i].split()
        if head != name:
            raise CheckpointError(f"expected vector {name!r}")
        count = int(count)
        vectors[name] = np.array([float.fromhex(v) for v in lines[i + 1: i + 1 + count]])
        i += 1 + count
    if solver is not None:
        if meta["mesh_hash"] != mesh_hash(solver.mesh):
            raise CheckpointError("checkpoint mesh does not match the solver mesh")
        if int(meta["k"]) != solver.k or int(meta["l"]) != solver.l:
            raise CheckpointError("checkpoint space degrees do not match")
        if (len(vectors["psi"]) != solver.imap.n_stream
                or len(vectors["theta"]) != solver.imap.n_temp):
            raise CheckpointError("checkpoint vector lengths do not match")
    state = SolutionState(vectors["psi"], vectors["theta"],
                          n=int(meta["n"]), t=float.fromhex(meta["t"]))
    return state, meta
