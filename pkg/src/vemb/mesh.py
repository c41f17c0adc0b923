"""Polygonal meshes: representation, file I/O, generators, and shape checks.

A mesh is immutable after construction.  Edges, adjacency, geometric
quantities and boundary wall tags are all derived in the constructor so that
every downstream module can treat them as plain read-only arrays.
"""

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .polybasis import polygon_area_centroid, polygon_kernel

__all__ = [
    "MeshError",
    "MeshFormatError",
    "MeshTopologyError",
    "CellGeometry",
    "PolygonalMesh",
    "load_mesh",
    "save_mesh",
    "mesh_hash",
    "generate_family",
    "MESH_FAMILIES",
    "ValidationReport",
    "validate",
]

WALL_TAGS = ("left", "right", "bottom", "top", "other")
_WALL_TOL = 1e-12


class MeshError(Exception):
    """Base class for mesh construction problems."""


class MeshFormatError(MeshError):
    """Malformed mesh file."""


class MeshTopologyError(MeshError):
    """Non-manifold edges, clockwise or degenerate cells."""


@dataclass(frozen=True)
class CellGeometry:
    """Per-cell geometric quantities used by the local elements."""

    diameter: float
    centroid: np.ndarray
    area: float
    vertex_scale: np.ndarray  # h_v of each cell vertex, in loop order


def _segments_intersect(p1, p2, p3, p4):
    """Proper intersection test for open segments p1-p2 and p3-p4."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


class PolygonalMesh:
    """A conforming decomposition of a planar domain into simple polygons.

    Parameters
    ----------
    vertices : (NV, 2) array_like
    cells : sequence of int sequences
        Counterclockwise vertex-index loops, one per cell.

    Raises
    ------
    MeshTopologyError
        On clockwise or self-intersecting cells, repeated loop vertices or
        non-manifold edges.
    """

    def __init__(self, vertices, cells):
        verts = np.array(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise MeshTopologyError("vertices must be an (NV, 2) array")
        cell_list = [np.asarray(c, dtype=int) for c in cells]
        self.vertices = verts
        self.cells = cell_list
        self.num_vertices = len(verts)
        self.num_cells = len(cell_list)

        areas = np.empty(self.num_cells)
        centroids = np.empty((self.num_cells, 2))
        diameters = np.empty(self.num_cells)
        for ic, loop in enumerate(cell_list):
            if len(loop) < 3:
                raise MeshTopologyError(f"cell {ic} has fewer than 3 vertices")
            if len(np.unique(loop)) != len(loop):
                raise MeshTopologyError(f"cell {ic} repeats a vertex")
            pts = verts[loop]
            area, centroid = polygon_area_centroid(pts)
            if area <= 0.0:
                raise MeshTopologyError(
                    f"cell {ic} is clockwise or degenerate (signed area {area:.3e})")
            self._check_simple(pts, ic)
            areas[ic] = area
            centroids[ic] = centroid
            d = pts[:, None, :] - pts[None, :, :]
            diameters[ic] = np.sqrt((d**2).sum(-1)).max()
        self.cell_area = areas
        self.cell_centroid = centroids
        self.cell_diameter = diameters
        self.h = float(diameters.max())

        self._build_edges()
        self._build_vertex_scale()
        self._assign_boundary_markers()
        for arr in (self.vertices, self.cell_area, self.cell_centroid,
                    self.cell_diameter, self.edges, self.edge_length,
                    self.edge_tangent, self.edge_normal, self.edge_midpoint,
                    self.edge_cells, self.vertex_scale):
            arr.setflags(write=False)

    @staticmethod
    def _check_simple(pts, ic):
        m = len(pts)
        for i in range(m):
            a1, a2 = pts[i], pts[(i + 1) % m]
            for j in range(i + 1, m):
                if j == i or (j + 1) % m == i or (i + 1) % m == j:
                    continue
                if _segments_intersect(a1, a2, pts[j], pts[(j + 1) % m]):
                    raise MeshTopologyError(f"cell {ic} is self-intersecting")

    def _build_edges(self):
        edge_index = {}
        edges = []
        edge_cells = []
        cell_edges = []
        cell_edge_orient = []
        for ic, loop in enumerate(self.cells):
            m = len(loop)
            eids = np.empty(m, dtype=int)
            orient = np.empty(m, dtype=int)
            for i in range(m):
                a, b = int(loop[i]), int(loop[(i + 1) % m])
                key = (min(a, b), max(a, b))
                if key not in edge_index:
                    edge_index[key] = len(edges)
                    edges.append(key)
                    edge_cells.append([-1, -1])
                eid = edge_index[key]
                slot = 0 if edge_cells[eid][0] == -1 else 1
                if edge_cells[eid][slot] != -1:
                    raise MeshTopologyError(
                        f"edge {key} is shared by more than two cells")
                edge_cells[eid][slot] = ic
                eids[i] = eid
                orient[i] = 1 if a < b else -1
            cell_edges.append(eids)
            cell_edge_orient.append(orient)
        self.edges = np.array(edges, dtype=int)
        self.num_edges = len(edges)
        self.edge_cells = np.array(edge_cells, dtype=int)
        self.cell_edges = cell_edges
        self.cell_edge_orient = cell_edge_orient

        va = self.vertices[self.edges[:, 0]]
        vb = self.vertices[self.edges[:, 1]]
        self.edge_length = np.linalg.norm(vb - va, axis=1)
        if np.any(self.edge_length <= 0.0):
            raise MeshTopologyError("zero-length edge")
        self.edge_tangent = (vb - va) / self.edge_length[:, None]
        # global edge normal: tangent rotated by -90 degrees
        self.edge_normal = np.column_stack(
            [self.edge_tangent[:, 1], -self.edge_tangent[:, 0]])
        self.edge_midpoint = 0.5 * (va + vb)
        self.boundary_edge = self.edge_cells[:, 1] == -1
        self.boundary_vertex = np.zeros(self.num_vertices, dtype=bool)
        for eid in np.nonzero(self.boundary_edge)[0]:
            self.boundary_vertex[self.edges[eid]] = True

    def _build_vertex_scale(self):
        sums = np.zeros(self.num_vertices)
        counts = np.zeros(self.num_vertices)
        for ic, loop in enumerate(self.cells):
            sums[loop] += self.cell_diameter[ic]
            counts[loop] += 1
        self.vertex_scale = sums / np.maximum(counts, 1)

    def _assign_boundary_markers(self):
        """Tag boundary edges by wall when the mesh lives in the unit square."""
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        on_unit_square = (np.all(lo >= -_WALL_TOL) and np.all(hi <= 1 + _WALL_TOL))
        markers = {}
        for eid in np.nonzero(self.boundary_edge)[0]:
            tag = "other"
            if on_unit_square:
                a, b = self.vertices[self.edges[eid]]
                for name, coord, value in (("left", 0, 0.0), ("right", 0, 1.0),
                                           ("bottom", 1, 0.0), ("top", 1, 1.0)):
                    if abs(a[coord] - value) < _WALL_TOL and abs(b[coord] - value) < _WALL_TOL:
                        tag = name
                        break
            markers[int(eid)] = tag
        self.boundary_markers = markers

    def cell_geometry(self, ic):
        loop = self.cells[ic]
        return CellGeometry(
            diameter=float(self.cell_diameter[ic]),
            centroid=self.cell_centroid[ic].copy(),
            area=float(self.cell_area[ic]),
            vertex_scale=self.vertex_scale[loop].copy(),
        )

    def cell_vertices(self, ic):
        return self.vertices[self.cells[ic]]


def load_mesh(path):
    """Read a mesh from the plain-text format.

    Format: first line ``NV NC``; NV lines ``x y``; NC lines
    ``m i1 ... im`` with 0-based counterclockwise vertex indices.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    it = iter(tokens)
    try:
        nv = int(next(it))
        nc = int(next(it))
        verts = np.array([[float(next(it)), float(next(it))] for _ in range(nv)])
        cells = []
        for _ in range(nc):
            m = int(next(it))
            if m < 3:
                raise MeshFormatError("cell with fewer than 3 vertices")
            loop = [int(next(it)) for _ in range(m)]
            if any(i < 0 or i >= nv for i in loop):
                raise MeshFormatError("vertex index out of range")
            cells.append(loop)
    except StopIteration:
        raise MeshFormatError(f"truncated mesh file: {path}") from None
    except ValueError as exc:
        raise MeshFormatError(f"cannot parse mesh file {path}: {exc}") from None
    leftovers = sum(1 for _ in it)
    if leftovers:
        raise MeshFormatError(f"{leftovers} unexpected trailing tokens in {path}")
    return PolygonalMesh(verts, cells)


def _serialize(mesh):
    buf = io.StringIO()
    buf.write(f"{mesh.num_vertices} {mesh.num_cells}\n")
    for x, y in mesh.vertices:
        buf.write(f"{float(x)!r} {float(y)!r}\n")
    for loop in mesh.cells:
        buf.write(str(len(loop)) + " " + " ".join(str(int(i)) for i in loop) + "\n")
    return buf.getvalue()


def save_mesh(mesh, path):
    """Write a mesh in the plain-text format understood by :func:`load_mesh`."""
    with open(path, "w") as fh:
        fh.write(_serialize(mesh))


def mesh_hash(mesh):
    """SHA-256 of the canonical text serialization (used by checkpoints)."""
    return hashlib.sha256(_serialize(mesh).encode()).hexdigest()


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

MESH_FAMILIES = ("quad_distorted", "triangular", "voronoi", "concave_rhombic",
                 "quad_uniform")


def _grid_vertices(n):
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def _grid_vid(i, j, n):
    return i * (n + 1) + j


def _quad_uniform(n):
    verts = _grid_vertices(n)
    cells = []
    for i in range(n):
        for j in range(n):
            cells.append([_grid_vid(i, j, n), _grid_vid(i + 1, j, n),
                          _grid_vid(i + 1, j + 1, n), _grid_vid(i, j + 1, n)])
    return verts, cells


def _quad_distorted(n, seed):
    verts, cells = _quad_uniform(n)
    rng = np.random.default_rng([int(seed), int(n), 1])
    amp = 0.2 / n
    for i in range(1, n):
        for j in range(1, n):
            r = amp * np.sqrt(rng.uniform())
            phi = rng.uniform(0.0, 2.0 * np.pi)
            verts[_grid_vid(i, j, n)] += r * np.array([np.cos(phi), np.sin(phi)])
    return verts, cells


def _triangular(n):
    verts = _grid_vertices(n)
    cells = []
    for i in range(n):
        for j in range(n):
            v00 = _grid_vid(i, j, n)
            v10 = _grid_vid(i + 1, j, n)
            v11 = _grid_vid(i + 1, j + 1, n)
            v01 = _grid_vid(i, j + 1, n)
            if (i + j) % 2 == 0:
                cells.append([v00, v10, v11])
                cells.append([v00, v11, v01])
            else:
                cells.append([v00, v10, v01])
                cells.append([v10, v11, v01])
    return verts, cells


def _concave_rhombic(n):
    """Tile each grid square with one convex and one concave quadrilateral.

    The square is cut from its bottom-left to its top-right corner through an
    off-diagonal interior point, giving a reflex vertex in one of the two
    pieces; the point alternates sides in a checkerboard so the pattern has no
    preferred direction.
    """
    verts, _ = _quad_uniform(n)
    verts = list(map(np.asarray, verts))
    cells = []
    for i in range(n):
        for j in range(n):
            v00 = _grid_vid(i, j, n)
            v10 = _grid_vid(i + 1, j, n)
            v11 = _grid_vid(i + 1, j + 1, n)
            v01 = _grid_vid(i, j + 1, n)
            base = np.array([i / n, j / n])
            if (i + j) % 2 == 0:
                off = np.array([0.62, 0.38]) / n   # reflex lands in the lower piece
            else:
                off = np.array([0.38, 0.62]) / n   # reflex lands in the upper piece
            pid = len(verts)
            verts.append(base + off)
            cells.append([v00, v10, v11, pid])
            cells.append([v00, pid, v11, v01])
    return np.array(verts), cells


def _clip_halfplane(poly, point, normal):
    """Clip a convex polygon by n.(x - p) <= 0 (Sutherland–Hodgman step)."""
    out = []
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        da = np.dot(normal, a - point)
        db = np.dot(normal, b - point)
        if da <= 0.0:
            out.append(a)
        if (da < 0.0) != (db < 0.0):
            t = da / (da - db)
            out.append(a + t * (b - a))
    return out


def _voronoi_cells(sites):
    """Clipped Voronoi cells of sites in the unit square via mirrored sites."""
    from scipy.spatial import Voronoi

    mirrored = [sites]
    for axis, value in ((0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0)):
        m = sites.copy()
        m[:, axis] = 2.0 * value - m[:, axis]
        mirrored.append(m)
    vor = Voronoi(np.vstack(mirrored))
    cells = []
    for isite in range(len(sites)):
        region = vor.regions[vor.point_region[isite]]
        poly = [vor.vertices[k] for k in region]
        area, _ = polygon_area_centroid(poly)
        if area < 0:
            poly = poly[::-1]
        # mirroring already bounds the cell; clip only to kill fp overshoot
        for pt, nrm in (((0.0, 0.0), (-1.0, 0.0)), ((1.0, 0.0), (1.0, 0.0)),
                        ((0.0, 0.0), (0.0, -1.0)), ((0.0, 1.0), (0.0, 1.0))):
            poly = _clip_halfplane(poly, np.array(pt), np.array(nrm))
        cells.append(np.array(poly))
    return cells


def _snap(value):
    for target in (0.0, 1.0):
        if abs(value - target) < 1e-9:
            return target
    return value


def _dedupe_polygons(polys):
    """Merge coincident polygon corners into a shared vertex table."""
    key_index = {}
    verts = []
    cells = []
    for poly in polys:
        loop = []
        for p in poly:
            x, y = _snap(p[0]), _snap(p[1])
            key = (round(x, 9), round(y, 9))
            if key not in key_index:
                key_index[key] = len(verts)
                verts.append((x, y))
            vid = key_index[key]
            if not loop or loop[-1] != vid:
                loop.append(vid)
        if loop[0] == loop[-1]:
            loop.pop()
        cells.append(loop)
    return np.array(verts), cells


def _collapse_short_edges(verts, cells, min_len):
    """Merge endpoints of edges shorter than min_len (keeps the tiling exact).

    Wall vertices win over interior ones so the boundary stays on the walls;
    corner vertices are never moved.
    """
    verts = [np.asarray(v, dtype=float) for v in verts]

    def anchor_rank(p):
        on_x = p[0] in (0.0, 1.0)
        on_y = p[1] in (0.0, 1.0)
        return int(on_x) + int(on_y)

    for _ in range(20):
        best = None
        for loop in cells:
            m = len(loop)
            for i in range(m):
                a, b = loop[i], loop[(i + 1) % m]
                d = np.linalg.norm(verts[a] - verts[b])
                if d < min_len and (best is None or d < best[0]):
                    best = (d, min(a, b), max(a, b))
        if best is None:
            break
        _, a, b = best
        ra, rb = anchor_rank(verts[a]), anchor_rank(verts[b])
        if ra > rb:
            target = verts[a]
        elif rb > ra:
            target = verts[b]
        else:
            target = 0.5 * (verts[a] + verts[b])
            target = np.array([_snap(target[0]), _snap(target[1])])
        verts[a] = target
        verts[b] = target
        new_cells = []
        for loop in cells:
            out = []
            for vid in loop:
                vid = a if vid == b else vid
                if not out or out[-1] != vid:
                    out.append(vid)
            if out[0] == out[-1]:
                out.pop()
            if len(out) >= 3:
                new_cells.append(out)
        cells = new_cells
    return np.array(verts), cells


def _voronoi(n, seed, lloyd_sweeps=2):
    rng = np.random.default_rng([int(seed), int(n), 3])
    sites = rng.uniform(0.0, 1.0, size=(n * n, 2))
    for _ in range(lloyd_sweeps):
        polys = _voronoi_cells(sites)
        sites = np.array([polygon_area_centroid(p)[1] for p in polys])
    polys = _voronoi_cells(sites)
    verts, cells = _dedupe_polygons(polys)
    verts, cells = _collapse_short_edges(verts, cells, min_len=0.09 / n)
    used = sorted({v for loop in cells for v in loop})
    remap = {v: i for i, v in enumerate(used)}
    verts = verts[used]
    cells = [[remap[v] for v in loop] for loop in cells]
    return verts, cells


def generate_family(family, n, seed=0):
    """Deterministically generate one of the five built-in mesh families.

    Parameters
    ----------
    family : str
        One of ``quad_distorted``, ``triangular``, ``voronoi``,
        ``concave_rhombic``, ``quad_uniform``.
    n : int
        Subdivisions per side (the voronoi family seeds n*n sites).
    seed : int
        Random seed; only the distorted and voronoi families consume it.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if family == "quad_uniform":
        verts, cells = _quad_uniform(n)
    elif family == "quad_distorted":
        verts, cells = _quad_distorted(n, seed)
    elif family == "triangular":
        verts, cells = _triangular(n)
    elif family == "concave_rhombic":
        verts, cells = _concave_rhombic(n)
    elif family == "voronoi":
        verts, cells = _voronoi(n, seed)
    else:
        raise ValueError(f"unknown mesh family {family!r}")
    return PolygonalMesh(verts, cells)


# ---------------------------------------------------------------------------
# shape-regularity validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    """Outcome of the star-shapedness (A1) and edge-length (A2) checks."""

    shape_tolerance: float
    ok: bool
    a1_failures: list = field(default_factory=list)
    a2_failures: list = field(default_factory=list)
    kernel_radius_ratio: np.ndarray = None  # per cell: kernel radius / h_E
    min_edge_ratio: np.ndarray = None       # per cell: min edge length / h_E

    def summary(self):
        lines = [f"cells checked: {len(self.kernel_radius_ratio)}",
                 f"rho = {self.shape_tolerance}",
                 f"min kernel radius ratio: {self.kernel_radius_ratio.min():.4f}",
                 f"min edge length ratio:  {self.min_edge_ratio.min():.4f}"]
        if self.a1_failures:
            lines.append(f"A1 violations: {self.a1_failures}")
        if self.a2_failures:
            lines.append(f"A2 violations: {self.a2_failures}")
        lines.append("PASS" if self.ok else "FAIL")
        return "\n".join(lines)


def validate(mesh, shape_tolerance):
    """Check A1 (kernel ball of radius rho*h_E) and A2 (edge >= rho*h_E) per cell."""
    rho = float(shape_tolerance)
    nr = mesh.num_cells
    kernel_ratio = np.empty(nr)
    edge_ratio = np.empty(nr)
    a1_fail, a2_fail = [], []
    for ic in range(nr):
        pts = mesh.cell_vertices(ic)
        h_e = mesh.cell_diameter[ic]
        _, radius = polygon_kernel(pts)
        kernel_ratio[ic] = radius / h_e
        lengths = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        edge_ratio[ic] = lengths.min() / h_e
        if kernel_ratio[ic] < rho * (1.0 - 1e-9):
            a1_fail.append(ic)
        if edge_ratio[ic] < rho * (1.0 - 1e-9):
            a2_fail.append(ic)
    return ValidationReport(
        shape_tolerance=rho,
        ok=not (a1_fail or a2_fail),
        a1_failures=a1_fail,
        a2_failures=a2_fail,
        kernel_radius_ratio=kernel_ratio,
        min_edge_ratio=edge_ratio,
    )
