import numpy as np
import pytest

from vemb.mesh import (MESH_FAMILIES, MeshFormatError, MeshTopologyError,
                       PolygonalMesh, generate_family, load_mesh, mesh_hash,
                       save_mesh, validate)


def write(tmp_path, text):
    path = tmp_path / "mesh.txt"
    path.write_text(text)
    return str(path)


def test_load_single_square(tmp_path):
    path = write(tmp_path, "4 1\n0 0\n1 0\n1 1\n0 1\n4 0 1 2 3\n")
    m = load_mesh(path)
    assert m.num_cells == 1
    assert m.num_edges == 4
    assert m.boundary_edge.all()
    assert m.h == pytest.approx(np.sqrt(2.0))
    tags = sorted(m.boundary_markers.values())
    assert tags == ["bottom", "left", "right", "top"]


def test_load_2x2_grid_topology(tmp_path):
    # hand enumeration: 9 vertices, 4 cells, 12 edges of which 4 interior
    m = generate_family("quad_uniform", 2)
    assert (m.num_cells, m.num_vertices, m.num_edges) == (4, 9, 12)
    assert int(m.boundary_edge.sum()) == 8
    assert m.h == pytest.approx(np.sqrt(2.0) / 2.0)


def test_clockwise_cell_rejected(tmp_path):
    path = write(tmp_path, "4 1\n0 0\n1 0\n1 1\n0 1\n4 0 3 2 1\n")
    with pytest.raises(MeshTopologyError):
        load_mesh(path)


def test_malformed_file_rejected(tmp_path):
    with pytest.raises(MeshFormatError):
        load_mesh(write(tmp_path, "4 1\n0 0\n1 0\n"))
    with pytest.raises(MeshFormatError):
        load_mesh(write(tmp_path, "3 1\n0 0\n1 0\n0 1\n3 0 1 7\n"))


def test_nonmanifold_edge_rejected():
    verts = [[0, 0], [1, 0], [0, 1], [0, -1], [-1, 0]]
    cells = [[0, 1, 2], [0, 3, 1], [0, 1, 4]]  # edge (0,1) in three cells
    with pytest.raises(MeshTopologyError):
        PolygonalMesh(verts, cells)


def test_self_intersecting_cell_rejected():
    verts = [[0, 0], [1, 1], [1, 0], [0, 1]]
    with pytest.raises(MeshTopologyError):
        PolygonalMesh(verts, [[0, 1, 2, 3]])


@pytest.mark.parametrize("family", MESH_FAMILIES)
@pytest.mark.parametrize("n", [1, 3, 8])
def test_families_cover_unit_square(family, n):
    m = generate_family(family, n, seed=5)
    assert m.cell_area.sum() == pytest.approx(1.0, rel=1e-12)
    # edge-cell incidence: every cell edge appears once per adjacent cell
    per_cell = sum(len(c) for c in m.cells)
    nb = int(m.boundary_edge.sum())
    assert per_cell == 2 * (m.num_edges - nb) + nb


@pytest.mark.parametrize("family", MESH_FAMILIES)
def test_generation_deterministic(family):
    a = generate_family(family, 8, seed=1)
    b = generate_family(family, 8, seed=1)
    assert np.array_equal(a.vertices, b.vertices)
    assert all(np.array_equal(x, y) for x, y in zip(a.cells, b.cells))
    assert mesh_hash(a) == mesh_hash(b)


def test_distorted_seed_changes_mesh():
    a = generate_family("quad_distorted", 8, seed=1)
    b = generate_family("quad_distorted", 8, seed=2)
    assert not np.array_equal(a.vertices, b.vertices)


def test_quad_uniform_counts():
    m = generate_family("quad_uniform", 4)
    assert m.num_cells == 16
    assert m.num_vertices == 25


def test_distortion_magnitude_bounded():
    n = 8
    a = generate_family("quad_uniform", n)
    b = generate_family("quad_distorted", n, seed=3)
    delta = np.linalg.norm(b.vertices - a.vertices, axis=1)
    assert delta.max() <= 0.2 / n + 1e-12


@pytest.mark.parametrize("family", MESH_FAMILIES)
def test_families_pass_shape_assumptions(family):
    m = generate_family(family, 8, seed=7)
    report = validate(m, shape_tolerance=0.05)
    assert report.ok, report.summary()


def test_validate_unit_square_convex():
    m = PolygonalMesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2, 3]])
    report = validate(m, shape_tolerance=0.1)
    assert report.ok


def test_validate_flags_tiny_edge():
    eps = 1e-9
    m = PolygonalMesh([[0, 0], [1, 0], [1 + eps, eps], [1, 1], [0, 1]],
                      [[0, 1, 2, 3, 4]])
    report = validate(m, shape_tolerance=0.05)
    assert report.a2_failures == [0]
    assert not report.ok


def test_concave_cells_star_shaped():
    # the generator's fixed reflex quads must have nonempty kernels with
    # radius comfortably above the working tolerance
    m = generate_family("concave_rhombic", 4)
    report = validate(m, shape_tolerance=0.05)
    assert report.ok
    assert report.kernel_radius_ratio.min() > 0.08


def test_vertex_scale_is_average_of_diameters():
    m = generate_family("quad_uniform", 2)
    # interior vertex touches four cells of equal diameter
    vid = 4  # center vertex of the 3x3 grid, index (1,1) -> 1*3+1
    d = m.cell_diameter[0]
    assert m.vertex_scale[vid] == pytest.approx(d)


def test_save_load_round_trip(tmp_path):
    m = generate_family("voronoi", 5, seed=11)
    path = str(tmp_path / "v.txt")
    save_mesh(m, path)
    m2 = load_mesh(path)
    assert np.array_equal(m.vertices, m2.vertices)
    assert mesh_hash(m) == mesh_hash(m2)


def test_boundary_markers_off_unit_square(tmp_path):
    path = write(tmp_path, "4 1\n0 0\n2 0\n2 2\n0 2\n4 0 1 2 3\n")
    m = load_mesh(path)
    assert set(m.boundary_markers.values()) == {"other"}


def test_cell_geometry_accessor():
    m = generate_family("quad_uniform", 2)
    geo = m.cell_geometry(0)
    assert geo.area == pytest.approx(0.25)
    assert geo.diameter == pytest.approx(np.sqrt(2) / 2)
    assert np.allclose(geo.centroid, [0.25, 0.25])
    assert geo.vertex_scale.shape == (4,)
