import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcabem.mesh import (MeshError, build_sphere_mesh, chart, chart_arrays,
                         make_surface_mesh, read_mesh, write_mesh)

PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def test_octahedron_counts():
    m = build_sphere_mesh(0)
    assert m.num_triangles == 8
    assert m.num_vertices == 6


def test_level4_matches_dof_ladder():
    m = build_sphere_mesh(4)
    assert m.num_triangles == 2048


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_counts_and_unit_vertices(level):
    m = build_sphere_mesh(level)
    assert m.num_triangles == 8 * 4 ** level
    radii = np.linalg.norm(m.vertices, axis=1)
    assert np.max(np.abs(radii - 1.0)) <= 1e-14
    assert np.max(np.abs(np.linalg.norm(m.normals, axis=1) - 1.0)) <= 1e-12
    assert np.all(m.gramians > 0)


def test_area_converges_to_sphere():
    # the octahedron ladder (pinned by the 8*4^L panel counts) reaches
    # 4.9% area deficit at level 2 and halves it at least once per level
    areas = [build_sphere_mesh(level).areas.sum() for level in range(5)]
    exact = 4.0 * np.pi
    assert abs(areas[2] - exact) / exact <= 0.05
    assert abs(areas[3] - exact) / exact <= 0.013
    gaps = [abs(a - exact) for a in areas]
    for lo, hi in zip(gaps, gaps[1:]):
        assert hi <= 0.5 * lo
    assert all(a1 < a2 for a1, a2 in zip(areas, areas[1:]))


def test_outward_normals_and_closure():
    m = build_sphere_mesh(3)
    mid = m.midpoints()
    assert np.all(np.einsum("ij,ij->i", m.normals, mid) > 0)
    closure = np.linalg.norm((m.areas[:, None] * m.normals).sum(axis=0))
    assert closure <= 1e-10 * m.areas.sum()


def test_chart_unit_right_triangle():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0],
                      [0.5, 0.5, 1.0]])
    tris = np.array([[0, 1, 2], [1, 0, 3], [2, 1, 3], [0, 2, 3]])
    m = make_surface_mesh(verts, tris, validate=False)
    c = chart(m, 0)
    assert c.gramian == pytest.approx(1.0)
    assert np.allclose(c.map_points(np.array([[1.0, 0.0]]))[0], [1, 0, 0])
    # permutation leaves the Gramian unchanged
    assert chart(m, 0, (1, 2, 0)).gramian == pytest.approx(1.0)


def test_chart_equilateral_gramian():
    s = 1.0
    verts = np.array([[0, 0, 0], [s, 0, 0], [s / 2, s * np.sqrt(3) / 2, 0],
                      [s / 2, s / 3, 1.0]])
    tris = np.array([[0, 1, 2], [1, 0, 3], [2, 1, 3], [0, 2, 3]])
    m = make_surface_mesh(verts, tris, validate=False)
    assert chart(m, 0).gramian == pytest.approx(np.sqrt(3) / 2)


@settings(deadline=None, max_examples=60)
@given(tri=st.integers(0, 127), perm=st.sampled_from(PERMS))
def test_chart_maps_reference_vertices_to_permuted_vertices(tri, perm):
    m = build_sphere_mesh(2)
    c = chart(m, tri, perm)
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    mapped = c.map_points(ref)
    verts = m.vertices[m.triangles[tri]]
    for k in range(3):
        assert np.array_equal(mapped[k], verts[perm[k]])


def test_chart_arrays_matches_single_charts(sphere2):
    tris = np.array([3, 7, 11])
    perms = np.array([[0, 1, 2], [2, 0, 1], [1, 2, 0]])
    v0, e1, e2, g = chart_arrays(sphere2, tris, perms)
    for k in range(3):
        c = chart(sphere2, int(tris[k]), tuple(perms[k]))
        assert np.array_equal(v0[k], c.origin)
        assert np.array_equal(e1[k], c.edge1)
        assert np.array_equal(e2[k], c.edge2)


def test_level_limit():
    with pytest.raises(MeshError):
        build_sphere_mesh(13)
    with pytest.raises(MeshError):
        build_sphere_mesh(-1)


def test_validation_rejects_bad_meshes():
    verts = np.array([[0, 0, 0.0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    good = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]])
    make_surface_mesh(verts, good)  # tetrahedron, outward
    flipped = good.copy()
    flipped[0] = flipped[0][::-1]
    with pytest.raises(MeshError):
        make_surface_mesh(verts, flipped)
    with pytest.raises(MeshError):
        make_surface_mesh(verts, good[:3])  # open surface
    with pytest.raises(MeshError):
        make_surface_mesh(verts, np.array([[0, 0, 1]]))  # repeated index


def test_mesh_file_roundtrip(tmp_path, sphere2):
    path = tmp_path / "sphere.txt"
    write_mesh(sphere2, path)
    again = read_mesh(path)
    assert np.array_equal(again.vertices, sphere2.vertices)
    assert np.array_equal(again.triangles, sphere2.triangles)
    assert np.array_equal(again.normals, sphere2.normals)


def test_mesh_file_rejects_truncation(tmp_path, sphere2):
    path = tmp_path / "sphere.txt"
    write_mesh(sphere2, path)
    text = path.read_text().splitlines()
    path.write_text("\n".join(text[:-1]))
    with pytest.raises(MeshError):
        read_mesh(path)
