"""Mesh parsing, serialization, graph conversion, and resampling."""

import numpy as np
import pytest

from meshgcn.errors import DataError, MeshParseError, StructuralInputError
from meshgcn.meshio import (
    ResampleSpec,
    TriangleMesh,
    load_mesh,
    load_obj,
    load_off,
    mesh_to_graph,
    normalize_coordinates,
    normalize_mesh,
    resample,
    save_obj,
    save_off,
)

TETRA = TriangleMesh(
    vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]],
    faces=[[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]],
)


def icosahedron():
    phi = (1 + np.sqrt(5)) / 2
    verts = []
    for a in (-1, 1):
        for b in (-phi, phi):
            verts += [(0, a, b), (a, b, 0), (b, 0, a)]
    verts = np.array(verts)
    # faces from nearest-neighbor triples: every edge has length 2
    faces = []
    for i in range(12):
        for j in range(i + 1, 12):
            for k in range(j + 1, 12):
                d = [np.linalg.norm(verts[a] - verts[b])
                     for a, b in ((i, j), (j, k), (i, k))]
                if all(abs(x - 2.0) < 1e-9 for x in d):
                    faces.append((i, j, k))
    return TriangleMesh(verts, np.array(faces))


def test_off_roundtrip(tmp_path):
    path = tmp_path / "tetra.off"
    save_off(TETRA, path)
    back = load_off(path)
    assert np.array_equal(back.vertices, TETRA.vertices)
    assert np.array_equal(back.faces, TETRA.faces)


def test_obj_roundtrip(tmp_path):
    path = tmp_path / "tetra.obj"
    save_obj(TETRA, path)
    back = load_obj(path)
    assert np.array_equal(back.vertices, TETRA.vertices)
    assert np.array_equal(back.faces, TETRA.faces)


def test_load_mesh_dispatches_on_suffix(tmp_path):
    save_off(TETRA, tmp_path / "m.off")
    save_obj(TETRA, tmp_path / "m.obj")
    assert load_mesh(tmp_path / "m.off").num_vertices == 4
    assert load_mesh(tmp_path / "m.obj").num_vertices == 4
    with pytest.raises(DataError):
        load_mesh(tmp_path / "m.stl")


def test_off_header_glued_counts(tmp_path):
    path = tmp_path / "glued.off"
    path.write_text("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    mesh = load_off(path)
    assert mesh.num_vertices == 3
    assert len(mesh.faces) == 1


def test_off_comments_and_blank_lines(tmp_path):
    path = tmp_path / "c.off"
    path.write_text(
        "# a comment\nOFF\n\n3 1 0\n0 0 0 # inline\n1 0 0\n0 1 0\n3 0 1 2\n"
    )
    assert load_off(path).num_vertices == 3


def test_off_quad_fan_triangulated(tmp_path):
    path = tmp_path / "quad.off"
    path.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    mesh = load_off(path)
    assert [tuple(f) for f in mesh.faces] == [(0, 1, 2), (0, 2, 3)]


def test_off_errors_name_line(tmp_path):
    path = tmp_path / "bad.off"
    path.write_text("OFF\n1 1 0\n0 0 zz\n3 0 0 0\n")
    with pytest.raises(MeshParseError) as exc:
        load_off(path)
    assert ":3:" in str(exc.value)


def test_off_missing_header(tmp_path):
    path = tmp_path / "no.off"
    path.write_text("3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    with pytest.raises(MeshParseError):
        load_off(path)


def test_off_face_prefix_mismatch(tmp_path):
    path = tmp_path / "p.off"
    path.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2\n")
    with pytest.raises(MeshParseError):
        load_off(path)


def test_obj_one_based_and_slashed_indices(tmp_path):
    path = tmp_path / "s.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1\n"
    )
    mesh = load_obj(path)
    assert [tuple(f) for f in mesh.faces] == [(0, 1, 2)]


def test_obj_rejects_zero_index(tmp_path):
    path = tmp_path / "z.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
    with pytest.raises(MeshParseError):
        load_obj(path)


def test_mesh_rejects_degenerate_face():
    with pytest.raises(StructuralInputError):
        TriangleMesh([[0, 0, 0], [1, 0, 0]], [[0, 1, 1]])


def test_mesh_rejects_out_of_range_face():
    with pytest.raises(StructuralInputError):
        TriangleMesh([[0, 0, 0], [1, 0, 0]], [[0, 1, 2]])


def test_mesh_to_graph_edges():
    g = mesh_to_graph(TETRA)
    # a tetrahedron is the complete graph on 4 nodes
    expect = np.ones((4, 4)) - np.eye(4)
    assert np.array_equal(g.adjacency.to_dense(), expect)
    assert np.array_equal(g.node_features, TETRA.vertices)


def test_normalize_mesh_unit_ball():
    mesh = TriangleMesh(TETRA.vertices * 7.0 + 3.0, TETRA.faces)
    normed = normalize_mesh(mesh)
    assert np.allclose(normed.vertices.mean(axis=0), 0, atol=1e-15)
    radii = np.linalg.norm(normed.vertices, axis=1)
    assert abs(radii.max() - 1.0) < 1e-12


def test_normalize_coordinates_matches_mesh_version():
    g = normalize_coordinates(mesh_to_graph(TETRA))
    m = normalize_mesh(TETRA)
    assert np.array_equal(g.node_features, m.vertices)


def test_resample_noop_at_target():
    g = mesh_to_graph(TETRA)
    assert resample(g, ResampleSpec(target_nodes=4)) is g


def test_resample_error_strategy():
    g = mesh_to_graph(TETRA)
    spec = ResampleSpec(target_nodes=5, strategy="error-if-mismatch")
    with pytest.raises(DataError):
        resample(g, spec)


def test_resample_upsampling_unsupported():
    g = mesh_to_graph(TETRA)
    with pytest.raises(DataError):
        resample(g, ResampleSpec(target_nodes=8))


def test_resample_fps_hits_target_and_stays_connected():
    g = mesh_to_graph(icosahedron())
    out = resample(
        g, ResampleSpec(target_nodes=7, knn=3,
                        strategy="farthest-point-subsample-with-knn-reconnect")
    )
    assert out.num_nodes == 7
    assert _connected(out)


def test_resample_collapse_hits_target_and_stays_connected():
    g = mesh_to_graph(icosahedron())
    out = resample(
        g, ResampleSpec(target_nodes=6, strategy="edge-collapse-decimate")
    )
    assert out.num_nodes == 6
    assert _connected(out)


def test_resample_deterministic():
    g = mesh_to_graph(icosahedron())
    spec = ResampleSpec(target_nodes=7, knn=3)
    a = resample(g, spec)
    b = resample(g, spec)
    assert np.array_equal(a.node_features, b.node_features)
    assert np.array_equal(a.adjacency.to_dense(), b.adjacency.to_dense())


def test_unknown_strategy_rejected():
    with pytest.raises(StructuralInputError):
        ResampleSpec(strategy="magic")


def _connected(g):
    n = g.num_nodes
    seen = {0}
    frontier = [0]
    dense = g.adjacency.to_dense()
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(dense[i]):
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return len(seen) == n
