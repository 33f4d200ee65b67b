import numpy as np
import pytest

from iph_schwarz import (TriangleMesh, generate_structured, partition_mesh,
                         perturb_quasi_uniform, read_mesh_text, write_mesh_text)
from iph_schwarz.mesh import partition_from_map


def test_structured_counts_square():
    m = generate_structured(2)
    assert (m.n_vertices, m.n_triangles, m.n_edges) == (9, 8, 16)
    assert m.h_max == pytest.approx(np.sqrt(2) / 2)


def test_structured_counts_lshape():
    # 2x2 cells minus the lower-right quadrant leaves 3 cells -> 6 triangles
    m = generate_structured(2, "l-shape")
    assert m.n_triangles == 6
    assert m.total_area() == pytest.approx(0.75, rel=1e-12)


def test_structured_rejects_tiny():
    with pytest.raises(ValueError):
        generate_structured(1)
    with pytest.raises(ValueError):
        generate_structured(3, "l-shape")  # odd resolution cannot align the notch
    with pytest.raises(ValueError):
        generate_structured(4, "hexagon")


@pytest.mark.parametrize("domain,area", [("unit-square", 1.0), ("l-shape", 0.75)])
def test_area_sums(domain, area):
    for n in (2, 4, 8):
        m = generate_structured(n, domain)
        assert m.total_area() == pytest.approx(area, rel=1e-12)


def test_edge_topology_involutive():
    m = generate_structured(4)
    for e in range(m.n_edges):
        for s in (0, 1):
            t = m.edge_tris[e, s]
            if t < 0:
                assert s == 1 and m.is_boundary_edge[e]
                continue
            assert m.tri_edges[t, m.edge_local[e, s]] == e
    interior = ~m.is_boundary_edge
    assert np.all(m.edge_tris[interior, 1] >= 0)
    assert np.all(m.edge_tris[m.is_boundary_edge, 1] < 0)


def test_orientation_and_opposite_normals():
    m = generate_structured(4)
    assert np.all(m.areas > 0)
    for e in np.nonzero(~m.is_boundary_edge)[0]:
        n0 = m.edge_normal(e, 0)
        n1 = m.edge_normal(e, 1)
        assert np.allclose(n0, -n1)
        # recompute side-1 normal from that triangle's own traversal
        t, k = m.edge_tris[e, 1], m.edge_local[e, 1]
        a = m.vertices[m.triangles[t, k]]
        b = m.vertices[m.triangles[t, (k + 1) % 3]]
        tang = b - a
        own = np.array([tang[1], -tang[0]]) / np.hypot(*tang)
        assert np.allclose(own, n1)


def test_constructor_rejects_clockwise():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        TriangleMesh(verts, np.array([[0, 2, 1]]))


def test_quasi_uniformity_of_family():
    for n in (4, 8, 16):
        m = generate_structured(n)
        assert m.quasi_uniformity_ratio <= 4.0
        p = perturb_quasi_uniform(m, 0.15, seed=42)
        assert p.quasi_uniformity_ratio <= 4.0


def test_perturb_zero_factor_is_identity():
    m = generate_structured(4)
    p = perturb_quasi_uniform(m, 0.0, seed=1)
    assert np.array_equal(p.vertices, m.vertices)
    assert np.array_equal(p.triangles, m.triangles)


def test_perturb_deterministic_and_valid():
    m = generate_structured(8)
    p1 = perturb_quasi_uniform(m, 0.15, seed=42)
    p2 = perturb_quasi_uniform(m, 0.15, seed=42)
    assert np.array_equal(p1.vertices, p2.vertices)
    assert np.all(p1.areas > 0)
    # boundary fixed
    bv = m.boundary_vertices()
    assert np.array_equal(p1.vertices[bv], m.vertices[bv])
    # a different seed moves the interior
    p3 = perturb_quasi_uniform(m, 0.15, seed=43)
    assert not np.array_equal(p1.vertices, p3.vertices)


def test_perturb_pins_requested_vertices():
    m = generate_structured(8)
    part = partition_mesh(m, "two-straight")
    pinned = part.interface_vertices(m)
    p = perturb_quasi_uniform(m, 0.2, seed=5, pinned_vertices=pinned)
    assert np.array_equal(p.vertices[pinned], m.vertices[pinned])
    # the partition map carries over to the perturbed geometry
    part2 = partition_from_map(p, part.subdomain_of)
    assert np.array_equal(np.sort(part2.gamma_edges), np.sort(part.gamma_edges))


def test_perturb_factor_range():
    m = generate_structured(4)
    with pytest.raises(ValueError):
        perturb_quasi_uniform(m, 0.31, seed=0)
    with pytest.raises(ValueError):
        perturb_quasi_uniform(m, -0.1, seed=0)


def test_perturb_gives_up_after_halving():
    # interior vertex nearly touching the top edge: any appreciable move
    # in the wrong direction inverts the sliver triangle
    eps = 1e-13
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0],
                      [0.5, 1.0 - eps]])
    tris = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    m = TriangleMesh(verts, tris)
    failed = False
    for seed in range(20):
        try:
            perturb_quasi_uniform(m, 0.3, seed=seed)
        except ValueError:
            failed = True
            break
    assert failed


def test_partition_two_straight():
    m = generate_structured(4)
    p = partition_mesh(m, "two-straight")
    assert p.n_subdomains == 2
    assert len(p.gamma_edges) == 4
    for e in p.gamma_edges:
        assert np.allclose(m.vertices[m.edges[e], 0], 0.5)
        assert not m.is_boundary_edge[e]


def test_partition_two_nonstraight():
    m = generate_structured(8)
    p = partition_mesh(m, "two-nonstraight")
    assert p.n_subdomains == 2
    sd = p.subdomain_of
    for e in p.gamma_edges:
        assert not m.is_boundary_edge[e]
        pair = {int(sd[m.edge_tris[e, 0]]), int(sd[m.edge_tris[e, 1]])}
        assert pair == {0, 1}
    # the cut is a genuine staircase: more interface edges than the straight cut
    assert len(p.gamma_edges) > 8


def test_partition_coarse_grid():
    m = generate_structured(4)
    p = partition_mesh(m, "coarse-grid", m=2)
    assert p.n_subdomains == 8
    # cross point: some vertex is shared by more than two subdomains
    touch = {}
    for t, sd in enumerate(p.subdomain_of):
        for v in m.triangles[t]:
            touch.setdefault(int(v), set()).add(int(sd))
    assert max(len(s) for s in touch.values()) > 2


def test_partition_quadrants():
    m = generate_structured(8)
    p = partition_mesh(m, "quadrants", m=2)
    assert p.n_subdomains == 4
    touch = {}
    for t, sd in enumerate(p.subdomain_of):
        for v in m.triangles[t]:
            touch.setdefault(int(v), set()).add(int(sd))
    assert max(len(s) for s in touch.values()) == 4  # the center vertex


def test_partition_interface_subset_of_interior():
    for strategy, m_arg in [("two-straight", None), ("two-nonstraight", None),
                            ("coarse-grid", 2), ("quadrants", 2)]:
        mesh = generate_structured(8)
        p = partition_mesh(mesh, strategy, m=m_arg)
        assert not np.any(mesh.is_boundary_edge[p.gamma_edges])
        assert len(p.subdomain_of) == mesh.n_triangles


def test_partition_not_nested_names_triangle():
    mesh = generate_structured(6)
    with pytest.raises(ValueError, match="triangle"):
        partition_mesh(mesh, "coarse-grid", m=4)
    with pytest.raises(ValueError, match="triangle"):
        partition_mesh(mesh, "quadrants", m=4)


def test_partition_lshape_has_fewer_subdomains():
    mesh = generate_structured(8, "l-shape")
    p = partition_mesh(mesh, "coarse-grid", m=2)
    assert p.n_subdomains == 6  # 8 coarse triangles minus the removed quadrant
    q = partition_mesh(mesh, "quadrants", m=2)
    assert q.n_subdomains == 3


def test_partition_diameters():
    m = generate_structured(8)
    p = partition_mesh(m, "two-straight")
    assert p.H_omega == pytest.approx(np.sqrt(2.0))
    assert p.H_max == pytest.approx(np.hypot(0.5, 1.0))


def test_mesh_text_roundtrip(tmp_path):
    m = perturb_quasi_uniform(generate_structured(5), 0.1, seed=9)
    path = tmp_path / "mesh.txt"
    write_mesh_text(m, path)
    m2 = read_mesh_text(path)
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.triangles, m2.triangles)
    assert np.array_equal(m.edges, m2.edges)


def test_mesh_text_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3 1 4\n0 0\n1 0\n0 1\n0 1 2\n")
    with pytest.raises(ValueError, match="edges"):
        read_mesh_text(path)
