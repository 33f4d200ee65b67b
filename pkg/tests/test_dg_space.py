import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iph_schwarz import (BrokenP1Space, PenaltyField, QuadratureRule,
                         dg_norm, generate_structured, interface_l2_norm,
                         jump_average_on_edge)
from iph_schwarz.dg_space import EDGE_MASS_UNIT, jump_square_sum
from iph_schwarz.mesh import TriangleMesh


def exact_tri_monomial(a, b):
    # integral of x^a y^b over the reference triangle (0,0)-(1,0)-(0,1)
    import math
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def test_volume_rule_degree_two_exact():
    q = QuadratureRule.default()
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts = q.tri_points @ corners
    assert q.tri_weights.sum() == pytest.approx(1.0, abs=1e-15)
    for a in range(3):
        for b in range(3 - a):
            approx = 0.5 * np.sum(q.tri_weights * pts[:, 0] ** a * pts[:, 1] ** b)
            assert approx == pytest.approx(exact_tri_monomial(a, b), abs=1e-14)


def test_edge_rule_degree_three_exact():
    q = QuadratureRule.default()
    assert q.edge_weights.sum() == pytest.approx(1.0, abs=1e-15)
    for k in range(4):
        approx = np.sum(q.edge_weights * q.edge_points ** k)
        assert approx == pytest.approx(1.0 / (k + 1), abs=1e-14)


def test_space_rejects_higher_degree():
    mesh = generate_structured(2)
    with pytest.raises(ValueError):
        BrokenP1Space(mesh, degree=2)


def test_dof_layout_and_nodal_basis():
    mesh = generate_structured(2)
    space = BrokenP1Space(mesh)
    assert space.n_dofs == 3 * mesh.n_triangles
    # basis 3t+j equals 1 at vertex j of triangle t and 0 at its other nodes
    u = np.zeros(space.n_dofs)
    u[space.dof(3, 1)] = 1.0
    verts = mesh.vertices[mesh.triangles[3]]
    vals = u.reshape(-1, 3)[3]
    assert vals[1] == 1.0 and vals[0] == 0.0 and vals[2] == 0.0
    # identically zero outside its element: other element blocks untouched
    assert np.all(u.reshape(-1, 3)[np.arange(mesh.n_triangles) != 3] == 0.0)
    del verts


def test_jump_average_continuous_trace():
    mesh = generate_structured(4)
    e = int(np.nonzero(~mesh.is_boundary_edge)[0][0])
    tr = np.array([0.7, -0.2])
    jump, avg = jump_average_on_edge(mesh, e, tr, tr)
    assert np.allclose(jump, 0.0)
    assert np.allclose(avg, tr)


def test_jump_average_unit_step():
    mesh = generate_structured(4)
    # vertical interior edge whose first-side normal points along +-x
    interior = np.nonzero(~mesh.is_boundary_edge)[0]
    e = next(int(k) for k in interior if abs(mesh.normals[k][1]) < 1e-14)
    n0 = mesh.normals[e]
    jump, avg = jump_average_on_edge(mesh, e, np.ones(2), np.zeros(2))
    assert np.allclose(jump, np.array([n0, n0]))
    assert np.allclose(avg, 0.5)


def test_jump_average_boundary_convention():
    mesh = generate_structured(4)
    e = int(np.nonzero(mesh.is_boundary_edge)[0][0])
    n = mesh.normals[e]
    tr = np.array([2.0, -1.0])
    jump, avg = jump_average_on_edge(mesh, e, tr)
    assert np.allclose(jump, tr[:, None] * n[None, :])
    assert np.allclose(avg, tr)
    with pytest.raises(ValueError):
        jump_average_on_edge(mesh, e, tr, tr)
    e_int = int(np.nonzero(~mesh.is_boundary_edge)[0][0])
    with pytest.raises(ValueError):
        jump_average_on_edge(mesh, e_int, tr)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=4))
def test_jump_average_enumeration_invariance(vals):
    # same two triangles listed in both orders: the stored "first" element
    # and hence the reference normal swap, the outputs must not
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    mesh_a = TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))
    mesh_b = TriangleMesh(verts, np.array([[0, 2, 3], [0, 1, 2]]))
    e_a = int(np.nonzero(~mesh_a.is_boundary_edge)[0][0])
    e_b = int(np.nonzero(~mesh_b.is_boundary_edge)[0][0])
    u_lower = np.array(vals[:2])
    u_upper = np.array(vals[2:])
    jump_a, avg_a = jump_average_on_edge(mesh_a, e_a, u_lower, u_upper)
    jump_b, avg_b = jump_average_on_edge(mesh_b, e_b, u_upper, u_lower)
    assert np.array_equal(jump_a, jump_b)
    assert np.array_equal(avg_a, avg_b)


def test_dg_norm_zero_and_length_check():
    mesh = generate_structured(4)
    space = BrokenP1Space(mesh)
    pen = PenaltyField(6.0)
    assert dg_norm(space, np.zeros(space.n_dofs), 1.0, pen) == 0.0
    with pytest.raises(ValueError):
        dg_norm(space, np.zeros(space.n_dofs - 1), 1.0, pen)


def test_dg_norm_continuous_function_has_no_jump_part():
    mesh = generate_structured(6)
    space = BrokenP1Space(mesh)
    pen = PenaltyField(6.0)
    hat = lambda x, y: x * (1 - x) * y * (1 - y)  # vanishes on the boundary
    u = space.interpolate(hat)
    val = dg_norm(space, u, 0.0, pen)
    grad_only = np.sqrt(u @ (space.stiffness_matrix @ u))
    assert val == pytest.approx(grad_only, rel=1e-12)


def test_dg_norm_single_element_indicator():
    mesh = generate_structured(4)
    space = BrokenP1Space(mesh)
    alpha = 6.0
    pen = PenaltyField(alpha)
    u = np.zeros(space.n_dofs)
    t = 5
    u[3 * t:3 * t + 3] = 1.0
    # the gradient vanishes; each of the three edges contributes
    # mu_e * ||[u]||^2_e = (alpha/h_e) * h_e = alpha
    val = dg_norm(space, u, 0.0, pen)
    assert val == pytest.approx(np.sqrt(3.0 * alpha), rel=1e-12)
    # independent quadrature oracle for the jump part
    mu = pen.mu_per_edge(mesh)
    gauss = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
    total = 0.0
    for e in mesh.tri_edges[t]:
        L = mesh.h_e[e]
        for s in gauss:
            total += 0.5 * L * mu[e] * 1.0 ** 2  # unit jump along the edge
    assert jump_square_sum(space, u, mu) == pytest.approx(total, rel=1e-12)


def test_interface_norm_examples():
    mesh = generate_structured(8)
    from iph_schwarz import partition_mesh
    part = partition_mesh(mesh, "two-straight")
    edges = np.sort(part.gamma_edges)
    k = len(edges)
    assert interface_l2_norm(mesh, edges, np.zeros(2 * k)) == 0.0
    total_len = mesh.h_e[edges].sum()
    assert interface_l2_norm(mesh, edges, np.ones(2 * k)) == pytest.approx(
        np.sqrt(total_len), rel=1e-13)
    # one nodal basis function on an edge of length h: integral h/3
    phi = np.zeros(2 * k)
    phi[0] = 1.0
    h = mesh.h_e[edges[0]]
    assert interface_l2_norm(mesh, edges, phi) == pytest.approx(
        np.sqrt(h / 3.0), rel=1e-13)
    with pytest.raises(ValueError):
        interface_l2_norm(mesh, edges, np.ones(2 * k + 1))


def _per_element_ratios(mesh, space, rng, n_samples=200):
    """Max ratios of the trace and inverse inequalities over random P1 data."""
    areas = mesh.areas
    grads = space.gradients()
    local_mass = (np.full((3, 3), 1.0) + np.eye(3)) / 12.0
    trace_max = 0.0
    inverse_max = 0.0
    for _ in range(n_samples):
        w = rng.uniform(-1.0, 1.0, (mesh.n_triangles, 3))
        vol = np.einsum("tp,pq,tq->t", w, local_mass, w) * areas
        g = np.einsum("tp,tpc->tc", w, grads)
        grad_sq = (g ** 2).sum(axis=1) * areas
        # boundary integral over the three edges of each triangle
        edge_sq = np.zeros(mesh.n_triangles)
        for k in range(3):
            e = mesh.tri_edges[:, k]
            tr = np.stack([w[:, k], w[:, (k + 1) % 3]], axis=1)
            edge_sq += np.einsum("tr,rs,ts->t", tr, EDGE_MASS_UNIT, tr) * mesh.h_e[e]
        h_K = np.max(mesh.h_e[mesh.tri_edges], axis=1)
        trace_max = max(trace_max, float(np.max(edge_sq / (vol / h_K))))
        inverse_max = max(inverse_max, float(np.max(grad_sq * h_K ** 2 / vol)))
    return trace_max, inverse_max


def test_trace_and_inverse_inequalities_stable_under_refinement():
    rng = np.random.default_rng(0)
    trace_consts = []
    inverse_consts = []
    for n in (4, 8, 16):
        mesh = perturbed = generate_structured(n)
        space = BrokenP1Space(perturbed)
        t, i = _per_element_ratios(mesh, space, rng)
        trace_consts.append(t)
        inverse_consts.append(i)
    for seq in (trace_consts, inverse_consts):
        for a, b in zip(seq, seq[1:]):
            assert b <= 1.5 * a


def test_trace_space_dof_counts():
    from iph_schwarz import TraceSpace, partition_mesh
    mesh = generate_structured(8)
    part = partition_mesh(mesh, "quadrants", m=2)
    single = TraceSpace(part, "single")
    assert single.n_dofs == 2 * len(part.gamma_edges)
    per = TraceSpace(part, "per-subdomain")
    # every interface edge is duplicated, once per incident subdomain
    assert per.n_dofs == 2 * sum(len(part.subdomain_interface[i])
                                 for i in range(part.n_subdomains))
    assert per.n_dofs == 2 * 2 * len(part.gamma_edges)
    with pytest.raises(ValueError):
        TraceSpace(part, "shared")
