"""Broken piecewise-linear spaces, trace spaces, quadrature and norms.

Element DOFs are fully discontinuous: triangle ``t`` owns DOFs
``3t, 3t+1, 3t+2``, one per vertex, and its basis functions vanish outside
the element.  Trace functions live on interface edges as per-edge linears
that may jump at edge endpoints; their two DOFs per edge are attached to the
canonical (smaller-id first) endpoints.

Only polynomial degree one is supported; the APIs accept a degree argument
for forward compatibility but reject anything else.  The quadrature rules
(3-point volume, 2-point Gauss edge) integrate every bilinear-form integrand
of this discretization exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# reference-edge mass matrix scaled by length: (h/6) * [[2, 1], [1, 2]]
EDGE_MASS_UNIT = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


@dataclass(frozen=True)
class QuadratureRule:
    """Midpoint rule on the reference triangle and 2-point Gauss on [0, 1].

    The triangle rule (edge midpoints, equal weights) is exact for degree 2;
    the edge rule is exact for degree 3.
    """

    tri_points: np.ndarray   # (3, 3) barycentric coordinates
    tri_weights: np.ndarray  # (3,) weights on the unit-area reference triangle
    edge_points: np.ndarray  # (2,) coordinates on [0, 1]
    edge_weights: np.ndarray  # (2,)

    @staticmethod
    def default():
        g = 0.5 / np.sqrt(3.0)
        return QuadratureRule(
            tri_points=np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
            tri_weights=np.full(3, 1.0 / 3.0),
            edge_points=np.array([0.5 - g, 0.5 + g]),
            edge_weights=np.array([0.5, 0.5]),
        )


class BrokenP1Space:
    """Element-discontinuous P1 space on a TriangleMesh."""

    def __init__(self, mesh, degree=1):
        if degree != 1:
            raise ValueError("only degree 1 is supported")
        self.mesh = mesh
        self.degree = 1
        self.n_dofs = 3 * mesh.n_triangles
        self._mass = None
        self._stiffness = None

    def dof(self, triangle, local_vertex):
        return 3 * triangle + local_vertex

    # -- element geometry ----------------------------------------------------

    def gradients(self):
        """Constant basis gradients, shape (T, 3, 2)."""
        p = self.mesh.vertices[self.mesh.triangles]  # (T,3,2)
        g = np.empty_like(p)
        for j in range(3):
            jn, jp = (j + 1) % 3, (j + 2) % 3
            g[:, j, 0] = p[:, jn, 1] - p[:, jp, 1]
            g[:, j, 1] = p[:, jp, 0] - p[:, jn, 0]
        return g / (2.0 * self.mesh.areas)[:, None, None]

    @property
    def mass_matrix(self):
        if self._mass is None:
            T = self.mesh.n_triangles
            local = (np.full((3, 3), 1.0) + np.eye(3)) / 12.0
            blocks = self.mesh.areas[:, None, None] * local
            self._mass = _scatter_element_blocks(blocks, self.n_dofs)
        return self._mass

    @property
    def stiffness_matrix(self):
        if self._stiffness is None:
            g = self.gradients()
            blocks = np.einsum("tpc,tqc->tpq", g, g) * self.mesh.areas[:, None, None]
            self._stiffness = _scatter_element_blocks(blocks, self.n_dofs)
        return self._stiffness

    def interpolate(self, fn):
        """Nodal interpolation of a callable fn(x, y) -> values."""
        p = self.mesh.vertices[self.mesh.triangles]
        return fn(p[..., 0], p[..., 1]).reshape(-1)

    def edge_trace(self, u, edge, side=0):
        """Trace of u on ``edge`` from incident triangle ``side``, in
        canonical endpoint order."""
        mesh = self.mesh
        t = mesh.edge_tris[edge, side]
        if t < 0:
            raise ValueError(f"edge {edge} has no triangle on side {side}")
        vals = np.empty(2)
        for r in range(2):
            v = mesh.edges[edge, r]
            local = int(np.nonzero(mesh.triangles[t] == v)[0][0])
            vals[r] = u[self.dof(t, local)]
        return vals


def _scatter_element_blocks(blocks, n):
    T = blocks.shape[0]
    dofs = (3 * np.arange(T)[:, None] + np.arange(3)[None, :])
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


class TraceSpace:
    """P1 trace space on the partition interface.

    ``mode="single"`` keeps one shared copy of the interface unknowns (the
    layout of the two-subdomain interface algebra); ``mode="per-subdomain"``
    duplicates them, one copy per incident subdomain, as the multi-subdomain
    iteration requires.  Each edge carries 2 DOFs at its canonical endpoints.
    """

    def __init__(self, partition, mode="single", degree=1):
        if degree != 1:
            raise ValueError("only degree 1 is supported")
        if mode not in ("single", "per-subdomain"):
            raise ValueError("mode must be 'single' or 'per-subdomain'")
        self.partition = partition
        self.mode = mode
        self.gamma_edges = np.sort(partition.gamma_edges)
        self._slot_of_edge = {int(e): 2 * k for k, e in enumerate(self.gamma_edges)}

        if mode == "single":
            self.n_dofs = 2 * len(self.gamma_edges)
            self.sub_edges = [np.sort(part) for part in partition.subdomain_interface]
        else:
            self.sub_edges = [np.sort(part) for part in partition.subdomain_interface]
            counts = [2 * len(e) for e in self.sub_edges]
            self.sub_offsets = np.concatenate([[0], np.cumsum(counts)])
            self.n_dofs = int(self.sub_offsets[-1])

    def edge_slot(self, edge):
        """First of the two single-copy DOF slots of ``edge``."""
        return self._slot_of_edge[int(edge)]

    def sub_slots(self, i):
        """Single-copy DOF slots of subdomain i's interface edges, in the
        per-subdomain column order used by the coupling blocks."""
        base = np.array([self.edge_slot(e) for e in self.sub_edges[i]], dtype=np.int64)
        return np.stack([base, base + 1], axis=1).ravel()

    def n_sub_dofs(self, i):
        return 2 * len(self.sub_edges[i])


def jump_average_on_edge(mesh, edge, u_side0, u_side1=None):
    """Jump and average of edge traces, independent of element enumeration.

    ``u_side0`` / ``u_side1`` are the 2-vector P1 traces (canonical endpoint
    order) seen from ``edge_tris[edge, 0]`` and ``edge_tris[edge, 1]``.  The
    jump is vector-valued, returned as a (2 nodes, 2 components) array equal
    to ``q1 n1 + q2 n2``; on a boundary edge it is ``q n`` and the average is
    the single trace itself.
    """
    n0 = mesh.normals[edge]
    u_side0 = np.asarray(u_side0, dtype=float)
    if mesh.is_boundary_edge[edge]:
        if u_side1 is not None:
            raise ValueError(f"edge {edge} is a boundary edge, pass one trace")
        return u_side0[:, None] * n0[None, :], u_side0.copy()
    if u_side1 is None:
        raise ValueError(f"edge {edge} is interior, pass both traces")
    u_side1 = np.asarray(u_side1, dtype=float)
    jump = (u_side0 - u_side1)[:, None] * n0[None, :]
    return jump, 0.5 * (u_side0 + u_side1)


def jump_square_sum(space, u, mu_per_edge):
    """Sum over all edges of mu_e * ||jump(u)||^2_e (boundary edges included)."""
    mesh = space.mesh
    tr = _all_edge_traces(space, u)
    diff = tr[:, 0, :] - np.where(mesh.is_boundary_edge[:, None], 0.0, tr[:, 1, :])
    per_edge = np.einsum("er,rs,es->e", diff, EDGE_MASS_UNIT, diff) * mesh.h_e
    return float(np.dot(mu_per_edge, per_edge))


def _all_edge_traces(space, u):
    """Traces of u on every edge and side, canonical order; zeros where no side."""
    mesh = space.mesh
    u = np.asarray(u, dtype=float)
    out = np.zeros((mesh.n_edges, 2, 2))
    for s in (0, 1):
        sel = mesh.edge_tris[:, s] >= 0
        e = np.nonzero(sel)[0]
        t = mesh.edge_tris[e, s]
        for r in (0, 1):
            v = mesh.edges[e, r]
            local = np.argmax(mesh.triangles[t] == v[:, None], axis=1)
            out[e, s, r] = u[3 * t + local]
    return out


def dg_norm(space, u, eta, penalty):
    """Energy norm: sqrt(eta ||u||^2 + ||grad u||^2 + sum_e mu_e ||[u]||^2_e).

    The second-derivative variant of this norm coincides with it for P1
    (element Hessians vanish), so no separate code path exists.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (space.n_dofs,):
        raise ValueError(f"coefficient vector has length {u.shape}, expected {space.n_dofs}")
    sq = eta * float(u @ (space.mass_matrix @ u))
    sq += float(u @ (space.stiffness_matrix @ u))
    sq += jump_square_sum(space, u, penalty.mu_per_edge(space.mesh))
    return float(np.sqrt(max(sq, 0.0)))


def interface_l2_norm(mesh, edges, phi):
    """L2 norm of a trace function over the given edges.

    ``phi`` holds 2 coefficients per edge, in the order of ``edges``.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (2 * len(edges),):
        raise ValueError(f"trace vector has length {phi.shape}, expected {2 * len(edges)}")
    vals = phi.reshape(-1, 2)
    per_edge = np.einsum("er,rs,es->e", vals, EDGE_MASS_UNIT, vals) * mesh.h_e[edges]
    return float(np.sqrt(max(per_edge.sum(), 0.0)))


def l2_norm(space, u):
    """Broken L2 norm of element coefficients."""
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(max(u @ (space.mass_matrix @ u), 0.0)))
