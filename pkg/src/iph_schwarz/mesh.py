"""Conforming 2D triangular meshes with full edge topology, plus partitions.

Meshes are immutable after construction.  The generators produce structured
families on the unit square and on an L-shaped domain (the unit square minus
the quadrant [0.5,1)x(0,0.5], re-entrant corner at (0.5,0.5)); every grid
cell is split along its SW-NE diagonal so refinement by halving is nested.
``perturb_quasi_uniform`` turns a structured mesh into a quasi-uniform
unstructured one while pinning selected vertices, so a partition built on
the structured mesh stays valid on the perturbed one.

Partitions split the triangles into edge-connected subdomains whose mutual
interfaces are interior mesh edges (the cut never crosses an element).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _cross2(a, b):
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


class TriangleMesh:
    """Triangulation with vertices, CCW triangles and derived edge topology.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (T, 3) int array
        Vertex indices, counterclockwise.  Local edge ``k`` of a triangle
        joins local vertices ``k`` and ``(k+1) % 3``.
    edges : (E, 2) int array
        Canonical endpoint pairs (smaller vertex id first), sorted
        lexicographically.
    edge_tris : (E, 2) int array
        Incident triangles; second entry is -1 for boundary edges.
    edge_local : (E, 2) int array
        Local edge index of this edge within each incident triangle.
    h_e : (E,) float array of edge lengths; ``h_max`` is the largest
        element diameter (the longest edge).
    """

    def __init__(self, vertices, triangles):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be a (V, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be a (T, 3) array")
        self._build_topology()
        self._validate()
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    # -- construction ------------------------------------------------------

    def _build_topology(self):
        tris = self.triangles
        T = len(tris)
        # local edge k joins local vertices (k, k+1 mod 3)
        raw = np.stack([tris, np.roll(tris, -1, axis=1)], axis=2)  # (T,3,2)
        raw = raw.reshape(-1, 2)
        canon = np.sort(raw, axis=1)
        self.edges, inv = np.unique(canon, axis=0, return_inverse=True)
        self.tri_edges = inv.reshape(T, 3)

        E = len(self.edges)
        self.edge_tris = -np.ones((E, 2), dtype=np.int64)
        self.edge_local = -np.ones((E, 2), dtype=np.int64)
        order = np.argsort(inv, kind="stable")  # triangle-major, so lower tri first
        tri_of_slot = order // 3
        loc_of_slot = order % 3
        eid = inv[order]
        first = np.ones(E, dtype=bool)
        # slots per edge in ascending triangle order
        starts = np.searchsorted(eid, np.arange(E))
        counts = np.bincount(eid, minlength=E)
        if counts.max(initial=0) > 2:
            raise ValueError("non-conforming mesh: an edge has more than two incident triangles")
        for s in (0, 1):
            sel = counts > s
            idx = starts[sel] + s
            self.edge_tris[sel, s] = tri_of_slot[idx]
            self.edge_local[sel, s] = loc_of_slot[idx]
        del first

        p = self.vertices
        d = p[self.edges[:, 1]] - p[self.edges[:, 0]]
        self.h_e = np.hypot(d[:, 0], d[:, 1])
        self.is_boundary_edge = self.edge_tris[:, 1] < 0

        v0, v1, v2 = (p[tris[:, k]] for k in range(3))
        self.areas = 0.5 * _cross2(v1 - v0, v2 - v0)
        self.h_max = float(self.h_e.max())

        # outward unit normal per edge, as seen from edge_tris[:, 0]
        t0 = self.edge_tris[:, 0]
        k0 = self.edge_local[:, 0]
        a = tris[t0, k0]
        b = tris[t0, (k0 + 1) % 3]
        tang = p[b] - p[a]
        n = np.stack([tang[:, 1], -tang[:, 0]], axis=1)
        self.normals = n / self.h_e[:, None]
        for arr in (self.edges, self.tri_edges, self.edge_tris, self.edge_local,
                    self.h_e, self.areas, self.normals):
            arr.setflags(write=False)

    def _validate(self):
        if np.any(self.areas <= 0.0):
            t = int(np.argmin(self.areas))
            raise ValueError(f"triangle {t} is degenerate or not counterclockwise "
                             f"(signed area {self.areas[t]:.3e})")
        # involutive topology: each (triangle, local edge) record points back
        for s in (0, 1):
            sel = self.edge_tris[:, s] >= 0
            e = np.nonzero(sel)[0]
            back = self.tri_edges[self.edge_tris[e, s], self.edge_local[e, s]]
            if not np.array_equal(back, e):
                raise ValueError("edge topology is not involutive")

    # -- queries -----------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def quasi_uniformity_ratio(self):
        return float(self.h_e.max() / self.h_e.min())

    def edge_normal(self, edge, side=0):
        """Outward unit normal of ``edge`` from incident triangle ``side``."""
        if side not in (0, 1):
            raise ValueError("side must be 0 or 1")
        sign = 1.0 if side == 0 else -1.0
        if self.edge_tris[edge, side] < 0:
            raise ValueError(f"edge {edge} has no incident triangle on side {side}")
        return sign * self.normals[edge]

    def boundary_vertices(self):
        """Indices of vertices lying on the domain boundary."""
        return np.unique(self.edges[self.is_boundary_edge].ravel())

    def total_area(self):
        return float(self.areas.sum())


def _cells_for_domain(n, domain):
    if domain == "unit-square":
        keep = np.ones((n, n), dtype=bool)
    elif domain == "l-shape":
        if n % 2 != 0:
            raise ValueError("l-shape requires an even number of cells per side")
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        keep = ~((i >= n // 2) & (j < n // 2))
    else:
        raise ValueError(f"unknown domain {domain!r}; use 'unit-square' or 'l-shape'")
    return keep


def generate_structured(n, domain="unit-square"):
    """Structured triangulation with ``n`` cells per unit side.

    Each retained grid cell is split along its SW-NE diagonal, giving
    2*n**2 triangles on the unit square and 1.5*n**2 on the L-shape.
    ``h_max`` equals sqrt(2)/n.

    Raises
    ------
    ValueError
        If ``n < 2`` or the domain name is unknown.
    """
    if n < 2:
        raise ValueError("need at least 2 cells per side")
    keep = _cells_for_domain(n, domain)

    grid = np.arange((n + 1) * (n + 1)).reshape(n + 1, n + 1)  # grid[i, j], x=i/n, y=j/n
    i, j = np.nonzero(keep)
    sw = grid[i, j]
    se = grid[i + 1, j]
    ne = grid[i + 1, j + 1]
    nw = grid[i, j + 1]
    lower = np.stack([sw, se, ne], axis=1)
    upper = np.stack([sw, ne, nw], axis=1)
    tris = np.concatenate([lower, upper], axis=0)

    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    verts = np.stack([ii.ravel() / n, jj.ravel() / n], axis=1)

    used = np.unique(tris.ravel())
    remap = -np.ones((n + 1) * (n + 1), dtype=np.int64)
    remap[used] = np.arange(len(used))
    mesh = TriangleMesh(verts[used], remap[tris])
    assert mesh.quasi_uniformity_ratio <= 4.0
    return mesh


def perturb_quasi_uniform(mesh, factor, seed, pinned_vertices=None):
    """Randomly displace interior vertices by at most ``factor`` of the local
    edge length.

    Boundary vertices and any ``pinned_vertices`` (typically the vertices of
    a partition interface) are kept fixed, so the topology and any partition
    built on the input mesh remain valid.  Deterministic for a given seed.
    If a draw inverts a triangle the displacement is halved and redrawn, down
    to ``factor / 8``; failure past that raises.
    """
    if not 0.0 <= factor <= 0.3:
        raise ValueError("displacement factor must lie in [0, 0.3] to keep shape regularity")
    if factor == 0.0:
        return TriangleMesh(mesh.vertices.copy(), mesh.triangles.copy())

    movable = np.ones(mesh.n_vertices, dtype=bool)
    movable[mesh.boundary_vertices()] = False
    if pinned_vertices is not None:
        movable[np.asarray(pinned_vertices, dtype=np.int64)] = False

    # local scale: shortest edge touching the vertex
    h_local = np.full(mesh.n_vertices, np.inf)
    for c in (0, 1):
        np.minimum.at(h_local, mesh.edges[:, c], mesh.h_e)

    rng = np.random.default_rng(seed)
    radius = rng.uniform(0.0, 1.0, mesh.n_vertices)
    angle = rng.uniform(0.0, 2.0 * np.pi, mesh.n_vertices)
    unit = np.stack([np.cos(angle), np.sin(angle)], axis=1)

    fac = factor
    while True:
        disp = (fac * radius * h_local)[:, None] * unit
        disp[~movable] = 0.0
        verts = mesh.vertices + disp
        v0, v1, v2 = (verts[mesh.triangles[:, k]] for k in range(3))
        if np.all(0.5 * _cross2(v1 - v0, v2 - v0) > 0.0):
            return TriangleMesh(verts, mesh.triangles.copy())
        if fac <= factor / 8.0:
            raise ValueError("perturbation keeps inverting triangles even at factor/8")
        fac *= 0.5


# -- partitions -------------------------------------------------------------


@dataclass
class Partition:
    """Element-to-subdomain map with interface edge sets.

    ``interface_edges`` maps an ordered pair (i, j), i < j, to the edge ids
    of the interface between subdomains i and j.  ``gamma_edges`` is their
    sorted union.  ``subdomain_interface`` / ``subdomain_exterior`` split
    each subdomain's boundary edges into interface and domain-boundary
    parts.
    """

    subdomain_of: np.ndarray
    n_subdomains: int
    interface_edges: dict
    gamma_edges: np.ndarray
    subdomain_interface: list
    subdomain_exterior: list
    H_max: float
    H_omega: float
    neighbors_of_edge: dict = field(default_factory=dict)

    def interface_vertices(self, mesh):
        """Vertex ids touched by any interface edge (for perturbation pinning)."""
        if len(self.gamma_edges) == 0:
            return np.empty(0, dtype=np.int64)
        return np.unique(mesh.edges[self.gamma_edges].ravel())


def _diameter(points):
    if len(points) <= 1:
        return 0.0
    if len(points) > 64:
        from scipy.spatial import ConvexHull

        points = points[ConvexHull(points).vertices]
    d = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((d ** 2).sum(axis=2)).max())


def _assign_two_straight(mesh, n_rows):
    cx = mesh.vertices[mesh.triangles, 0].mean(axis=1)
    return (cx > 0.5).astype(np.int64)


def _assign_two_nonstraight(mesh, n_rows):
    # staircase: odd cell rows have the cut shifted one fine column to the right
    c = mesh.vertices[mesh.triangles].mean(axis=1)
    row = np.floor(c[:, 1] * n_rows).astype(np.int64)
    cut = 0.5 + (row % 2) / n_rows
    return (c[:, 0] > cut).astype(np.int64)


def _assign_coarse_grid(mesh, m):
    """Subdomain = containing triangle of the m-by-m coarse triangulation."""
    c = mesh.vertices[mesh.triangles].mean(axis=1)
    I = np.clip(np.floor(c[:, 0] * m).astype(np.int64), 0, m - 1)
    J = np.clip(np.floor(c[:, 1] * m).astype(np.int64), 0, m - 1)
    lx = c[:, 0] * m - I
    ly = c[:, 1] * m - J
    upper = ly > lx
    sd = 2 * (J * m + I) + upper.astype(np.int64)

    # nestedness: every fine vertex must lie inside the assigned coarse triangle
    tol = 1e-12
    for t in range(mesh.n_triangles):
        X0, Y0 = I[t] / m, J[t] / m
        pts = mesh.vertices[mesh.triangles[t]]
        lxv = (pts[:, 0] - X0) * m
        lyv = (pts[:, 1] - Y0) * m
        inside_cell = np.all((lxv >= -tol) & (lxv <= 1 + tol) & (lyv >= -tol) & (lyv <= 1 + tol))
        if upper[t]:
            inside = inside_cell and np.all(lyv >= lxv - tol)
        else:
            inside = inside_cell and np.all(lyv <= lxv + tol)
        if not inside:
            raise ValueError(
                f"fine mesh is not nested in the {m}x{m} coarse triangulation: "
                f"triangle {t} crosses a coarse edge")
    return sd


def _assign_quadrants(mesh, m):
    """Subdomain = containing cell of an m-by-m grid of squares."""
    c = mesh.vertices[mesh.triangles].mean(axis=1)
    I = np.clip(np.floor(c[:, 0] * m).astype(np.int64), 0, m - 1)
    J = np.clip(np.floor(c[:, 1] * m).astype(np.int64), 0, m - 1)
    sd = J * m + I
    tol = 1e-12
    for t in range(mesh.n_triangles):
        pts = mesh.vertices[mesh.triangles[t]]
        lx = pts[:, 0] * m - I[t]
        ly = pts[:, 1] * m - J[t]
        if not np.all((lx >= -tol) & (lx <= 1 + tol) & (ly >= -tol) & (ly <= 1 + tol)):
            raise ValueError(
                f"fine mesh is not nested in the {m}x{m} square grid: "
                f"triangle {t} crosses a cell boundary")
    return sd


def partition_mesh(mesh, strategy, m=None):
    """Partition a mesh into subdomains along interior edges.

    Parameters
    ----------
    strategy : str
        * ``"two-straight"``: two subdomains cut at x = 0.5.
        * ``"two-nonstraight"``: two subdomains, deterministic staircase cut
          around x = 0.5 (odd cell rows shifted one fine column).
        * ``"coarse-grid"``: the 2*m**2 triangles of an m-by-m coarse
          triangulation become subdomains (fewer on the L-shape); requires
          the fine mesh to be nested.
        * ``"quadrants"``: the m**2 squares of an m-by-m grid become
          subdomains (fewer on the L-shape); requires nesting.
    m : int, optional
        Coarse cells per side for the grid-based strategies.

    Returns
    -------
    Partition
    """
    # infer the structured resolution from h (staircase rule needs cell rows)
    n_rows = int(round(1.0 / (mesh.h_max / np.sqrt(2.0))))
    if strategy == "two-straight":
        sd = _assign_two_straight(mesh, n_rows)
    elif strategy == "two-nonstraight":
        sd = _assign_two_nonstraight(mesh, n_rows)
    elif strategy == "coarse-grid":
        if m is None or m < 1:
            raise ValueError("coarse-grid strategy needs a coarse resolution m >= 1")
        sd = _assign_coarse_grid(mesh, m)
    elif strategy == "quadrants":
        if m is None or m < 1:
            raise ValueError("quadrants strategy needs a grid resolution m >= 1")
        sd = _assign_quadrants(mesh, m)
    else:
        raise ValueError(f"unknown partition strategy {strategy!r}")

    # compress subdomain ids (L-shape leaves gaps)
    used = np.unique(sd)
    remap = {int(s): k for k, s in enumerate(used)}
    sd = np.array([remap[int(s)] for s in sd], dtype=np.int64)
    n_sub = len(used)

    return _build_partition(mesh, sd, n_sub)


def partition_from_map(mesh, subdomain_of):
    """Rebuild partition metadata from an existing element-to-subdomain map.

    Meant for meshes perturbed with the interface vertices pinned: the
    element indexing is unchanged, so the map carries over verbatim while
    diameters and edge sets are recomputed on the new geometry.
    """
    sd = np.asarray(subdomain_of, dtype=np.int64)
    if len(sd) != mesh.n_triangles:
        raise ValueError("subdomain map length does not match the mesh")
    return _build_partition(mesh, sd.copy(), int(sd.max()) + 1)


def _build_partition(mesh, sd, n_sub):
    interior = ~mesh.is_boundary_edge
    t0 = mesh.edge_tris[:, 0]
    t1 = np.where(interior, mesh.edge_tris[:, 1], mesh.edge_tris[:, 0])
    s0 = sd[t0]
    s1 = sd[t1]
    cross = interior & (s0 != s1)

    interface_edges = {}
    neighbors_of_edge = {}
    gamma = np.nonzero(cross)[0]
    for e in gamma:
        i, j = sorted((int(s0[e]), int(s1[e])))
        interface_edges.setdefault((i, j), []).append(int(e))
        neighbors_of_edge[int(e)] = (i, j)
    interface_edges = {k: np.array(v, dtype=np.int64) for k, v in interface_edges.items()}

    sub_interface = []
    sub_exterior = []
    for i in range(n_sub):
        touch0 = sd[mesh.edge_tris[:, 0]] == i
        touch1 = interior & (sd[t1] == i)
        sub_interface.append(np.nonzero(cross & (touch0 | touch1))[0])
        sub_exterior.append(np.nonzero(mesh.is_boundary_edge & touch0)[0])

    H_max = 0.0
    for i in range(n_sub):
        vids = np.unique(mesh.triangles[sd == i].ravel())
        H_max = max(H_max, _diameter(mesh.vertices[vids]))
    H_omega = _diameter(mesh.vertices)

    part = Partition(
        subdomain_of=sd,
        n_subdomains=n_sub,
        interface_edges=interface_edges,
        gamma_edges=gamma.astype(np.int64),
        subdomain_interface=sub_interface,
        subdomain_exterior=sub_exterior,
        H_max=H_max,
        H_omega=H_omega,
        neighbors_of_edge=neighbors_of_edge,
    )
    _validate_partition(mesh, part)
    return part


def _validate_partition(mesh, part):
    sd = part.subdomain_of
    if len(sd) != mesh.n_triangles:
        raise ValueError("subdomain map does not cover the mesh")
    for (i, j), eds in part.interface_edges.items():
        if np.any(mesh.is_boundary_edge[eds]):
            raise ValueError(f"interface ({i},{j}) contains a boundary edge")
        pair = np.sort(np.stack([sd[mesh.edge_tris[eds, 0]], sd[mesh.edge_tris[eds, 1]]], 1), 1)
        if not np.all((pair[:, 0] == i) & (pair[:, 1] == j)):
            raise ValueError(f"interface ({i},{j}) has an edge with wrong incident subdomains")
    # edge-connectivity within each subdomain
    interior = ~mesh.is_boundary_edge
    same = interior & (sd[mesh.edge_tris[:, 0]] == sd[np.where(interior, mesh.edge_tris[:, 1], 0)])
    import scipy.sparse as sp

    e = np.nonzero(same)[0]
    adj = sp.coo_matrix(
        (np.ones(len(e)), (mesh.edge_tris[e, 0], mesh.edge_tris[e, 1])),
        shape=(mesh.n_triangles, mesh.n_triangles),
    )
    n_comp, labels = sp.csgraph.connected_components(adj + adj.T, directed=False)
    for i in range(part.n_subdomains):
        if len(np.unique(labels[sd == i])) != 1:
            raise ValueError(f"subdomain {i} is not edge-connected")


# -- plain-text mesh I/O -----------------------------------------------------


def write_mesh_text(mesh, path):
    """Write ``V T E`` header, vertex and triangle lines; edges are derived."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {mesh.n_edges}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def read_mesh_text(path):
    with open(path) as fh:
        tokens = fh.read().split()
    V, T, E = (int(t) for t in tokens[:3])
    need = 3 + 2 * V + 3 * T
    if len(tokens) != need:
        raise ValueError(f"mesh file has {len(tokens)} tokens, expected {need}")
    verts = np.array(tokens[3:3 + 2 * V], dtype=float).reshape(V, 2)
    tris = np.array(tokens[3 + 2 * V:], dtype=np.int64).reshape(T, 3)
    mesh = TriangleMesh(verts, tris)
    if mesh.n_edges != E:
        raise ValueError(f"derived {mesh.n_edges} edges but header says {E}")
    return mesh
