"""Assembly of the primal interior-penalty system and its hybridized blocks.

The primal bilinear form contains volume mass/stiffness terms, consistency
terms against jumps on every edge, the jump penalty (weight mu_e/2 on
interior edges, mu_e on boundary edges), and the normal-derivative-jump
stabilization -1/(2 mu_e) on interior edges; this is the symmetric
penalty-based DG variant that admits static condensation to a single-valued
edge unknown.

The hybrid form splits the same discretization across a partition: each
subdomain gets an independent copy of the form with Nitsche-type Dirichlet
terms on its whole boundary, the interface unknown carries a doubled
penalty-weighted edge mass, and the coupling pairs subdomain traces with the
interface unknown.  Eliminating the interface unknown reproduces the primal
matrix entrywise, which ``eliminate_lambda_check`` verifies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dg_space import EDGE_MASS_UNIT, BrokenP1Space, QuadratureRule, TraceSpace


@dataclass(frozen=True)
class PenaltyField:
    """Edge penalty mu_e = alpha / h_e; alpha is fixed across a mesh family."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError("penalty strength alpha must be positive")

    def mu_per_edge(self, mesh):
        return self.alpha / mesh.h_e


def default_alpha(c=1.0, degree=1):
    """Penalty strength c*(k+1)*(k+2); c = 1 and k = 1 give alpha = 6."""
    return c * (degree + 1) * (degree + 2)


# -- per-edge geometric data -------------------------------------------------


class _EdgeData:
    """Per-edge, per-side quantities used by every edge term.

    d[e, s]: normal derivatives of the side's three basis functions (own
    outward normal); w[e, s]: integrals of their traces; mloc[e, s, s']:
    pairwise trace mass; can_local[e, s, r]: local vertex at canonical
    endpoint r.  Side 1 entries are zero/invalid on boundary edges.
    """

    def __init__(self, space):
        mesh = space.mesh
        E = mesh.n_edges
        grads = space.gradients()
        self.d = np.zeros((E, 2, 3))
        self.w = np.zeros((E, 2, 3))
        self.can_local = np.zeros((E, 2, 2), dtype=np.int64)
        sel = np.zeros((E, 2, 2, 3))  # one-hot: canonical node r -> local dof
        L = mesh.h_e
        self.L = L

        for s in (0, 1):
            has = mesh.edge_tris[:, s] >= 0
            e = np.nonzero(has)[0]
            t = mesh.edge_tris[e, s]
            sign = 1.0 if s == 0 else -1.0
            self.d[e, s, :] = np.einsum("epc,ec->ep", grads[t], sign * mesh.normals[e])
            for r in (0, 1):
                v = mesh.edges[e, r]
                local = np.argmax(mesh.triangles[t] == v[:, None], axis=1)
                self.can_local[e, s, r] = local
                sel[e, s, r, local] = 1.0
                self.w[e, s, local] += 0.5 * L[e]
        # mloc[e, s, s'] = L * sel(s)^T M_unit sel(s')
        self.mloc = np.einsum("e,esrp,rq,etqk->estpk", L, sel, EDGE_MASS_UNIT, sel)
        self.sel = sel


def _interior_edge_blocks(ed, edges, mu):
    """Dense (len(edges), 6, 6) blocks of all interior-edge terms."""
    d = ed.d[edges]          # (E,2,3)
    w = ed.w[edges]          # (E,2,3)
    m = ed.mloc[edges]       # (E,2,2,3,3)
    L = ed.L[edges]
    mu = mu[:, None, None]
    sgn = np.array([1.0, -1.0])
    sigma = np.array([[1.0, -1.0], [-1.0, 1.0]])

    blocks = np.zeros((len(edges), 6, 6))
    for a in (0, 1):
        for b in (0, 1):
            ra, rb = slice(3 * a, 3 * a + 3), slice(3 * b, 3 * b + 3)
            pen = 0.5 * mu * sgn[a] * sgn[b] * m[:, b, a]
            cons = -0.5 * sigma[a, b] * np.einsum("eq,ep->eqp", w[:, b], d[:, a])
            gj = -np.einsum("e,eq,ep->eqp", 0.5 * L / mu[:, 0, 0], d[:, b], d[:, a])
            blocks[:, rb, ra] += pen + cons + gj
            # symmetric consistency partner (jump of the test function)
            blocks[:, ra, rb] += -0.5 * sigma[a, b] * np.einsum("eq,ep->epq", w[:, b], d[:, a])
    return blocks


def _boundary_style_blocks(ed, edges, mu, side):
    """Nitsche blocks -<du/dn, v> - <dv/dn, u> + mu <u, v> on one edge side."""
    d = ed.d[edges, side]
    w = ed.w[edges, side]
    m = ed.mloc[edges, side, side]
    pen = mu[:, None, None] * m
    cons = np.einsum("eq,ep->eqp", w, d)
    return pen - cons - np.transpose(cons, (0, 2, 1))


def _coupling_blocks(ed, edges, mu, side):
    """(3, 2) blocks <dv/dn - mu v, psi_r> pairing side DOFs with edge DOFs."""
    L = ed.w[edges, side].sum(axis=1)  # equals h_e
    d = ed.d[edges, side]
    # integral of trace(phi_p) * psi_r = L * sel^T M_unit
    tm = np.einsum("e,erp,rq->epq", L, ed.sel[edges, side], EDGE_MASS_UNIT)
    return 0.5 * L[:, None, None] * d[:, :, None] - mu[:, None, None] * tm


def _scatter(blocks, rows, cols, shape):
    r = np.broadcast_to(rows[:, :, None], blocks.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], blocks.shape).ravel()
    return sp.coo_matrix((blocks.ravel(), (r, c)), shape=shape)


def _load_vector(space, f, quad=None):
    quad = quad or QuadratureRule.default()
    mesh = space.mesh
    p = mesh.vertices[mesh.triangles]  # (T,3,2)
    out = np.zeros((mesh.n_triangles, 3))
    for q in range(len(quad.tri_weights)):
        bary = quad.tri_points[q]
        x = np.einsum("j,tjc->tc", bary, p)
        fv = f(x[:, 0], x[:, 1]) * (quad.tri_weights[q] * mesh.areas)
        out += fv[:, None] * bary[None, :]
    return out.ravel()


def smallest_eigenvalue(A, dense_limit=1500):
    """Smallest eigenvalue of a sparse symmetric matrix (dense under the limit,
    shift-invert Lanczos above)."""
    n = A.shape[0]
    if n <= dense_limit:
        return float(np.linalg.eigvalsh(A.toarray())[0])
    try:
        vals = spla.eigsh(A.tocsc(), k=1, sigma=0.0, which="LM",
                          return_eigenvectors=False)
        return float(vals[0])
    except Exception:
        vals = spla.eigsh(A, k=1, which="SA", return_eigenvectors=False, maxiter=4000)
        return float(vals[0])


def assemble_primal(space, eta, penalty, f, check_coercivity=None):
    """Assemble the primal system matrix and load vector.

    Parameters
    ----------
    space : BrokenP1Space
    eta : float
        Nonnegative reaction coefficient.
    penalty : PenaltyField
    f : callable(x, y) -> values
        Source term, integrated with the degree-2 volume rule.
    check_coercivity : bool, optional
        Verify the smallest eigenvalue is positive after assembly.  Defaults
        to running the check only on systems small enough for a dense
        eigensolve.

    Returns
    -------
    (A, fvec) : csr matrix and load vector.
    """
    mesh = space.mesh
    if eta < 0.0:
        raise ValueError("eta must be nonnegative")
    ed = _EdgeData(space)
    mu = penalty.mu_per_edge(mesh)
    n = space.n_dofs

    A = eta * space.mass_matrix + space.stiffness_matrix

    interior = np.nonzero(~mesh.is_boundary_edge)[0]
    if len(interior):
        blocks = _interior_edge_blocks(ed, interior, mu[interior])
        t = mesh.edge_tris[interior]
        dofs = np.concatenate([3 * t[:, :1] + np.arange(3), 3 * t[:, 1:] + np.arange(3)], axis=1)
        A = A + _scatter(blocks, dofs, dofs, (n, n)).tocsr()

    boundary = np.nonzero(mesh.is_boundary_edge)[0]
    if len(boundary):
        blocks = _boundary_style_blocks(ed, boundary, mu[boundary], side=0)
        t = mesh.edge_tris[boundary, 0]
        dofs = 3 * t[:, None] + np.arange(3)
        A = A + _scatter(blocks, dofs, dofs, (n, n)).tocsr()

    A.sum_duplicates()
    asym = abs(A - A.T).max() if A.nnz else 0.0
    if asym > 1e-13 * abs(A).max():
        raise AssertionError(f"assembled matrix is not symmetric (defect {asym:.2e})")

    if check_coercivity is None:
        check_coercivity = n <= 1500
    if check_coercivity:
        lam = smallest_eigenvalue(A)
        if lam <= 0.0:
            raise ValueError(
                f"assembled system is not positive definite (smallest eigenvalue "
                f"{lam:.3e}); increase the penalty strength alpha")

    return A, _load_vector(space, f)


# -- hybrid block system ------------------------------------------------------


@dataclass
class BlockSystem:
    """Assembled per-subdomain blocks, interface mass, and the primal pair.

    ``A_sub[i]`` acts on subdomain i's local element DOFs (3 per triangle,
    ordered by ascending global triangle id); ``coupling[i]`` maps subdomain
    i's own interface-trace DOFs (2 per own interface edge, canonical
    endpoint order) into those local DOFs.  ``gamma_mass_blocks`` holds the
    doubled penalty-weighted edge mass, one 2x2 block per interface edge in
    ``trace.gamma_edges`` order.
    """

    mesh: object
    partition: object
    trace: TraceSpace
    space: BrokenP1Space
    eta: float
    penalty: PenaltyField
    sub_tris: list
    sub_dofs: list
    A_sub: list
    coupling: list
    f_sub: list
    gamma_mass_blocks: np.ndarray
    A_primal: sp.csr_matrix
    f_primal: np.ndarray
    source: object = None
    _factors: dict = field(default_factory=dict, repr=False)

    @property
    def n_subdomains(self):
        return self.partition.n_subdomains

    @property
    def n_gamma(self):
        return 2 * len(self.trace.gamma_edges)

    def sub_factor(self, i):
        if i not in self._factors:
            self._factors[i] = spla.splu(self.A_sub[i].tocsc())
        return self._factors[i]

    def sub_solve(self, i, rhs):
        return self.sub_factor(i).solve(rhs)

    def gamma_mass_csr(self):
        """Single-copy interface block as a sparse matrix (2x2 block diagonal)."""
        k = len(self.trace.gamma_edges)
        rows = np.repeat(np.arange(2 * k).reshape(k, 2), 2, axis=1).ravel()
        cols = np.tile(np.arange(2 * k).reshape(k, 2), (1, 2)).ravel()
        return sp.coo_matrix((self.gamma_mass_blocks.ravel(), (rows, cols)),
                             shape=(2 * k, 2 * k)).tocsr()

    def sub_gamma_mass_blocks(self, i):
        """2x2 interface-mass blocks restricted to subdomain i's own edges."""
        pos = np.searchsorted(self.trace.gamma_edges, self.trace.sub_edges[i])
        return self.gamma_mass_blocks[pos]

    def coupling_single(self, i):
        """Coupling block of subdomain i with columns in single-copy layout."""
        C = self.coupling[i].tocoo()
        cols = self.trace.sub_slots(i)
        return sp.coo_matrix((C.data, (C.row, cols[C.col])),
                             shape=(C.shape[0], self.n_gamma)).tocsr()

    def mass_matrix(self):
        return self.space.mass_matrix

    def l2_norm(self, u):
        return float(np.sqrt(max(u @ (self.space.mass_matrix @ u), 0.0)))

    def source_l2_norm(self, f, quad=None):
        """L2 norm of a source callable by element quadrature."""
        quad = quad or QuadratureRule.default()
        mesh = self.mesh
        p = mesh.vertices[mesh.triangles]
        total = 0.0
        for q in range(len(quad.tri_weights)):
            x = np.einsum("j,tjc->tc", quad.tri_points[q], p)
            total += float(np.sum(quad.tri_weights[q] * mesh.areas
                                  * f(x[:, 0], x[:, 1]) ** 2))
        return float(np.sqrt(max(total, 0.0)))


def assemble_hybrid(partition, trace, eta, penalty, f, mesh=None, space=None):
    """Assemble the hybrid block system for a partition.

    Every subdomain is discretized independently with weak Dirichlet terms
    on its entire boundary (outer boundary and interface alike); interface
    edges additionally produce the trace coupling and the doubled
    penalty-weighted interface mass.  The primal system is assembled
    alongside for reference solves.
    """
    if mesh is None:
        raise ValueError("pass the mesh the partition was built on")
    space = space or BrokenP1Space(mesh)
    ed = _EdgeData(space)
    mu = penalty.mu_per_edge(mesh)
    sd = partition.subdomain_of
    n_sub = partition.n_subdomains

    gamma_sorted = trace.gamma_edges
    interior = ~mesh.is_boundary_edge
    on_gamma = np.zeros(mesh.n_edges, dtype=bool)
    on_gamma[gamma_sorted] = True

    sub_tris, sub_dofs, A_sub, coupling, f_sub = [], [], [], [], []
    f_primal_full = _load_vector(space, f)

    for i in range(n_sub):
        tris = np.nonzero(sd == i)[0]
        n_i = 3 * len(tris)
        local_of_tri = -np.ones(mesh.n_triangles, dtype=np.int64)
        local_of_tri[tris] = np.arange(len(tris))
        dofs_i = (3 * tris[:, None] + np.arange(3)).ravel()

        # volume terms
        Kblocks = (np.einsum("tpc,tqc->tpq", space.gradients()[tris], space.gradients()[tris])
                   * mesh.areas[tris, None, None])
        Mlocal = (np.full((3, 3), 1.0) + np.eye(3)) / 12.0
        Mblocks = eta * mesh.areas[tris, None, None] * Mlocal
        ldofs = 3 * local_of_tri[tris][:, None] + np.arange(3)
        Ai = _scatter(Kblocks + Mblocks, ldofs, ldofs, (n_i, n_i))

        # edges internal to the subdomain
        both_in = interior & (sd[mesh.edge_tris[:, 0]] == i)
        both_in &= sd[np.where(interior, mesh.edge_tris[:, 1], 0)] == i
        internal = np.nonzero(both_in & ~on_gamma)[0]
        if len(internal):
            blocks = _interior_edge_blocks(ed, internal, mu[internal])
            t = mesh.edge_tris[internal]
            dofs = np.concatenate([3 * local_of_tri[t[:, 0]][:, None] + np.arange(3),
                                   3 * local_of_tri[t[:, 1]][:, None] + np.arange(3)], axis=1)
            Ai = Ai + _scatter(blocks, dofs, dofs, (n_i, n_i))

        # subdomain boundary: outer boundary edges and interface edges
        for side in (0, 1):
            has = mesh.edge_tris[:, side] >= 0
            mine = has & (sd[np.where(has, mesh.edge_tris[:, side], 0)] == i)
            bnd = np.nonzero(mine & (mesh.is_boundary_edge | on_gamma))[0]
            if side == 1:
                bnd = bnd[~mesh.is_boundary_edge[bnd]]
            if not len(bnd):
                continue
            blocks = _boundary_style_blocks(ed, bnd, mu[bnd], side=side)
            t = mesh.edge_tris[bnd, side]
            dofs = 3 * local_of_tri[t][:, None] + np.arange(3)
            Ai = Ai + _scatter(blocks, dofs, dofs, (n_i, n_i))

        Ai = Ai.tocsr()
        Ai.sum_duplicates()
        A_sub.append(Ai)
        sub_tris.append(tris)
        sub_dofs.append(dofs_i)
        f_sub.append(f_primal_full[dofs_i])

        # trace coupling on own interface edges
        own = trace.sub_edges[i]
        rows_b, cols_b, vals_b = [], [], []
        for side in (0, 1):
            has = mesh.edge_tris[:, side] >= 0
            sel = np.zeros(mesh.n_edges, dtype=bool)
            sel[own] = True
            mine = sel & has & (sd[np.where(has, mesh.edge_tris[:, side], 0)] == i)
            eds = np.nonzero(mine)[0]
            if not len(eds):
                continue
            blocks = _coupling_blocks(ed, eds, mu[eds], side=side)
            t = mesh.edge_tris[eds, side]
            rdofs = 3 * local_of_tri[t][:, None] + np.arange(3)
            own_pos = np.searchsorted(own, eds)
            cdofs = 2 * own_pos[:, None] + np.arange(2)
            rows_b.append(np.broadcast_to(rdofs[:, :, None], blocks.shape).ravel())
            cols_b.append(np.broadcast_to(cdofs[:, None, :], blocks.shape).ravel())
            vals_b.append(blocks.ravel())
        if rows_b:
            Ci = sp.coo_matrix((np.concatenate(vals_b),
                                (np.concatenate(rows_b), np.concatenate(cols_b))),
                               shape=(n_i, 2 * len(own))).tocsr()
        else:
            Ci = sp.csr_matrix((n_i, 0))
        coupling.append(Ci)

    gamma_mass = 2.0 * mu[gamma_sorted, None, None] * mesh.h_e[gamma_sorted, None, None] \
        * EDGE_MASS_UNIT[None, :, :]

    A_primal, f_primal = assemble_primal(space, eta, penalty, f, check_coercivity=False)

    return BlockSystem(
        mesh=mesh, partition=partition, trace=trace, space=space,
        eta=eta, penalty=penalty,
        sub_tris=sub_tris, sub_dofs=sub_dofs, A_sub=A_sub, coupling=coupling,
        f_sub=f_sub, gamma_mass_blocks=gamma_mass,
        A_primal=A_primal, f_primal=f_primal, source=f,
    )


def eliminate_lambda_check(bs, A_primal=None, max_dofs=5000):
    """Max entrywise discrepancy between the condensed hybrid matrix and the
    primal matrix, relative to the primal matrix scale.

    Eliminates the interface unknown by its (exactly invertible, 2x2 block
    diagonal) mass block.  Refuses on systems above ``max_dofs`` total DOFs.
    """
    A = bs.A_primal if A_primal is None else A_primal
    n = A.shape[0]
    total = n + bs.n_gamma
    if total > max_dofs:
        raise ValueError(f"elimination check limited to {max_dofs} DOFs, got {total}")

    Auu = sp.lil_matrix((n, n))
    for i in range(bs.n_subdomains):
        d = bs.sub_dofs[i]
        Auu[np.ix_(d, d)] = bs.A_sub[i].toarray()
    Auu = Auu.tocsr()

    cols = []
    rows = []
    vals = []
    for i in range(bs.n_subdomains):
        C = bs.coupling_single(i).tocoo()
        rows.append(bs.sub_dofs[i][C.row])
        cols.append(C.col)
        vals.append(C.data)
    Aul = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, bs.n_gamma)).tocsr()

    inv_blocks = np.linalg.inv(bs.gamma_mass_blocks)
    k = len(bs.trace.gamma_edges)
    r = np.repeat(np.arange(2 * k).reshape(k, 2), 2, axis=1).ravel()
    c = np.tile(np.arange(2 * k).reshape(k, 2), (1, 2)).ravel()
    Ginv = sp.coo_matrix((inv_blocks.ravel(), (r, c)), shape=(2 * k, 2 * k)).tocsr()

    condensed = Auu - Aul @ Ginv @ Aul.T
    scale = abs(A).max()
    return float(abs(condensed - A).max() / scale)


def export_matrix_coo(A, path):
    """Write a sparse matrix as 0-based ``row col value`` text lines."""
    coo = sp.coo_matrix(A)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}\n")
