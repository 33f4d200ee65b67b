"""Schwarz iterations on the interface algebra.

Three solvers share a common reporting format:

* ``block_jacobi``: the subdomain-diagonal splitting of the primal system.
* ``classical_schwarz`` / ``optimized_schwarz``: the two-subdomain interface
  iteration; the optimized variant relaxes the transmission operators by a
  weight in [0, 1) without moving the fixed point, and weight 0 recovers the
  classical iteration exactly.
* ``multi_schwarz``: the many-subdomain generalization with one interface
  unknown per subdomain side; ``build_augmented`` exposes the same iteration
  as a global matrix splitting K w = L w + g.

All iterations use Jacobi semantics: every subdomain consumes only the
previous sweep's neighbor data, so the subdomain solves of one sweep are
independent.  Iteration counts are measured by the relative broken-L2 error
of the current primal iterate against the direct solution, scaled by the
source norm.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dg_space import EDGE_MASS_UNIT
from .schur import densify_robin_trace


@dataclass
class SchwarzConfig:
    """Iteration controls.

    ``relaxation`` is the transmission weight in [0, 1); 0 means the
    classical iteration, ``None`` selects the mesh-dependent default
    ``default_relaxation(h, alpha, gamma)``.  ``error_norm`` picks the
    convergence functional: relative broken-L2 of the primal iterate
    (``"l2-of-u"``) or relative interface-L2 of the trace iterate
    (``"trace-l2"``).
    """

    variant: str = "classical"
    relaxation: float | None = 0.0
    gamma: float = 0.5
    tol: float = 1e-10
    max_iter: int = 200000
    error_norm: str = "l2-of-u"
    seed: int = 0
    initial: str = "random"
    record_iterates: bool = False

    def __post_init__(self):
        if self.variant not in ("classical", "optimized", "multi"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.relaxation is not None and not 0.0 <= self.relaxation < 1.0:
            raise ValueError("relaxation must lie in [0, 1)")
        if self.variant == "classical" and self.relaxation not in (None, 0.0):
            raise ValueError("the classical variant means relaxation 0")
        if self.error_norm not in ("l2-of-u", "trace-l2"):
            raise ValueError(f"unknown error norm {self.error_norm!r}")


@dataclass
class SolveReport:
    """Iteration history of a stationary or Krylov solve."""

    iterations: int
    errors: np.ndarray
    converged: bool
    rho: float
    wall_time: float
    diverged: bool = False
    iterates: list = field(default_factory=list, repr=False)
    u: np.ndarray | None = field(default=None, repr=False)
    u_star: np.ndarray | None = field(default=None, repr=False)
    lam: list | None = field(default=None, repr=False)
    lam_star: np.ndarray | None = field(default=None, repr=False)

    def to_csv(self):
        lines = ["iter,error_norm"]
        for k, e in enumerate(self.errors):
            lines.append(f"{k},{e:.17g}")
        lines.append(f"# fitted_contraction_factor,{self.rho:.17g}")
        return "\n".join(lines) + "\n"


def fitted_contraction(errors, window=5):
    """Geometric mean of the last ``window`` error ratios."""
    e = np.asarray(errors, dtype=float)
    e = e[e > 0.0]
    if len(e) < 2:
        return float("nan")
    w = min(window, len(e) - 1)
    return float((e[-1] / e[-1 - w]) ** (1.0 / w))


def default_relaxation(h, alpha, gamma=0.5):
    """Transmission weight (1 - (h/alpha)^gamma) / (1 + (h/alpha)^gamma).

    Lies in (0, 1) for h < alpha and increases toward 1 as h decreases;
    gamma = 1/2 is the choice with the best contraction scaling.
    """
    if h <= 0.0 or alpha <= 0.0 or gamma <= 0.0:
        raise ValueError("h, alpha and gamma must be positive")
    r = (h / alpha) ** gamma
    return (1.0 - r) / (1.0 + r)


def _resolve_relaxation(bs, config):
    if config.variant == "classical":
        return 0.0
    if config.relaxation is None:
        return default_relaxation(bs.mesh.h_max, bs.penalty.alpha, config.gamma)
    return float(config.relaxation)


def _run_history(update, err0, tol, max_iter, record0=None):
    """Drive a stationary iteration until the error functional passes tol."""
    t0 = time.perf_counter()
    errors = [err0]
    iterates = [] if record0 is None else [record0]
    converged = err0 <= tol
    diverged = False
    it = 0
    growth = 0
    while not converged and it < max_iter:
        it += 1
        err, snapshot = update()
        errors.append(err)
        if snapshot is not None:
            iterates.append(snapshot)
        if err <= tol:
            converged = True
        growth = growth + 1 if err > errors[-2] else 0
        if growth >= 10:
            diverged = True
            break
        if not np.isfinite(err):
            diverged = True
            break
    return SolveReport(
        iterations=it,
        errors=np.array(errors),
        converged=converged,
        rho=fitted_contraction(errors),
        wall_time=time.perf_counter() - t0,
        diverged=diverged,
        iterates=iterates,
    )


# -- two-subdomain interface iteration ---------------------------------------


class _TwoSubdomainEngine:
    """Shared precomputation for the two-subdomain interface iterations."""

    def __init__(self, bs, g_gamma=None):
        if bs.n_subdomains != 2:
            raise ValueError("the interface iteration needs exactly two subdomains")
        self.bs = bs
        n = bs.n_gamma
        self.G = bs.gamma_mass_csr().toarray()
        self.B = [densify_robin_trace(bs, i).matrix for i in range(2)]
        if g_gamma is None:
            g_gamma = np.zeros(n)
            for i in range(2):
                slots = bs.trace.sub_slots(i)
                g_gamma[slots] -= bs.coupling[i].T @ bs.sub_solve(i, bs.f_sub[i])
        self.g = np.asarray(g_gamma, dtype=float)

        S = self.G - self.B[0] - self.B[1]
        self.lam_star = scipy.linalg.solve(S, self.g, assume_a="pos")

        # lifted-extension Gram matrices for the error functional
        self.slots = [bs.trace.sub_slots(i) for i in range(2)]
        self.gram = []
        M = bs.space.mass_matrix
        for i in range(2):
            E = -bs.sub_factor(i).solve(bs.coupling[i].toarray())
            Mi = M[bs.sub_dofs[i]][:, bs.sub_dofs[i]]
            self.gram.append(E.T @ (Mi @ E))
        self.f_norm = None

    def error(self, lam, config, f_norm):
        if config.error_norm == "trace-l2":
            num = den = 0.0
            for i in range(2):
                d = (lam[i] - self.lam_star)[self.slots[i]]
                ref = self.lam_star[self.slots[i]]
                blocks = self.bs.sub_gamma_mass_blocks(i)
                num += float(np.einsum("er,ers,es->", d.reshape(-1, 2), blocks, d.reshape(-1, 2)))
                den += float(np.einsum("er,ers,es->", ref.reshape(-1, 2), blocks, ref.reshape(-1, 2)))
            return float(np.sqrt(max(num, 0.0)) / max(np.sqrt(max(den, 0.0)), 1e-300))
        total = 0.0
        for i in range(2):
            d = (lam[i] - self.lam_star)[self.slots[i]]
            total += float(d @ (self.gram[i] @ d))
        return float(np.sqrt(max(total, 0.0)) / f_norm)

    def lifted(self, i, lam):
        return self.bs.sub_solve(i, self.bs.f_sub[i] - self.bs.coupling[i] @ lam[self.bs.trace.sub_slots(i)])


def _initial_traces(bs, config):
    rng = np.random.default_rng(config.seed)
    n = bs.n_gamma
    if config.initial == "zero":
        return [np.zeros(n), np.zeros(n)]
    return [rng.uniform(-1.0, 1.0, n), rng.uniform(-1.0, 1.0, n)]


def _source_norm(bs):
    val = bs.source_l2_norm(bs.source) if bs.source is not None else 0.0
    return val if val > 0.0 else 1.0


def _interface_iteration(bs, g_gamma, config):
    p = _resolve_relaxation(bs, config)
    eng = _TwoSubdomainEngine(bs, g_gamma)
    f_norm = _source_norm(bs)

    lhs = [scipy.linalg.cho_factor(eng.G - (1.0 + p) * eng.B[i]) for i in range(2)]
    lam = _initial_traces(bs, config)

    def step():
        rhs0 = -(p * (eng.G @ lam[1]) - (1.0 + p) * (eng.B[1] @ lam[1])) + (1.0 + p) * eng.g
        rhs1 = -(p * (eng.G @ lam[0]) - (1.0 + p) * (eng.B[0] @ lam[0])) + (1.0 + p) * eng.g
        lam[0] = scipy.linalg.cho_solve(lhs[0], rhs0)
        lam[1] = scipy.linalg.cho_solve(lhs[1], rhs1)
        snap = [lam[0].copy(), lam[1].copy()] if config.record_iterates else None
        return eng.error(lam, config, f_norm), snap

    rec0 = [lam[0].copy(), lam[1].copy()] if config.record_iterates else None
    report = _run_history(step, eng.error(lam, config, f_norm), config.tol,
                          config.max_iter, record0=rec0)
    report.lam = [lam[0].copy(), lam[1].copy()]
    report.lam_star = eng.lam_star
    report.u = _assemble_u(bs, eng, lam)
    return report


def _assemble_u(bs, eng, lam):
    u = np.zeros(bs.A_primal.shape[0])
    for i in range(2):
        u[bs.sub_dofs[i]] = eng.lifted(i, lam[i])
    return u


def classical_schwarz(bs, g_gamma=None, config=None):
    """Two-subdomain interface iteration with unrelaxed transmission.

    Both sides solve against the other side's previous Robin data; at
    convergence both trace copies agree with the Schur-complement solution.
    """
    config = config or SchwarzConfig(variant="classical")
    if config.variant != "classical":
        raise ValueError("config.variant must be 'classical'")
    return _interface_iteration(bs, g_gamma, config)


def optimized_schwarz(bs, g_gamma=None, config=None):
    """Two-subdomain interface iteration with relaxed transmission.

    The left operators stay positive definite for any relaxation below 1 and
    the fixed point is the same as for the classical iteration; relaxation 0
    reduces to it iterate-for-iterate.
    """
    config = config or SchwarzConfig(variant="optimized", relaxation=None)
    if config.variant != "optimized":
        raise ValueError("config.variant must be 'optimized'")
    return _interface_iteration(bs, g_gamma, config)


# -- block Jacobi on the primal system ----------------------------------------


def block_jacobi(bs, config=None, u0=None):
    """Subdomain-diagonal splitting of the primal system.

    Solves M u_new = N u_old + f with M the block diagonal of the
    partitioned primal matrix.  ``u0`` may carry a consistent initial state
    (e.g. harmonic extensions of given traces); otherwise a seeded random
    vector is used.
    """
    config = config or SchwarzConfig(variant="classical")
    A = bs.A_primal.tocsr()
    n = A.shape[0]
    ix = bs.sub_dofs
    n_sub = bs.n_subdomains
    diag_factors = []
    offdiag = []
    for i in range(n_sub):
        Aii = A[ix[i]][:, ix[i]].tocsc()
        diag_factors.append(spla.splu(Aii))
        offdiag.append([None if j == i else A[ix[i]][:, ix[j]].tocsr() for j in range(n_sub)])

    u_star = spla.spsolve(A.tocsc(), bs.f_primal)
    M = bs.space.mass_matrix
    denom = _source_norm(bs)

    rng = np.random.default_rng(config.seed)
    u = u0.copy() if u0 is not None else (
        np.zeros(n) if config.initial == "zero" else rng.uniform(-1.0, 1.0, n))

    def error(vec):
        d = vec - u_star
        return float(np.sqrt(max(d @ (M @ d), 0.0)) / denom)

    def step():
        new = np.empty_like(u)
        for i in range(n_sub):
            rhs = bs.f_primal[ix[i]].copy()
            for j in range(n_sub):
                if j != i:
                    rhs -= offdiag[i][j] @ u[ix[j]]
            new[ix[i]] = diag_factors[i].solve(rhs)
        u[:] = new
        snap = u.copy() if config.record_iterates else None
        return error(u), snap

    rec0 = u.copy() if config.record_iterates else None
    report = _run_history(step, error(u), config.tol, config.max_iter, record0=rec0)
    report.u = u.copy()
    report.u_star = u_star
    return report


# -- multi-subdomain iteration -------------------------------------------------


class _MultiEngine:
    """Per-subdomain coupled blocks and neighbor exchange tables."""

    def __init__(self, bs, p):
        if bs.trace.mode != "per-subdomain":
            raise ValueError("the multi-subdomain iteration needs the per-subdomain trace layout")
        self.bs = bs
        self.p = p
        n_sub = bs.n_subdomains
        self.blocks = []
        self.mass_blocks = []
        for i in range(n_sub):
            Mi = bs.sub_gamma_mass_blocks(i)
            self.mass_blocks.append(Mi)
            k = len(bs.trace.sub_edges[i])
            rows = np.repeat(np.arange(2 * k).reshape(k, 2), 2, axis=1).ravel()
            cols = np.tile(np.arange(2 * k).reshape(k, 2), (1, 2)).ravel()
            Mi_csr = sp.coo_matrix((Mi.ravel(), (rows, cols)), shape=(2 * k, 2 * k))
            Ki = sp.bmat([[bs.A_sub[i], bs.coupling[i]],
                          [bs.coupling[i].T, Mi_csr / (1.0 + p)]], format="csc")
            self.blocks.append(spla.splu(Ki))

        # neighbor tables: for own edge slot k of subdomain i, who owns the
        # matching copy and at which slot
        self.neigh = []
        pos_of = [
            {int(e): k for k, e in enumerate(bs.trace.sub_edges[i])} for i in range(n_sub)
        ]
        for i in range(n_sub):
            subs = np.empty(len(bs.trace.sub_edges[i]), dtype=np.int64)
            poss = np.empty_like(subs)
            for k, e in enumerate(bs.trace.sub_edges[i]):
                a, b = bs.partition.neighbors_of_edge[int(e)]
                j = b if a == i else a
                subs[k] = j
                poss[k] = pos_of[j][int(e)]
            self.neigh.append((subs, poss))


def multi_schwarz(bs, config=None):
    """Parallel subdomain iteration for any number of subdomains.

    Every sweep solves, per subdomain, the coupled block of element unknowns
    and the subdomain's own interface copy, with the transmission data built
    from the neighbors' previous sweep.  At convergence the interface copies
    coincide and the element unknowns match the undecomposed solve.
    """
    config = config or SchwarzConfig(variant="multi", relaxation=None)
    p = _resolve_relaxation(bs, config)
    eng = _MultiEngine(bs, p)
    n_sub = bs.n_subdomains

    u_star = spla.spsolve(bs.A_primal.tocsc(), bs.f_primal)
    M = bs.space.mass_matrix
    f_norm = _source_norm(bs)

    rng = np.random.default_rng(config.seed)
    lam = []
    u = []
    for i in range(n_sub):
        k = bs.trace.n_sub_dofs(i)
        li = np.zeros(k) if config.initial == "zero" else rng.uniform(-1.0, 1.0, k)
        lam.append(li)
        u.append(bs.sub_solve(i, bs.f_sub[i] - bs.coupling[i] @ li))

    M_sub = [M[bs.sub_dofs[i]][:, bs.sub_dofs[i]].tocsr() for i in range(n_sub)]

    def error_fast():
        total = 0.0
        for i in range(n_sub):
            d = u[i] - u_star[bs.sub_dofs[i]]
            total += float(d @ (M_sub[i] @ d))
        return float(np.sqrt(max(total, 0.0)) / f_norm)

    def step():
        w = [bs.coupling[i].T @ u[i] for i in range(n_sub)]
        rhs_l = []
        for i in range(n_sub):
            subs, poss = eng.neigh[i]
            r = np.zeros(bs.trace.n_sub_dofs(i))
            for k in range(len(subs)):
                j, q = int(subs[k]), int(poss[k])
                lam_j = lam[j][2 * q:2 * q + 2]
                r[2 * k:2 * k + 2] = (
                    -(p / (1.0 + p)) * (eng.mass_blocks[j][q] @ lam_j)
                    - w[j][2 * q:2 * q + 2]
                )
            rhs_l.append(r)
        for i in range(n_sub):
            sol = eng.blocks[i].solve(np.concatenate([bs.f_sub[i], rhs_l[i]]))
            nu = len(bs.f_sub[i])
            u[i] = sol[:nu]
            lam[i] = sol[nu:]
        snap = [li.copy() for li in lam] if config.record_iterates else None
        return error_fast(), snap

    rec0 = [li.copy() for li in lam] if config.record_iterates else None
    report = _run_history(step, error_fast(), config.tol, config.max_iter, record0=rec0)
    report.lam = [li.copy() for li in lam]
    u_full = np.zeros_like(u_star)
    for i in range(n_sub):
        u_full[bs.sub_dofs[i]] = u[i]
    report.u = u_full
    report.u_star = u_star
    return report


# -- augmented algebraic system ------------------------------------------------


@dataclass
class AugmentedSystem:
    """Sparse splitting K w = L w + g of the multi-subdomain iteration.

    The unknown layout is w = (u_1 .. u_N, lam_1 .. lam_N).  K couples each
    subdomain's element unknowns with its own interface copy only, so K is
    block-solvable subdomain by subdomain; L holds the transmission data and
    has nonzeros only in the interface rows.
    """

    K: sp.csr_matrix
    L: sp.csr_matrix
    g: np.ndarray
    n_u: int
    u_offsets: np.ndarray
    l_offsets: np.ndarray
    relaxation: float
    bs: object

    def split(self, w):
        return w[:self.n_u], w[self.n_u:]

    def lambda_gap(self, w):
        """Largest disagreement between the two copies of any interface edge."""
        _, lam = self.split(w)
        bs = self.bs
        gap = 0.0
        for i in range(bs.n_subdomains):
            for k, e in enumerate(bs.trace.sub_edges[i]):
                a, b = bs.partition.neighbors_of_edge[int(e)]
                j = b if a == i else a
                if j < i:
                    continue
                q = int(np.searchsorted(bs.trace.sub_edges[j], e))
                li = lam[self.l_offsets[i] + 2 * k: self.l_offsets[i] + 2 * k + 2]
                lj = lam[self.l_offsets[j] + 2 * q: self.l_offsets[j] + 2 * q + 2]
                gap = max(gap, float(np.abs(li - lj).max()))
        return gap


def build_augmented(bs, relaxation=None, gamma=0.5):
    """Assemble the augmented splitting of the multi-subdomain iteration."""
    if bs.trace.mode != "per-subdomain":
        raise ValueError("the augmented system needs the per-subdomain trace layout")
    p = (default_relaxation(bs.mesh.h_max, bs.penalty.alpha, gamma)
         if relaxation is None else float(relaxation))
    if not 0.0 <= p < 1.0:
        raise ValueError("relaxation must lie in [0, 1)")
    n_sub = bs.n_subdomains
    nu_list = [len(f) for f in bs.f_sub]
    nl_list = [bs.trace.n_sub_dofs(i) for i in range(n_sub)]
    u_off = np.concatenate([[0], np.cumsum(nu_list)])
    n_u = int(u_off[-1])
    l_off = np.concatenate([[0], np.cumsum(nl_list)])
    n_l = int(l_off[-1])
    n = n_u + n_l

    rows, cols, vals = [], [], []

    def add(mat, r0, c0):
        coo = sp.coo_matrix(mat)
        rows.append(coo.row + r0)
        cols.append(coo.col + c0)
        vals.append(coo.data)

    Lrows, Lcols, Lvals = [], [], []

    def addL(mat, r0, c0):
        coo = sp.coo_matrix(mat)
        Lrows.append(coo.row + r0)
        Lcols.append(coo.col + c0)
        Lvals.append(coo.data)

    pos_of = [{int(e): k for k, e in enumerate(bs.trace.sub_edges[i])} for i in range(n_sub)]
    coupling_T = [bs.coupling[i].T.tocsr() for i in range(n_sub)]

    for i in range(n_sub):
        r_u = int(u_off[i])
        r_l = n_u + int(l_off[i])
        add(bs.A_sub[i], r_u, r_u)
        add(bs.coupling[i], r_u, r_l)
        add(coupling_T[i], r_l, r_u)
        Mi = bs.sub_gamma_mass_blocks(i)
        k = len(bs.trace.sub_edges[i])
        rr = np.repeat(np.arange(2 * k).reshape(k, 2), 2, axis=1).ravel()
        cc = np.tile(np.arange(2 * k).reshape(k, 2), (1, 2)).ravel()
        add(sp.coo_matrix((Mi.ravel() / (1.0 + p), (rr, cc)), shape=(2 * k, 2 * k)), r_l, r_l)

        for kk, e in enumerate(bs.trace.sub_edges[i]):
            a, b = bs.partition.neighbors_of_edge[int(e)]
            j = b if a == i else a
            q = pos_of[j][int(e)]
            Mj = bs.sub_gamma_mass_blocks(j)[q]
            addL(sp.coo_matrix(-(p / (1.0 + p)) * Mj), r_l + 2 * kk, n_u + int(l_off[j]) + 2 * q)
            block = coupling_T[j][2 * q:2 * q + 2, :]
            addL(-block, r_l + 2 * kk, int(u_off[j]))

    def build(r, c, v):
        if not r:
            return sp.csr_matrix((n, n))
        return sp.coo_matrix((np.concatenate(v),
                              (np.concatenate(r), np.concatenate(c))), shape=(n, n)).tocsr()

    K = build(rows, cols, vals)
    L = build(Lrows, Lcols, Lvals)
    g = np.concatenate(bs.f_sub + [np.zeros(n_l)])
    return AugmentedSystem(K=K, L=L, g=g, n_u=n_u,
                           u_offsets=u_off, l_offsets=l_off, relaxation=p, bs=bs)
