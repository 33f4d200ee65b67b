"""Interface operators of the hybrid system: harmonic extensions, Robin
traces, the interface Schur complement and their spectra.

All operations here use the two-subdomain single-copy trace layout.  The
Robin-trace operator of a subdomain maps an interface function to the weak
Robin data (penalty times trace minus normal derivative) of its discrete
harmonic extension; it is applied matrix-free through one factorized
subdomain solve and densified column-by-column only under a size guard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

DENSE_GUARD = 20000


@dataclass
class InterfaceOperator:
    """Dense symmetric operator on single-copy trace DOFs."""

    matrix: np.ndarray
    label: str
    provenance: str = ""

    def __post_init__(self):
        m = self.matrix
        defect = np.abs(m - m.T).max()
        if defect > 1e-12 * max(np.abs(m).max(), 1.0):
            raise ValueError(f"{self.label}: operator is not symmetric (defect {defect:.2e})")

    @property
    def n(self):
        return self.matrix.shape[0]

    def eigenvalues(self):
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T))


@dataclass
class HarmonicExtension:
    """Subdomain solution generated by interface Dirichlet data (zero source)."""

    subdomain: int
    generator: np.ndarray
    coefficients: np.ndarray  # local element DOFs of the subdomain

    def residual(self, bs):
        i = self.subdomain
        phi_own = self.generator[bs.trace.sub_slots(i)]
        r = bs.A_sub[i] @ self.coefficients + bs.coupling[i] @ phi_own
        scale = max(np.abs(self.coefficients).max(initial=0.0), 1.0)
        return float(np.abs(r).max() / scale)


def _require_two_subdomains(bs):
    if bs.trace.mode != "single":
        raise ValueError("interface algebra needs the single-copy trace layout")
    if bs.n_subdomains != 2:
        raise ValueError("interface algebra is defined for two subdomains")


def _check_phi(bs, phi):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (bs.n_gamma,):
        raise ValueError(f"trace vector has shape {phi.shape}, expected ({bs.n_gamma},)")
    return phi


def harmonic_extension(bs, i, phi):
    """Discrete harmonic extension of interface data into subdomain i.

    Solves the subdomain block with ``phi`` as weakly imposed Dirichlet data
    and zero source.
    """
    phi = _check_phi(bs, phi)
    rhs = -(bs.coupling[i] @ phi[bs.trace.sub_slots(i)])
    u = bs.sub_solve(i, rhs)
    return HarmonicExtension(subdomain=i, generator=phi, coefficients=u)


def apply_robin_trace(bs, i, phi):
    """Apply the subdomain Robin-trace operator to interface data.

    Returns the coefficients of the weak Robin functional (penalty times
    trace minus normal derivative) of the harmonic extension, i.e. one
    subdomain solve; no dense operator is formed.
    """
    phi = _check_phi(bs, phi)
    slots = bs.trace.sub_slots(i)
    u = bs.sub_solve(i, bs.coupling[i] @ phi[slots])
    out = np.zeros(bs.n_gamma)
    out[slots] = bs.coupling[i].T @ u
    return out


def densify_robin_trace(bs, i, label=None):
    """Dense Robin-trace operator, built by block column solves."""
    _guard(bs.n_gamma)
    slots = bs.trace.sub_slots(i)
    C = bs.coupling[i]
    X = bs.sub_factor(i).solve(C.toarray())
    B_own = C.T @ X
    B = np.zeros((bs.n_gamma, bs.n_gamma))
    B[np.ix_(slots, slots)] = 0.5 * (B_own + B_own.T)
    return InterfaceOperator(B, label=f"B{i + 1}", provenance="robin-trace densification")


def _guard(n):
    if n > DENSE_GUARD:
        raise ValueError(f"dense interface operation refused at {n} trace DOFs "
                         f"(guard {DENSE_GUARD})")


def assemble_schur(bs):
    """Interface Schur complement and its right-hand side.

    Returns ``(S, g)`` with S the doubled penalty mass minus both Robin-trace
    operators (symmetric positive definite) and g the condensed source.
    Solving S lam = g and extending harmonically reproduces the primal
    solution.
    """
    _require_two_subdomains(bs)
    _guard(bs.n_gamma)
    S = bs.gamma_mass_csr().toarray()
    g = np.zeros(bs.n_gamma)
    for i in range(bs.n_subdomains):
        S -= densify_robin_trace(bs, i).matrix
        slots = bs.trace.sub_slots(i)
        g[slots] -= bs.coupling[i].T @ bs.sub_solve(i, bs.f_sub[i])
    return InterfaceOperator(0.5 * (S + S.T), label="S_Gamma",
                             provenance="schur assembly"), g


class BlockDiag2x2:
    """Symmetric 2x2-block-diagonal operator on edge-paired trace DOFs."""

    def __init__(self, blocks):
        self.blocks = np.asarray(blocks, dtype=float)

    def apply(self, v):
        v2 = np.asarray(v).reshape(len(self.blocks), 2)
        return np.einsum("ers,es->er", self.blocks, v2).ravel()

    def matmat(self, M):
        n = 2 * len(self.blocks)
        out = self.blocks @ M.reshape(len(self.blocks), 2, -1)
        return out.reshape(n, -1)

    def to_dense(self):
        n = 2 * len(self.blocks)
        out = np.zeros((n, n))
        for k, b in enumerate(self.blocks):
            out[2 * k:2 * k + 2, 2 * k:2 * k + 2] = b
        return out


def interface_mass_sqrt(bs):
    """Closed-form square root (and inverse square root) of the interface
    mass block, per 2x2 edge block.

    For an s.p.d. 2x2 block M the root is (M + sqrt(det) I) / sqrt(trace +
    2 sqrt(det)).
    """
    blocks = bs.gamma_mass_blocks
    det = blocks[:, 0, 0] * blocks[:, 1, 1] - blocks[:, 0, 1] * blocks[:, 1, 0]
    tr = blocks[:, 0, 0] + blocks[:, 1, 1]
    if np.any(det <= 0.0) or np.any(tr <= 0.0):
        raise ValueError("interface mass has a non-s.p.d. 2x2 block")
    s = np.sqrt(det)
    t = np.sqrt(tr + 2.0 * s)
    eye = np.eye(2)[None, :, :]
    roots = (blocks + s[:, None, None] * eye) / t[:, None, None]
    inv_roots = np.linalg.inv(roots)
    return BlockDiag2x2(roots), BlockDiag2x2(inv_roots)


def normalized_robin_spectrum(bs, i, return_operator=False):
    """Eigenvalues of the mass-normalized Robin-trace operator of subdomain i.

    This is the symmetric similarity transform of the Robin-trace operator
    by the inverse square root of the interface mass; equivalently the
    generalized spectrum of robin-trace versus interface mass.  All
    eigenvalues lie in (0, 1/2) whenever the interface algebra is healthy.
    """
    _require_two_subdomains(bs)
    _guard(bs.n_gamma)
    _, inv_half = interface_mass_sqrt(bs)
    B = densify_robin_trace(bs, i).matrix
    C = inv_half.matmat(inv_half.matmat(B).T)
    C = 0.5 * (C + C.T)
    vals = np.linalg.eigvalsh(C)
    if return_operator:
        return vals, InterfaceOperator(C, label="C_i", provenance=f"subdomain {i}")
    return vals


def relaxed_iteration_spectrum(bs, i, relaxation):
    """Spectrum of the per-subdomain error-propagation operator of the
    relaxed (optimized) interface iteration.

    Built materially: with C the mass-normalized Robin operator and p the
    relaxation, the operator is I - (1 - p) (I - (1 + p) C)^{-1}.  At p = 0
    its eigenvalues are s / (1 - s) over eigenvalues s of C.
    """
    if not 0.0 <= relaxation < 1.0:
        raise ValueError("relaxation must lie in [0, 1)")
    _, Cop = normalized_robin_spectrum(bs, i, return_operator=True)
    C = Cop.matrix
    n = C.shape[0]
    M = np.eye(n) - (1.0 + relaxation) * C
    D = np.eye(n) - (1.0 - relaxation) * np.linalg.inv(M)
    D = 0.5 * (D + D.T)
    return np.linalg.eigvalsh(D)


def extension_by_zero(bs, i, phi):
    """Extend interface data into subdomain i by zero.

    The result is nonzero only on elements that share an edge with the
    interface; its trace on those edges equals ``phi``.  If an element
    carries two interface edges that disagree at the shared vertex, the
    higher-numbered edge wins (the straight-interface test families never
    hit this case).
    """
    phi = _check_phi(bs, phi)
    mesh = bs.mesh
    tris = bs.sub_tris[i]
    local_of_tri = {int(t): k for k, t in enumerate(tris)}
    out = np.zeros(3 * len(tris))
    sd = bs.partition.subdomain_of
    for e in bs.trace.sub_edges[i]:
        slot = bs.trace.edge_slot(e)
        for side in (0, 1):
            t = mesh.edge_tris[e, side]
            if t < 0 or sd[t] != i:
                continue
            lt = local_of_tri[int(t)]
            for r in (0, 1):
                v = mesh.edges[e, r]
                local = int(np.nonzero(mesh.triangles[t] == v)[0][0])
                out[3 * lt + local] = phi[slot + r]
    return out


def spectra_csv(rows):
    """Render ``(level, h, n_gamma, sigma_min, sigma_max)`` rows as CSV."""
    lines = ["level,h,n_gamma,sigma_min,sigma_max"]
    for level, h, n_gamma, smin, smax in rows:
        lines.append(f"{level},{h:.17g},{n_gamma},{smin:.17g},{smax:.17g}")
    return "\n".join(lines) + "\n"
