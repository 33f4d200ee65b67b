"""Conjugate gradients and GMRES with pluggable preconditioners.

Operators are passed through a small contract object carrying the dimension,
the operator action, and an optional preconditioner action.  The two
preconditioners provided here are the subdomain-block-diagonal splitting of
the primal matrix (additive Schwarz, s.p.d., for CG) and the block solve of
the augmented splitting (for GMRES on the full transmission system).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .schwarz import SolveReport, fitted_contraction

REORTH_THRESHOLD = 1e-8


@dataclass
class LinearOperatorContract:
    """Dimension, operator action, optional preconditioner action."""

    dim: int
    apply: callable
    apply_preconditioner: callable = None

    def precondition(self, v):
        return v if self.apply_preconditioner is None else self.apply_preconditioner(v)


def pcg(op, b, tol=1e-6, max_iter=10000):
    """Preconditioned conjugate gradients.

    Requires the operator and its preconditioner to be symmetric positive
    definite; nonpositive curvature or a nonpositive preconditioned inner
    product raises immediately, naming the violated property.  Convergence
    is declared on the preconditioned residual, relative to the
    preconditioned right-hand side.
    """
    b = np.asarray(b, dtype=float)
    t0 = time.perf_counter()
    x = np.zeros_like(b)
    r = b.copy()
    z = op.precondition(r)
    ref = float(np.linalg.norm(z))
    if ref == 0.0:
        return x, SolveReport(0, np.array([0.0]), True, float("nan"),
                              time.perf_counter() - t0)
    errors = [1.0]
    rz = float(r @ z)
    if rz <= 0.0:
        raise RuntimeError("preconditioner is not s.p.d.: <r, M^-1 r> <= 0")
    p = z.copy()
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        Ap = op.apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise RuntimeError("operator is not s.p.d.: nonpositive curvature p^T A p <= 0")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = op.precondition(r)
        errors.append(float(np.linalg.norm(z)) / ref)
        if errors[-1] <= tol:
            converged = True
            break
        rz_new = float(r @ z)
        if rz_new <= 0.0:
            raise RuntimeError("preconditioner is not s.p.d.: <r, M^-1 r> <= 0")
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(it, np.array(errors), converged,
                          fitted_contraction(errors), time.perf_counter() - t0)


def gmres(op, b, tol=1e-6, restart=None, max_iter=10000):
    """Left-preconditioned GMRES with modified Gram-Schmidt.

    One reorthogonalization pass runs whenever the orthogonality loss of a
    new basis vector exceeds 1e-8.  The residual is measured in the
    preconditioned norm.  Without an explicit ``restart`` the basis grows
    until convergence (capped by ``max_iter``).  A restart cycle that ends
    without residual reduction flags stagnation and returns unconverged.
    """
    b = np.asarray(b, dtype=float)
    t0 = time.perf_counter()
    n = op.dim
    x = np.zeros_like(b)
    cycle = restart or max_iter

    r = op.precondition(b - op.apply(x))
    ref = float(np.linalg.norm(r))
    if ref == 0.0:
        return x, SolveReport(0, np.array([0.0]), True, float("nan"),
                              time.perf_counter() - t0)
    errors = [1.0]
    it = 0
    converged = False
    stagnated = False
    last_cycle_end = 1.0

    while it < max_iter and not converged and not stagnated:
        beta = float(np.linalg.norm(r))
        V = np.zeros((cycle + 1, n))
        V[0] = r / beta
        H = np.zeros((cycle + 1, cycle))
        cs = np.zeros(cycle)
        sn = np.zeros(cycle)
        g = np.zeros(cycle + 1)
        g[0] = beta
        j = -1
        for j in range(cycle):
            if it >= max_iter:
                j -= 1
                break
            it += 1
            w = op.precondition(op.apply(V[j]))
            norm_before = float(np.linalg.norm(w))
            h = V[:j + 1] @ w
            w -= h @ V[:j + 1]
            # one reorthogonalization pass against drift
            h2 = V[:j + 1] @ w
            if float(np.linalg.norm(h2)) > REORTH_THRESHOLD * max(norm_before, 1e-300):
                w -= h2 @ V[:j + 1]
                h += h2
            H[:j + 1, j] = h
            H[j + 1, j] = float(np.linalg.norm(w))
            lucky = H[j + 1, j] < 1e-14 * max(norm_before, 1e-300)
            if not lucky:
                V[j + 1] = w / H[j + 1, j]
            # apply stored Givens rotations, then create the new one
            for k in range(j):
                t = cs[k] * H[k, j] + sn[k] * H[k + 1, j]
                H[k + 1, j] = -sn[k] * H[k, j] + cs[k] * H[k + 1, j]
                H[k, j] = t
            denom = float(np.hypot(H[j, j], H[j + 1, j]))
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            errors.append(abs(g[j + 1]) / ref)
            if errors[-1] <= tol or lucky:
                converged = errors[-1] <= tol or lucky
                break
        if j >= 0:
            y = np.zeros(j + 1)
            for k in range(j, -1, -1):
                y[k] = (g[k] - H[k, k + 1:j + 1] @ y[k + 1:j + 1]) / H[k, k]
            x = x + y @ V[:j + 1]
        r = op.precondition(b - op.apply(x))
        res = float(np.linalg.norm(r)) / ref
        if res <= tol:
            converged = True
        elif restart is not None and res >= last_cycle_end * (1.0 - 1e-12):
            stagnated = True
        last_cycle_end = res

    return x, SolveReport(it, np.array(errors), converged,
                          fitted_contraction(errors), time.perf_counter() - t0)


def additive_schwarz_preconditioner(bs):
    """Block-diagonal subdomain solve of the primal matrix.

    Applies the inverse of diag(A_1, ..., A_N) through independent
    factorized subdomain back-solves; symmetric positive definite since the
    blocks are principal submatrices of an s.p.d. matrix.
    """
    A = bs.A_primal.tocsr()
    factors = []
    for i in range(bs.n_subdomains):
        ix = bs.sub_dofs[i]
        block = A[ix][:, ix].tocsc()
        try:
            factors.append(spla.splu(block))
        except RuntimeError as exc:
            raise RuntimeError(f"subdomain {i} primal block is singular") from exc

    def apply(v):
        out = np.zeros_like(v)
        for i in range(bs.n_subdomains):
            ix = bs.sub_dofs[i]
            out[ix] = factors[i].solve(v[ix])
        return out

    return apply


def osm_preconditioner(aug):
    """Per-subdomain solve of the block-diagonal part K of the augmented
    splitting; preconditions GMRES on (K - L) w = g."""
    bs = aug.bs
    n_sub = bs.n_subdomains
    factors = []
    slices = []
    for i in range(n_sub):
        u_sl = np.arange(aug.u_offsets[i], aug.u_offsets[i + 1])
        l_sl = aug.n_u + np.arange(aug.l_offsets[i], aug.l_offsets[i + 1])
        ix = np.concatenate([u_sl, l_sl])
        slices.append(ix)
        block = aug.K[ix][:, ix].tocsc()
        try:
            factors.append(spla.splu(block))
        except RuntimeError as exc:
            raise RuntimeError(f"subdomain {i} augmented block is singular") from exc

    def apply(v):
        out = np.zeros_like(v)
        for i in range(n_sub):
            ix = slices[i]
            out[ix] = factors[i].solve(v[ix])
        return out

    return apply


def operator_from_matrix(A, preconditioner=None):
    """Wrap a sparse/dense matrix as a LinearOperatorContract."""
    A = A if not hasattr(A, "tocsr") else A.tocsr()
    return LinearOperatorContract(dim=A.shape[0], apply=lambda v: A @ v,
                                  apply_preconditioner=preconditioner)
