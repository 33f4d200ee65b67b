"""Benchmark experiments: eigenvalue tables, iteration scaling, solver races.

Five experiments are available, each writing one CSV and one summary file:

* ``eigc``: extreme eigenvalues of the mass-normalized Robin operator over a
  refinement family; the gap to 1/2 must close at first order in h.
* ``two-subdomain-scaling``: iteration counts of the classical and relaxed
  interface iterations; expected growth 1/h and 1/sqrt(h).
* ``four-subdomain``: the multi-subdomain iteration on a quadrant partition
  with a cross point; consecutive-level count ratios approach sqrt(2).
* ``osm-vs-pcg``: GMRES on the augmented transmission system (block solve of
  its diagonal part as preconditioner) against CG on the primal system with
  the additive Schwarz preconditioner, 16 subdomains.
* ``convergence-order``: manufactured-solution L2 errors; slope 2.

Everything is deterministic for a fixed config and seed; CSV bodies carry no
timestamps so reruns are byte-identical.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import PenaltyField, assemble_hybrid, assemble_primal, default_alpha
from .dg_space import BrokenP1Space, TraceSpace
from .krylov import (LinearOperatorContract, additive_schwarz_preconditioner,
                     gmres, osm_preconditioner, pcg)
from .mesh import generate_structured, partition_from_map, partition_mesh, perturb_quasi_uniform
from .schur import normalized_robin_spectrum, spectra_csv
from .schwarz import SchwarzConfig, build_augmented, classical_schwarz, \
    default_relaxation, multi_schwarz, optimized_schwarz

EXPERIMENTS = ("eigc", "two-subdomain-scaling", "four-subdomain",
               "osm-vs-pcg", "convergence-order")

_DEFAULT_LEVELS = {
    "eigc": (4, 8, 16, 32, 64),
    "two-subdomain-scaling": (8, 16, 32, 64),
    "four-subdomain": (8, 16, 32, 64),
    "osm-vs-pcg": (8, 16, 32, 64),
    "convergence-order": (8, 16, 32, 64),
}

# the optimal-order study needs more penalty headroom than the solver studies
_DEFAULT_ALPHA_C = {"convergence-order": 2.0}


@dataclass
class ExperimentConfig:
    """Parameters of one benchmark run."""

    experiment: str
    domain: str = "unit-square"
    levels: tuple = ()
    alpha_c: float = None
    eta: float = 1.0
    phat_policy: str = "ansatz"    # "ansatz" or "fixed"
    gamma: float = 0.5
    phat_value: float = 0.0
    tol: float = 1e-10
    krylov_tol: float = 1e-6
    seed: int = 0
    out_dir: str = "."
    gate: bool = False
    strategy: str = None
    coarse_m: int = None
    mesh_kind: str = "structured"  # or "perturbed"
    perturb_factor: float = 0.15

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; "
                             f"choose one of {', '.join(EXPERIMENTS)}")
        if not self.levels:
            self.levels = _DEFAULT_LEVELS[self.experiment]
        self.levels = tuple(int(n) for n in self.levels)
        if len(self.levels) < 3:
            raise ValueError("scaling experiments need at least 3 mesh levels")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("mesh levels must be strictly increasing")
        if self.alpha_c is None:
            self.alpha_c = _DEFAULT_ALPHA_C.get(self.experiment, 1.0)
        if self.strategy is None:
            self.strategy = {"four-subdomain": "quadrants",
                             "osm-vs-pcg": "quadrants"}.get(self.experiment, "two-straight")
        if self.coarse_m is None:
            self.coarse_m = {"four-subdomain": 2, "osm-vs-pcg": 4}.get(self.experiment)
        if self.phat_policy not in ("ansatz", "fixed"):
            raise ValueError("phat policy must be 'ansatz' or 'fixed'")
        if self.mesh_kind not in ("structured", "perturbed"):
            raise ValueError("mesh kind must be 'structured' or 'perturbed'")

    @property
    def alpha(self):
        return default_alpha(self.alpha_c)

    def relaxation_for(self, h):
        if self.phat_policy == "fixed":
            return self.phat_value
        return default_relaxation(h, self.alpha, self.gamma)


@dataclass
class ScalingFit:
    """Least-squares slope of log(value) against log(1/h)."""

    h: tuple
    values: tuple
    slope: float
    residual: float


def fit_scaling(h_list, values):
    """Fit ``values ~ (1/h)^slope`` by ordinary least squares in log-log."""
    h = np.asarray(h_list, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(h) < 3:
        raise ValueError("need at least 3 levels for a scaling fit")
    if np.any(h[1:] >= h[:-1]):
        raise ValueError("h values must be strictly decreasing")
    if np.any(v <= 0.0):
        raise ValueError("scaling fit needs positive measurements")
    x = np.log(1.0 / h)
    y = np.log(v)
    coeff, res = np.polyfit(x, y, 1, full=True)[:2]
    residual = float(np.sqrt(res[0])) if len(res) else 0.0
    return ScalingFit(h=tuple(h), values=tuple(v), slope=float(coeff[0]),
                      residual=residual)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    csv_body: str
    summary: str
    gates: dict = field(default_factory=dict)

    @property
    def gates_passed(self):
        return all(self.gates.values()) if self.gates else True

    def write(self):
        out = self.config.out_dir
        os.makedirs(out, exist_ok=True)
        base = os.path.join(out, self.config.experiment)
        with open(base + ".csv", "w") as fh:
            fh.write(self.csv_body)
        with open(base + ".summary.txt", "w") as fh:
            fh.write(self.summary)
        return base + ".csv", base + ".summary.txt"


def _mesh_and_partition(cfg, n):
    mesh = generate_structured(n, cfg.domain)
    part = partition_mesh(mesh, cfg.strategy, m=cfg.coarse_m)
    if cfg.mesh_kind == "perturbed":
        pinned = part.interface_vertices(mesh)
        mesh = perturb_quasi_uniform(mesh, cfg.perturb_factor, cfg.seed + n, pinned)
        part = partition_from_map(mesh, part.subdomain_of)
    return mesh, part


def _source(cfg):
    eta = cfg.eta
    return lambda x, y: (eta + 2.0 * np.pi ** 2) * np.sin(np.pi * x) * np.sin(np.pi * y)


def _provenance(cfg, extra=None):
    lines = ["provenance:"]
    for key, val in asdict(cfg).items():
        lines.append(f"  {key} = {val}")
    if extra:
        for key, val in extra.items():
            lines.append(f"  {key} = {val}")
    return lines


def run_experiment(cfg):
    """Run one experiment fully in memory; no files are touched on failure."""
    runner = {
        "eigc": _run_eigc,
        "two-subdomain-scaling": _run_two_subdomain,
        "four-subdomain": _run_four_subdomain,
        "osm-vs-pcg": _run_osm_vs_pcg,
        "convergence-order": _run_convergence,
    }[cfg.experiment]
    return runner(cfg)


def _run_eigc(cfg):
    pen = PenaltyField(cfg.alpha)
    rows = []
    for n in cfg.levels:
        mesh, part = _mesh_and_partition(cfg, n)
        trace = TraceSpace(part, "single")
        bs = assemble_hybrid(part, trace, cfg.eta, pen, _source(cfg), mesh=mesh)
        sig = normalized_robin_spectrum(bs, 0)
        rows.append((n, mesh.h_max, bs.n_gamma, float(sig.min()), float(sig.max())))

    fit = fit_scaling([r[1] for r in rows], [0.5 - r[4] for r in rows])
    decay_order = -fit.slope  # gap closes like h^decay_order
    smin_tail = [r[3] for r in rows[-3:]]
    spread = max(smin_tail) - min(smin_tail)
    gates = {
        "spectrum_in_unit_interval_half": all(0.0 < r[3] and r[4] < 0.5 for r in rows),
        "sigma_min_stabilized": spread <= 0.01,
        "gap_slope_first_order": 0.75 <= decay_order <= 1.25,
    }
    summary = "\n".join(
        ["eigenvalues of the normalized Robin operator",
         f"  sigma_min tail spread (last 3 levels): {spread:.4g}",
         f"  (1/2 - sigma_max) decay order in h: {decay_order:.4f} "
         f"(residual {fit.residual:.2e})"]
        + [f"  gate {k}: {'pass' if v else 'FAIL'}" for k, v in gates.items()]
        + _provenance(cfg)) + "\n"
    return ExperimentResult(cfg, spectra_csv(rows), summary, gates)


def _run_two_subdomain(cfg):
    pen = PenaltyField(cfg.alpha)
    rows = []
    phats = []
    for n in cfg.levels:
        mesh, part = _mesh_and_partition(cfg, n)
        trace = TraceSpace(part, "single")
        bs = assemble_hybrid(part, trace, cfg.eta, pen, _source(cfg), mesh=mesh)
        ccfg = SchwarzConfig(variant="classical", tol=cfg.tol, seed=cfg.seed)
        rep_c = classical_schwarz(bs, config=ccfg)
        p = cfg.relaxation_for(mesh.h_max)
        phats.append(p)
        ocfg = SchwarzConfig(variant="optimized", relaxation=p, tol=cfg.tol, seed=cfg.seed)
        rep_o = optimized_schwarz(bs, config=ocfg)
        rows.append((n, mesh.h_max, bs.n_gamma,
                     rep_c.iterations, rep_c.rho, rep_o.iterations, rep_o.rho,
                     int(rep_c.converged and rep_o.converged)))

    h = [r[1] for r in rows]
    fit_c = fit_scaling(h, [r[3] for r in rows])
    fit_o = fit_scaling(h, [r[5] for r in rows])
    gates = {
        "all_converged": all(r[7] == 1 for r in rows),
        "classical_slope_first_order": 0.75 <= fit_c.slope <= 1.25,
        "optimized_slope_half_order": 0.35 <= fit_o.slope <= 0.65,
    }
    lines = ["level,h,n_gamma,classical_iters,classical_rho,optimized_iters,optimized_rho,converged"]
    for r in rows:
        lines.append(f"{r[0]},{r[1]:.17g},{r[2]},{r[3]},{r[4]:.17g},{r[5]},{r[6]:.17g},{r[7]}")
    csv = "\n".join(lines) + "\n"
    summary = "\n".join(
        ["two-subdomain iteration scaling",
         f"  classical slope: {fit_c.slope:.4f} (residual {fit_c.residual:.2e})",
         f"  optimized slope: {fit_o.slope:.4f} (residual {fit_o.residual:.2e})"]
        + [f"  gate {k}: {'pass' if v else 'FAIL'}" for k, v in gates.items()]
        + _provenance(cfg, {"relaxation_per_level": [round(p, 6) for p in phats]})) + "\n"
    return ExperimentResult(cfg, csv, summary, gates)


def _run_four_subdomain(cfg):
    pen = PenaltyField(cfg.alpha)
    rows = []
    phats = []
    for n in cfg.levels:
        mesh, part = _mesh_and_partition(cfg, n)
        trace = TraceSpace(part, "per-subdomain")
        bs = assemble_hybrid(part, trace, cfg.eta, pen, _source(cfg), mesh=mesh)
        p = cfg.relaxation_for(mesh.h_max)
        phats.append(p)
        mcfg = SchwarzConfig(variant="multi", relaxation=p, tol=cfg.tol, seed=cfg.seed)
        rep = multi_schwarz(bs, config=mcfg)
        rows.append((n, mesh.h_max, part.n_subdomains, rep.iterations, rep.rho,
                     int(rep.converged)))

    iters = [r[3] for r in rows]
    ratios = [b / a for a, b in zip(iters, iters[1:])]
    fit = fit_scaling([r[1] for r in rows], iters)
    tail = ratios[-3:]
    gates = {
        "all_converged": all(r[5] == 1 for r in rows),
        "ratios_near_sqrt2": all(1.25 <= r <= 1.6 for r in tail),
    }
    lines = ["level,h,n_subdomains,iters,rho,converged"]
    for r in rows:
        lines.append(f"{r[0]},{r[1]:.17g},{r[2]},{r[3]},{r[4]:.17g},{r[5]}")
    summary = "\n".join(
        ["multi-subdomain iteration scaling (cross-point partition)",
         f"  iteration ratios between levels: {[round(r, 3) for r in ratios]}",
         f"  slope: {fit.slope:.4f} (target 0.5)"]
        + [f"  gate {k}: {'pass' if v else 'FAIL'}" for k, v in gates.items()]
        + _provenance(cfg, {"relaxation_per_level": [round(p, 6) for p in phats]})) + "\n"
    return ExperimentResult(cfg, "\n".join(lines) + "\n", summary, gates)


def _run_osm_vs_pcg(cfg):
    pen = PenaltyField(cfg.alpha)
    rows = []
    for n in cfg.levels:
        mesh, part = _mesh_and_partition(cfg, n)
        trace = TraceSpace(part, "per-subdomain")
        bs = assemble_hybrid(part, trace, cfg.eta, pen, _source(cfg), mesh=mesh)

        aug = build_augmented(bs, relaxation=cfg.relaxation_for(mesh.h_max))
        KL = (aug.K - aug.L).tocsr()
        op_g = LinearOperatorContract(dim=KL.shape[0], apply=lambda v, A=KL: A @ v,
                                      apply_preconditioner=osm_preconditioner(aug))
        _, rep_g = gmres(op_g, aug.g, tol=cfg.krylov_tol)

        M = additive_schwarz_preconditioner(bs)
        A = bs.A_primal
        op_p = LinearOperatorContract(dim=A.shape[0], apply=lambda v, A=A: A @ v,
                                      apply_preconditioner=M)
        _, rep_p = pcg(op_p, bs.f_primal, tol=cfg.krylov_tol)
        rows.append((n, mesh.h_max, part.n_subdomains, rep_g.iterations, rep_p.iterations,
                     int(rep_g.converged and rep_p.converged)))

    h = [r[1] for r in rows]
    fit_g = fit_scaling(h, [r[3] for r in rows])
    fit_p = fit_scaling(h, [r[4] for r in rows])
    gates = {
        "all_converged": all(r[5] == 1 for r in rows),
        "gmres_slope_quarter_order": 0.15 <= fit_g.slope <= 0.35,
        "pcg_slope_half_order": 0.35 <= fit_p.slope <= 0.65,
        "gmres_beats_pcg_at_finest": rows[-1][3] < rows[-1][4],
    }
    lines = ["level,h,n_subdomains,gmres_iters,pcg_iters,converged"]
    for r in rows:
        lines.append(f"{r[0]},{r[1]:.17g},{r[2]},{r[3]},{r[4]},{r[5]}")
    summary = "\n".join(
        ["preconditioned Krylov comparison",
         f"  GMRES on augmented system slope: {fit_g.slope:.4f} (target 0.25)",
         f"  additive-Schwarz PCG slope: {fit_p.slope:.4f} (target 0.5)",
         f"  finest level: GMRES {rows[-1][3]} vs PCG {rows[-1][4]}"]
        + [f"  gate {k}: {'pass' if v else 'FAIL'}" for k, v in gates.items()]
        + _provenance(cfg)) + "\n"
    return ExperimentResult(cfg, "\n".join(lines) + "\n", summary, gates)


# degree-5 rule for error integration (assembly itself needs only degree 2)
_ERR_W = np.array([0.225] + [0.13239415278850618] * 3 + [0.12593918054482715] * 3)
_A1, _B1 = 0.059715871789769820, 0.47014206410511508
_A2, _B2 = 0.79742698535308732, 0.10128650732345633
_ERR_PTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])


def manufactured_l2_error(mesh, u, exact):
    """Broken-L2 distance of element coefficients to a callable."""
    p = mesh.vertices[mesh.triangles]
    err2 = 0.0
    for q in range(len(_ERR_W)):
        xq = np.einsum("j,tjc->tc", _ERR_PTS[q], p)
        uh = (u.reshape(-1, 3) * _ERR_PTS[q][None, :]).sum(axis=1)
        err2 += float(np.sum(_ERR_W[q] * mesh.areas * (uh - exact(xq[:, 0], xq[:, 1])) ** 2))
    return math.sqrt(max(err2, 0.0))


def convergence_order(cfg):
    """Manufactured-solution L2 errors and their scaling fit."""
    pen = PenaltyField(cfg.alpha)
    exact = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    rows = []
    for n in cfg.levels:
        mesh = generate_structured(n, cfg.domain)
        if cfg.mesh_kind == "perturbed":
            mesh = perturb_quasi_uniform(mesh, cfg.perturb_factor, cfg.seed + n)
        space = BrokenP1Space(mesh)
        A, fv = assemble_primal(space, cfg.eta, pen, _source(cfg), check_coercivity=False)
        u = spla.spsolve(A.tocsc(), fv)
        rows.append((n, mesh.h_max, manufactured_l2_error(mesh, u, exact)))
    fit = fit_scaling([r[1] for r in rows], [r[2] for r in rows])
    return rows, fit


def _run_convergence(cfg):
    rows, fit = convergence_order(cfg)
    order = -fit.slope  # error decays like h^order
    band = (1.9, 2.1) if cfg.mesh_kind == "structured" else (1.8, 2.2)
    gates = {"l2_slope_second_order": band[0] <= order <= band[1]}
    lines = ["level,h,l2_error"]
    for r in rows:
        lines.append(f"{r[0]},{r[1]:.17g},{r[2]:.17g}")
    summary = "\n".join(
        ["manufactured-solution convergence order",
         f"  L2 error decay order in h: {order:.4f} (residual {fit.residual:.2e})"]
        + [f"  gate {k}: {'pass' if v else 'FAIL'}" for k, v in gates.items()]
        + _provenance(cfg)) + "\n"
    return ExperimentResult(cfg, "\n".join(lines) + "\n", summary, gates)
