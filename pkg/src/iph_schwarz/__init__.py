"""IPH discontinuous Galerkin solvers with Schwarz domain decomposition.

The package assembles a hybridizable interior-penalty discretization of
``eta u - div(grad u) = f`` on 2D triangular meshes, exposes the interface
Schur-complement algebra (Robin traces, harmonic extensions, spectra),
implements classical and optimized Schwarz iterations in two-subdomain and
multi-subdomain form, and provides Krylov solvers preconditioned by the
subdomain splittings.  A benchmark harness reproduces the eigenvalue and
iteration-scaling studies at desk scale.
"""

from .mesh import (TriangleMesh, Partition, generate_structured,
                   perturb_quasi_uniform, partition_mesh,
                   read_mesh_text, write_mesh_text)
from .dg_space import (BrokenP1Space, TraceSpace, QuadratureRule,
                       jump_average_on_edge, dg_norm, interface_l2_norm, l2_norm)
from .assembly import (PenaltyField, BlockSystem, default_alpha,
                       assemble_primal, assemble_hybrid,
                       eliminate_lambda_check, export_matrix_coo,
                       smallest_eigenvalue)

__all__ = [
    "TriangleMesh", "Partition", "generate_structured", "perturb_quasi_uniform",
    "partition_mesh", "read_mesh_text", "write_mesh_text",
    "BrokenP1Space", "TraceSpace", "QuadratureRule", "jump_average_on_edge",
    "dg_norm", "interface_l2_norm", "l2_norm",
    "PenaltyField", "BlockSystem", "default_alpha", "assemble_primal",
    "assemble_hybrid", "eliminate_lambda_check", "export_matrix_coo",
    "smallest_eigenvalue",
]
