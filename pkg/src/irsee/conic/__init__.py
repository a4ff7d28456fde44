"""Self-contained cone programming: flat-layout programs, projections, and
the operator-splitting solver."""

from .cones import (
    EXP,
    HPSD,
    NONNEG,
    SOC,
    ZERO,
    Cone,
    ConeWorkspace,
    hermitian_eig,
    project_cone,
    project_dual_cone,
    smat,
    svec,
    top_eigvec,
)
from .io import dump_program, load_program
from .program import ConicProgram, LinExpr, ProgramBuilder
from .solver import (
    INFEASIBLE,
    ITERATION_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    ConicSolution,
    solve,
)

__all__ = [
    "Cone", "ConeWorkspace", "ZERO", "NONNEG", "SOC", "HPSD", "EXP",
    "svec", "smat", "project_cone", "project_dual_cone", "hermitian_eig",
    "top_eigvec", "ConicProgram", "ProgramBuilder", "LinExpr",
    "ConicSolution", "solve", "OPTIMAL", "INFEASIBLE", "UNBOUNDED",
    "ITERATION_LIMIT", "dump_program", "load_program",
]
