"""Evolving surface finite elements for a quasilinear parabolic problem on a moving sphere."""

from .assembly import EsfemSystem, assemble_mass, assemble_stiffness_linear, discrete_norm_A, discrete_norm_M
from .experiments import (
    ConvergenceConfig,
    ErrorTable,
    elliptic_convergence_test,
    eoc,
    run_convergence_study,
    temporal_convergence_study,
)
from .geometry import ProblemDefinition, SurfaceSpec, paper_problem, zero_problem
from .linalg import SparseMatrixCSR, cg_solve, spmv
from .mesh import EvolvingMesh, TriMesh, icosphere, read_mesh, write_mesh
from .timestepping import Trajectory, integrate, parse_integrator

__version__ = "0.1.0"
