"""Value functions of Bolza problems as solutions of Hamilton-Jacobi equations.

Numerical tools: discrete Legendre-Fenchel transforms, a semi-Lagrangian DP
solver, nonsmooth-analysis primitives, viability checks and a certificate
runner for candidate solutions.
"""

from .grid import PLUS_INFINITY, Grid
from .problem import BolzaProblem, TerminalCost, TrajectoryPath, validate_problem
from .transform import HamiltonianTable, SampledFunction, biconjugate, conjugate, hamiltonian_table
from .value import ValueField, VelocitySearchBox, direct_minimize, reconstruct_trajectory, solve_dp
from .verifier import CandidateFunction, CertificateReport, run_certificate

__version__ = "0.1.0"

__all__ = [
    "PLUS_INFINITY",
    "Grid",
    "BolzaProblem",
    "TerminalCost",
    "TrajectoryPath",
    "validate_problem",
    "HamiltonianTable",
    "SampledFunction",
    "biconjugate",
    "conjugate",
    "hamiltonian_table",
    "ValueField",
    "VelocitySearchBox",
    "direct_minimize",
    "reconstruct_trajectory",
    "solve_dp",
    "CandidateFunction",
    "CertificateReport",
    "run_certificate",
]
