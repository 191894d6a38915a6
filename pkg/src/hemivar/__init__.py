"""Bilateral Tresca-friction contact for hemitropic micropolar solids,
reduced to boundary variational inequalities through discrete
Steklov-Poincare operators."""

from .fem import LoadData, StiffnessMatrix, assemble_stiffness
from .friction_vi import FrictionSpec, VIOptions, VIProblem, VISolution, kkt_verify, solve_semismooth, solve_uzawa
from .material import MaterialParams, c0_margin, check_admissible
from .mesh import Mesh, TraceMap, build_trace_map, cube_mesh, load_mesh, refine_uniform, shell_mesh
from .scenarios import ScenarioData, ScenarioResult, lipschitz_experiment, solve_scenario
from .solvability import MarginReport, check_necessary, quotient_compare
from .steklov import DtnOperator, build_dtn, rigid_basis

__version__ = "0.1.0"
