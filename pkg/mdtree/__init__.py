from .config import SolverConfig
from .optimizer import MultiplierSet, SolveReport, kkt_residual, recover_multipliers, solve
from .oracle import GridSpec, known_closedforms, scalar_grid_max
from .processing import run_pipeline
from .rate_objective import ThetaAssignment, objective_sigma, objective_theta
from .scheme_builder import build_scheme
from .tree_model import GeneralTreeSpec, ProblemInstance, pad_to_perfect_binary, validate

__all__ = [
    "GeneralTreeSpec",
    "GridSpec",
    "MultiplierSet",
    "ProblemInstance",
    "SolveReport",
    "SolverConfig",
    "ThetaAssignment",
    "build_scheme",
    "kkt_residual",
    "known_closedforms",
    "objective_sigma",
    "objective_theta",
    "pad_to_perfect_binary",
    "recover_multipliers",
    "run_pipeline",
    "scalar_grid_max",
    "solve",
    "validate",
]
