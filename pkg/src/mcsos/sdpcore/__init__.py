"""Small block SDP toolkit: problem model, interior-point solver, SDPA I/O."""
from .problem import Block, Residuals, SdpBuilder, SdpProblem, SdpSolution, residuals
from .solver import SolverOptions, solve

__all__ = ["Block", "Residuals", "SdpBuilder", "SdpProblem", "SdpSolution", "SolverOptions",
           "residuals", "solve"]
