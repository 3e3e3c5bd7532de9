"""Task-parallel smoothed particle hydrodynamics with cell-pair sorting."""

from .kernel import kernel_eval, update_smoothing_length
from .physics import Particles, RunConfig, equation_of_state

__all__ = ["Particles", "RunConfig", "equation_of_state", "kernel_eval",
           "update_smoothing_length"]
__version__ = "0.1.0"
