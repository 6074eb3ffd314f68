"""Heat semigroup solvers: model container, Monte Carlo, finite differences, kernel transforms."""

from .model import HeatModel, KernelEstimate, model_in_chart, rescale_model
from .montecarlo import mc_kernel, simulate_paths
from .finite_difference import FDRun, GridSpec, clear_run_cache, fd_kernel, fd_run_cached
from .transforms import dilation_transform, kac_check, kernel_change_measure, kernel_diffeo_transform

__all__ = [
    "HeatModel", "KernelEstimate", "model_in_chart", "rescale_model",
    "mc_kernel", "simulate_paths",
    "FDRun", "GridSpec", "clear_run_cache", "fd_kernel", "fd_run_cached",
    "dilation_transform", "kac_check", "kernel_change_measure", "kernel_diffeo_transform",
]
