"""Preconditioned primal-dual (PDHG) solvers for time-implicit reaction-diffusion schemes."""

__version__ = "0.1.0"
