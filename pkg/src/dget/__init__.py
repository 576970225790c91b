"""Decentralized gradient estimation and tracking (D-GET) simulator."""

from .diagnostics import potential_descent_check, stationarity, variance_bound_check
from .engine import AlgorithmConfig, RunTrace, run, run_dget, run_dgd, run_gnsd
from .graph import (
    Graph,
    MixingMatrix,
    build_graph,
    laplacian_weights,
    max_degree_weights,
    metropolis_weights,
    spectral_eta,
    validate_mixing,
)
from .problems import FiniteSumProblem, OnlineProblem, make_problem
from .theory import potential_constants, theorem1_stepsize

__version__ = "0.1.0"
