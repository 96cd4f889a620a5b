"""Distributed proximal L-BFGS over a simulated, communication-metered cluster."""

from .baselines import CatalystConfig, bda_run, catalyst_run, sparsa_direct_run
from .cluster import ClusterSim, CommLedger, partition_even
from .datasets import LabeledDataset, ParseError, load_libsvm, make_synthetic, parse_libsvm
from .lbfgs import LbfgsState
from .linalg import SparseColumns, solve_small_symmetric, spmv, spmv_transpose
from .problems import L1Logistic, PocketTracker, SquaredHingeDual, make_problem
from .reference import compute_reference
from .solver import SolverConfig, dplbfgs_run, line_search, trust_region_step
from .subsolver import SparsaConfig, blockdiag_cd_solve, sparsa_solve

__all__ = [
    "CatalystConfig", "ClusterSim", "CommLedger", "L1Logistic", "LabeledDataset",
    "LbfgsState", "ParseError", "PocketTracker", "SolverConfig", "SparseColumns",
    "SparsaConfig", "SquaredHingeDual", "bda_run", "blockdiag_cd_solve", "catalyst_run",
    "compute_reference", "dplbfgs_run", "line_search", "load_libsvm", "make_problem",
    "make_synthetic", "parse_libsvm", "partition_even", "solve_small_symmetric",
    "sparsa_direct_run", "sparsa_solve", "spmv", "spmv_transpose", "trust_region_step",
]
