"""Sampling-based (quantum-inspired) principal component regression.

Indices are 0-based throughout the Python API.
"""

from .access import MatVecSQ, ProductAccess, QueryVector, estimate_inner_product, matvec_sq, sq_of_product
from .errors import *  # noqa: F401,F403
from .lowrank import PCASpec, ThresholdSpec, VDescription, approx_svd, materialize_v, top_k_components
from .matmul import SuccinctFactorization, approx_multiply, times
from .oracle import dense_pinv, dense_product, dense_svd, exact_pcr
from .pinv import PinvSpec, approx_pinv, pinv_perturbation_bound
from .pipeline import FitConfig, PCREstimator, PCRPlan, derive_parameters, error_budget_report, fit, fit_arrays
from .sqstore import Counters, MatrixStore, WeightTree, build_matrix, build_vector

__version__ = "0.1.0"
