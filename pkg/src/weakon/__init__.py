"""Eigenvalue-sum contraction analysis for nonlinear ODEs.

The central quantity is ``S_k``, the sum of the ``k`` largest eigenvalues of
the symmetric part of a (generalized) Jacobian.  ``S_1 < 0`` is ordinary
contraction; ``S_2 < 0`` (weak contraction) makes every bounded trajectory
of an autonomous system converge to an equilibrium.
"""

__version__ = "0.1.0"

from .certify import (ContractionCertificate, certify_transverse, certify_weak_contraction,
                      dimension_bound, epsilon_search)
from .combine import feedback, hierarchical, parallel
from .dsl import parse
from .flow import SolverConfig, integrate, lyapunov_spectrum, variational_flow
from .metrics import (ConstantMetric, IdentityMetric, StorageFunction, augment_storage,
                      generalized_jacobian)
from .sampling import Sampler
from .spectra import ky_fan_max, spectrum, sum_top_k
from .systems import SystemModel, builtin, from_dsl, linear, pendulum, vanderpol

__all__ = [
    "__version__", "ContractionCertificate", "certify_transverse", "certify_weak_contraction",
    "dimension_bound", "epsilon_search", "feedback", "hierarchical", "parallel", "parse",
    "SolverConfig", "integrate", "lyapunov_spectrum", "variational_flow", "ConstantMetric",
    "IdentityMetric", "StorageFunction", "augment_storage", "generalized_jacobian", "Sampler",
    "ky_fan_max", "spectrum", "sum_top_k", "SystemModel", "builtin", "from_dsl", "linear",
    "pendulum", "vanderpol",
]
