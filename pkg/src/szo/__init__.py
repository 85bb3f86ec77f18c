"""Sparse stochastic zeroth-order optimisation for bandit structured prediction."""

import logging as _logging

from . import _version
from .errors import (
    SZOException,
    ConfigError,
    DataError,
    NumericalError,
    DimensionMismatch,
)
from .sparse_linalg import SparseVector, ActiveSet, dot, axpy, l0_norm, l2_norm_sq
from .perturbation import RngStream, Perturbation, sample_sparse_gaussian
from .estimators import UpdateRule
from .optimizer import PerturbationMode, RunConfig, RunLog, run, step

__version__ = _version.get_versions()["version"]

# init a default logger
_logging.basicConfig(level=_logging.INFO, format="%(levelname)s - %(message)s")
