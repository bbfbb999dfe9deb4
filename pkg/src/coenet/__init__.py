"""Group-regularized logistic elastic net with empirical-Bayes penalty multipliers."""

from ._kernels import BACKEND
from .model import (
    Coefficients,
    Dataset,
    NumericalError,
    Partition,
    PartitionSet,
    PenaltyConfig,
    ScaleInfo,
    ValidationError,
    expand_multipliers,
    reparametrize,
    standardize,
    unreparametrize,
)

__version__ = "0.1.0"
