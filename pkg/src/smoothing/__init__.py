"""Higher-order Gaussian kernels, Nadaraya-Watson nuisance fits and their influence terms."""
import logging

from src.smoothing.kernels import (
    KernelConfig,
    KernelError,
    KernelSpec,
    bandwidth,
    univariate_kernel,
)
from src.smoothing.nadaraya_watson import NwFit, NwPrediction, nw_fit

logger = logging.getLogger(__name__)

__all__ = [
    "KernelConfig",
    "KernelError",
    "KernelSpec",
    "NwFit",
    "NwPrediction",
    "bandwidth",
    "nw_fit",
    "univariate_kernel",
]
