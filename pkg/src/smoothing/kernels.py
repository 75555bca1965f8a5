"""Higher-order Gaussian kernels and product-kernel weight matrices.

Orders 4 and 6 use the Hermite construction on the standard normal density:

    K2(u) = phi(u)
    K4(u) = (3 - u^2) / 2 * phi(u)
    K6(u) = (15 - 10 u^2 + u^4) / 8 * phi(u)

Kernels are not truncated; weights can be negative for s > 2.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator

logger = logging.getLogger(__name__)

SUPPORTED_ORDERS = (2, 4, 6)

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class KernelError(Exception):
    """Base exception for kernel smoothing errors."""

    pass


class UnsupportedKernelOrderError(KernelError, ValueError):
    """Raised for kernel orders outside {2, 4, 6}."""

    pass


class EmptyNeighborhoodError(KernelError):
    """Raised when a Nadaraya-Watson denominator vanishes at an evaluation point."""

    def __init__(self, message: str, x: NDArray[np.float64], row: int):
        super().__init__(message)
        self.x = x
        self.row = row


class DensitySupportError(KernelError):
    """Raised when the covariate density is not positive at an evaluation point."""

    pass


def _check_order(s: int) -> int:
    if s not in SUPPORTED_ORDERS:
        raise UnsupportedKernelOrderError(
            f"Kernel order must be one of {SUPPORTED_ORDERS}, got {s}"
        )
    return int(s)


def univariate_kernel(s: int, u: Union[float, ArrayLike]) -> NDArray[np.float64]:
    """Gaussian-based kernel of order s evaluated at u.

    Args:
        s: Kernel order (2, 4 or 6)
        u: Scalar or array argument

    Returns:
        K_s(u), same shape as u

    Raises:
        UnsupportedKernelOrderError: If s is not supported
    """
    s = _check_order(s)
    u = np.asarray(u, dtype=np.float64)
    u2 = u * u
    phi = np.exp(-0.5 * u2) / _SQRT_2PI
    if s == 2:
        return phi
    if s == 4:
        return 0.5 * (3.0 - u2) * phi
    return 0.125 * (15.0 - 10.0 * u2 + u2 * u2) * phi


def bandwidth(c: float, n0: int, phi0: float) -> float:
    """h = c * n0^(-phi0)."""
    if c <= 0:
        raise ValueError(f"Bandwidth constant must be positive, got {c}")
    if n0 < 1:
        raise ValueError(f"Training size must be at least 1, got {n0}")
    return float(c) * float(n0) ** (-float(phi0))


@dataclass(frozen=True)
class KernelSpec:
    """Product kernel K_h(x) = h^-d prod_l K_s(x_l / h)."""

    order: int
    bandwidth: float
    d_x: int

    def __post_init__(self) -> None:
        _check_order(self.order)
        if not self.bandwidth > 0:
            raise ValueError(f"Bandwidth must be positive, got {self.bandwidth}")
        if self.d_x < 1:
            raise ValueError(f"Covariate dimension must be >= 1, got {self.d_x}")

    def weights(
        self, x_eval: NDArray[np.float64], x_train: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """K_h(x_eval[i] - x_train[l]) as an (m, n_train) matrix."""
        x_eval = np.asarray(x_eval, dtype=np.float64).reshape(-1, self.d_x)
        x_train = np.asarray(x_train, dtype=np.float64).reshape(-1, self.d_x)
        h = self.bandwidth
        w = np.ones((x_eval.shape[0], x_train.shape[0]), dtype=np.float64)
        for ell in range(self.d_x):
            w *= univariate_kernel(self.order, (x_eval[:, ell, None] - x_train[None, :, ell]) / h)
        w /= h**self.d_x
        return w


class KernelConfig(BaseModel):
    """Kernel order plus bandwidth rule h = c * n0^(-phi0) shared by nuisance components."""

    model_config = ConfigDict(frozen=True)

    order: int = Field(default=2)
    bandwidth_constant: float = Field(default=1.0, gt=0)
    bandwidth_exponent: float = Field(default=0.2, gt=0, lt=0.5)
    propensity_floor: Optional[float] = Field(default=None, ge=0)

    @field_validator("order")
    @classmethod
    def _check_kernel_order(cls, value: int) -> int:
        return _check_order(value)

    def spec_for(self, n0: int, d_x: int) -> KernelSpec:
        """Kernel spec for a training set of size n0."""
        return KernelSpec(
            order=self.order,
            bandwidth=bandwidth(self.bandwidth_constant, n0, self.bandwidth_exponent),
            d_x=d_x,
        )
