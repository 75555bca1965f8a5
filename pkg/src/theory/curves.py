"""Closed-form higher-order bias, variance and MSE curves of DML2 as functions of K.

All constants (F_delta, F_b, G_delta, G_b, sigma2, Lambda) are inputs; nothing here estimates
them from data.
"""
import logging
import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.theory.rates import TheoryDomainError, nw_rates, zeta

logger = logging.getLogger(__name__)

CurveName = Literal["ho-bias", "ho-var", "so-mse"]

_RATE_TOL = 1e-12


class TheoryParams(BaseModel):
    """Constants of the second-order expansion.

    Either give phi1/phi2 directly or give (phi0, s, d_x) and let them be derived.
    """

    model_config = ConfigDict(frozen=True)

    F_delta: float = 0.0
    F_b: float = 0.0
    G_delta: float = 0.0
    G_b: float = 0.0
    sigma2: float = Field(default=1.0, gt=0.0)
    Lambda: float = 0.0
    phi1: Optional[float] = Field(default=None, gt=0.25, lt=1.0)
    phi2: Optional[float] = Field(default=None, gt=0.25, lt=1.0)
    phi0: Optional[float] = Field(default=None, gt=0.0, lt=0.5)
    s: Optional[int] = Field(default=None, ge=1)
    d_x: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="before")
    @classmethod
    def derive_rates(cls, data: object) -> object:
        if not isinstance(data, dict):
            return data
        if data.get("phi1") is None and data.get("phi2") is None:
            phi0, s, d_x = data.get("phi0"), data.get("s"), data.get("d_x")
            if phi0 is not None and s is not None and d_x is not None:
                phi1, phi2, _ = nw_rates(int(d_x), int(s), float(phi0))
                data = {**data, "phi1": phi1, "phi2": phi2}
        return data

    @model_validator(mode="after")
    def check_rate_order(self) -> "TheoryParams":
        if self.phi1 is not None and self.phi2 is not None and self.phi1 > self.phi2 + _RATE_TOL:
            raise ValueError(f"phi1={self.phi1} must not exceed phi2={self.phi2}")
        return self

    @property
    def upsilon(self) -> float:
        """G_b / sigma2."""
        return self.G_b / self.sigma2

    @property
    def zeta(self) -> float:
        phi1, phi2 = self.rates()
        return zeta(phi1, phi2)

    def rates(self) -> tuple[float, float]:
        """(phi1, phi2); raises TheoryDomainError when they are not set."""
        if self.phi1 is None or self.phi2 is None:
            raise TheoryDomainError("phi1 and phi2 (or phi0, s and d_x) are required")
        return self.phi1, self.phi2


def _check_folds(K: int, n: int) -> None:
    if K < 2 or n < K:
        raise TheoryDomainError(f"Need 2 <= K <= n, got K={K}, n={n}")


def _checked_rates(params: TheoryParams, K: int, n: int) -> tuple[float, float]:
    _check_folds(K, n)
    phi1, phi2 = params.rates()
    if not 0.25 < phi1 < 0.5:
        raise TheoryDomainError(f"phi1 must lie in (1/4, 1/2), got {phi1}")
    if phi2 >= 1.0:
        raise TheoryDomainError(f"phi2 must be below 1, got {phi2}")
    return phi1, phi2


def _same(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=0.0, abs_tol=_RATE_TOL)


def _fold_inflation(K: int) -> float:
    """1 + 1/(K - 1) = K/(K - 1), the ratio n/n0."""
    return 1.0 + 1.0 / (K - 1)


def _variance_regime(phi1: float, phi2: float) -> Literal["bias", "both", "delta"]:
    """Which influence product drives the second-order variance."""
    edge = 3.0 * phi1 - 0.5
    if _same(edge, phi2):
        return "both"
    return "bias" if edge > phi2 else "delta"


def ho_bias_leading(params: TheoryParams, K: int, n: int) -> float:
    """sqrt(n)-scaled higher-order bias F_K n^(1/2 - 2 phi1) of DML2.

    Raises:
        TheoryDomainError: If K, n or the rates are out of range
    """
    phi1, phi2 = _checked_rates(params, K, n)
    leading = params.F_delta + params.F_b if _same(phi1, phi2) else params.F_delta
    F_K = leading * _fold_inflation(K) ** (2.0 * phi1)
    return F_K * float(n) ** (0.5 - 2.0 * phi1)


def omega(params: TheoryParams, K: int) -> float:
    """Second-order variance constant Omega_K."""
    phi1, phi2 = params.rates()
    _check_folds(K, K)
    z = zeta(phi1, phi2)
    growth = _fold_inflation(K) ** z
    regime = _variance_regime(phi1, phi2)
    if regime == "bias":
        return params.G_b * growth
    if regime == "both":
        return (params.G_delta * (K * K - 3 * K + 3) / (K - 1) ** 2 + params.G_b) * growth
    return params.G_delta * (K * K - K + 3) / (K - 1) ** 2 * growth


def omega_tilde(params: TheoryParams, K: int) -> float:
    """Second-order MSE constant, Omega_K plus the squared-bias contribution."""
    phi1, phi2 = params.rates()
    _check_folds(K, K)
    z = zeta(phi1, phi2)
    growth = _fold_inflation(K) ** z
    regime = _variance_regime(phi1, phi2)
    if regime == "bias":
        return params.G_b * growth
    squared_bias = params.F_delta**2 * K / (K - 1)
    delta_part = params.G_delta * (K * K - 3 * K + 3) / (K - 1) ** 2
    if regime == "both":
        return (delta_part + params.G_b + squared_bias) * growth
    return (delta_part + squared_bias) * growth


def ho_variance_second_term(params: TheoryParams, K: int, n: int) -> float:
    """Omega_K / n^zeta, the second term of the scaled variance.

    Raises:
        TheoryDomainError: If K, n or the rates are out of range
    """
    _checked_rates(params, K, n)
    return omega(params, K) / float(n) ** params.zeta


def so_mse(params: TheoryParams, K: int, n: int) -> float:
    """Second-order MSE sigma2/n + Omega~_K / n^(zeta + 1).

    Raises:
        TheoryDomainError: If K, n or the rates are out of range
    """
    _checked_rates(params, K, n)
    return params.sigma2 / n + omega_tilde(params, K) / float(n) ** (params.zeta + 1.0)


def _check_loss_args(K: int, n: int, phi: float) -> None:
    _check_folds(K, n)
    if not 0.25 <= phi <= 0.5:
        raise TheoryDomainError(f"phi must lie in [1/4, 1/2], got {phi}")


def relative_loss_bias(K: int, n: int, phi: float) -> float:
    """Relative excess of the higher-order bias at K over its value at K = n."""
    _check_loss_args(K, n, phi)
    return (_fold_inflation(K) / _fold_inflation(n)) ** (2.0 * phi) - 1.0


def relative_loss_mse_bound(K: int, n: int, phi: float) -> float:
    """Upper bound, over every upsilon > 0, of the relative SO-MSE excess at K."""
    _check_loss_args(K, n, phi)
    exponent = 2.0 * phi - 0.5
    return _fold_inflation(K) ** exponent / _fold_inflation(n) ** exponent - 1.0


def relative_loss_mse(K: int, n: int, phi: float, upsilon: float) -> float:
    """Relative SO-MSE excess at K for a known upsilon = G_b / sigma2, with phi1 = phi2 = phi."""
    _check_loss_args(K, n, phi)
    exponent = 2.0 * phi - 0.5
    scale = float(n) ** -exponent
    at_k = 1.0 + upsilon * _fold_inflation(K) ** exponent * scale
    at_n = 1.0 + upsilon * _fold_inflation(n) ** exponent * scale
    return at_k / at_n - 1.0


def oracle_ho_mse(
    sigma2: float,
    Lambda: float,
    Lambda1: float,
    K: int,
    n: int,
    method: Literal["ORACLE1", "ORACLE2"],
) -> float:
    """Higher-order MSE of the oracle estimators to order 1/n^2.

    ORACLE1 picks up K^2 Lambda^2 + K Lambda1; ORACLE2 is the one-fold case Lambda^2 + Lambda1.
    """
    _check_folds(K, n)
    if sigma2 <= 0.0:
        raise TheoryDomainError(f"sigma2 must be positive, got {sigma2}")
    folds = K if method == "ORACLE1" else 1
    return sigma2 / n + (folds**2 * Lambda**2 + folds * Lambda1) / float(n) ** 2


def dml1_oracle_bias(Lambda: float, K: int, n: int) -> float:
    """Leading bias Lambda K / n of oracle DML1."""
    _check_folds(K, n)
    return Lambda * K / n


def curve_value(what: CurveName, params: TheoryParams, K: int, n: int) -> float:
    """Plotted value of one curve: ho-bias and ho-var as defined above, so-mse scaled by n."""
    if what == "ho-bias":
        return ho_bias_leading(params, K, n)
    if what == "ho-var":
        return ho_variance_second_term(params, K, n)
    if what == "so-mse":
        return n * so_mse(params, K, n)
    raise TheoryDomainError(f"Unknown curve {what!r}")


def curve_table(
    what: CurveName, params: TheoryParams, n: int, k_grid: list[int]
) -> list[tuple[int, float]]:
    """(K, value) rows for every K in the grid plus the K = n row, sorted by K."""
    folds = sorted({int(K) for K in k_grid} | {n})
    rows = [(K, curve_value(what, params, K, n)) for K in folds]
    logger.debug(f"{what}: {len(rows)} rows for n={n}")
    return rows
