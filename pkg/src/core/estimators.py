"""DML1, DML2, their oracle versions, the variance estimator and confidence intervals.

    DML1:  theta_k = sum_{I_k} psi_b / sum_{I_k} psi_a,  theta = K^-1 sum_k theta_k
    DML2:  theta   = sum psi_b / sum psi_a
    sigma2 = mean(m^2) / mean(psi_a)^2,   m = psi_b - psi_a * theta
    CI     = theta -/+ z_{1 - alpha/2} sqrt(sigma2 / n)

Oracle versions plug the truth_eta columns in place of the cross-fitted values.
"""
import logging
from typing import Any, Literal, Optional, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field
from scipy.stats import norm

from src.core.crossfit import CrossFitEvaluations, FoldPartition
from src.core.dataset import Dataset, SchemaError
from src.core.moments import MomentModel

logger = logging.getLogger(__name__)

Method = Literal["DML1", "DML2", "ORACLE1", "ORACLE2"]
EtaInput = Union[CrossFitEvaluations, NDArray[np.float64]]

DEGENERACY_TOLERANCE = 1e-10


class EstimationError(Exception):
    """Base exception for estimation errors."""

    pass


class FoldDegeneracyError(EstimationError):
    """Raised when a fold's psi_a sum vanishes (non-identified fold)."""

    def __init__(self, message: str, fold: int):
        super().__init__(message)
        self.fold = fold


class GlobalDegeneracyError(EstimationError):
    """Raised when the full-sample psi_a sum vanishes."""

    pass


class MissingTruthError(EstimationError):
    """Raised when oracle estimates are requested without truth_eta columns."""

    pass


class DmlEstimate(BaseModel):
    """One point estimate with its variance and confidence interval."""

    method: Method
    theta_hat: float
    sigma2_hat: float = Field(ge=0.0)
    K: int
    n: int
    alpha: float
    ci: tuple[float, float]
    per_fold_theta: Optional[list[float]] = None
    sigma2_source: Literal["estimated", "design"] = "estimated"
    flags: dict[str, int] = Field(default_factory=dict)

    @property
    def se(self) -> float:
        return float(np.sqrt(self.sigma2_hat / self.n))

    def covers(self, theta0: float) -> bool:
        return self.ci[0] <= theta0 <= self.ci[1]

    def to_record(self) -> dict[str, Any]:
        """Flat JSON record."""
        record: dict[str, Any] = {
            "method": self.method,
            "theta_hat": self.theta_hat,
            "se": self.se,
            "ci_lower": self.ci[0],
            "ci_upper": self.ci[1],
            "K": self.K,
            "n": self.n,
            "alpha": self.alpha,
            "sigma2_hat": self.sigma2_hat,
            "sigma2_source": self.sigma2_source,
            "flags": dict(self.flags),
        }
        if self.per_fold_theta is not None:
            record["per_fold_theta"] = list(self.per_fold_theta)
        return record


def _eta_matrix(eta: EtaInput) -> NDArray[np.float64]:
    if isinstance(eta, CrossFitEvaluations):
        return eta.eta_hat
    return np.asarray(eta, dtype=np.float64)


def _flags(eta: EtaInput) -> dict[str, int]:
    if isinstance(eta, CrossFitEvaluations):
        return {"floor_triggers": eta.flag_count, "floored_rows": eta.flagged_rows}
    return {}


def evaluate_psi(
    dataset: Dataset, model: MomentModel, eta: EtaInput
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """(psi_a, psi_b) for every row."""
    matrix = _eta_matrix(eta)
    if matrix.shape[0] != dataset.n_rows:
        raise ValueError(f"eta has {matrix.shape[0]} rows, dataset has {dataset.n_rows}")
    return model.psi(dataset.role_block(), matrix)


def confidence_interval(
    theta_hat: float, sigma2_hat: float, n: int, alpha: float
) -> tuple[float, float]:
    """Normal interval theta -/+ z_{1-alpha/2} sqrt(sigma2 / n)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    half_width = float(norm.ppf(1.0 - alpha / 2.0)) * np.sqrt(sigma2_hat / n)
    return float(theta_hat - half_width), float(theta_hat + half_width)


def _sigma2(psi_a: NDArray[np.float64], psi_b: NDArray[np.float64], theta: float) -> float:
    n = psi_a.shape[0]
    total_a = float(np.sum(psi_a))
    if abs(total_a) < DEGENERACY_TOLERANCE * n:
        raise GlobalDegeneracyError(
            f"sum of psi_a is {total_a:.3g} over {n} rows; the moment is not identified"
        )
    m = psi_b - psi_a * theta
    return float(np.mean(m**2) / (total_a / n) ** 2)


def sigma2_hat(dataset: Dataset, model: MomentModel, eta: EtaInput, theta_hat: float) -> float:
    """mean(m^2) / mean(psi_a)^2 at theta_hat.

    Raises:
        GlobalDegeneracyError: If mean(psi_a) vanishes
    """
    psi_a, psi_b = evaluate_psi(dataset, model, eta)
    return _sigma2(psi_a, psi_b, theta_hat)


def _ratio_estimate(psi_a: NDArray[np.float64], psi_b: NDArray[np.float64]) -> float:
    n = psi_a.shape[0]
    total_a = float(np.sum(psi_a))
    if abs(total_a) < DEGENERACY_TOLERANCE * n:
        raise GlobalDegeneracyError(
            f"sum of psi_a is {total_a:.3g} over {n} rows; the moment is not identified"
        )
    return float(np.sum(psi_b)) / total_a


def _fold_thetas(
    psi_a: NDArray[np.float64], psi_b: NDArray[np.float64], partition: FoldPartition
) -> tuple[list[float], list[int]]:
    thetas, sizes = [], []
    for k in range(1, partition.K + 1):
        idx = partition.fold_indices(k)
        total_a = float(np.sum(psi_a[idx]))
        if abs(total_a) < DEGENERACY_TOLERANCE * idx.size:
            raise FoldDegeneracyError(
                f"fold {k}: sum of psi_a is {total_a:.3g} over {idx.size} rows; "
                "this signals a non-identified fold",
                fold=k,
            )
        thetas.append(float(np.sum(psi_b[idx])) / total_a)
        sizes.append(int(idx.size))
    return thetas, sizes


def _fold_average(
    psi_a: NDArray[np.float64],
    psi_b: NDArray[np.float64],
    partition: FoldPartition,
    weighted: bool,
) -> tuple[float, list[float]]:
    thetas, sizes = _fold_thetas(psi_a, psi_b, partition)
    if weighted:
        theta = float(np.dot(thetas, sizes)) / float(sum(sizes))
    else:
        theta = float(np.mean(thetas))
    return theta, thetas


def dml1(
    dataset: Dataset,
    model: MomentModel,
    eta: EtaInput,
    partition: FoldPartition,
    alpha: float = 0.05,
    weighted: bool = False,
) -> DmlEstimate:
    """Solve the moment per fold, then average the fold solutions.

    Args:
        dataset: Observations
        model: Moment model
        eta: Cross-fitted nuisance values aligned with the dataset rows
        partition: The partition used for cross-fitting
        alpha: CI miscoverage level
        weighted: Weight fold solutions by fold size instead of 1/K

    Raises:
        FoldDegeneracyError: If some fold's psi_a sum vanishes
    """
    psi_a, psi_b = evaluate_psi(dataset, model, eta)
    theta, thetas = _fold_average(psi_a, psi_b, partition, weighted)
    sigma2 = _sigma2(psi_a, psi_b, theta)
    logger.debug(f"DML1 K={partition.K}: theta={theta:.6g}, fold range=[{min(thetas):.4g}, {max(thetas):.4g}]")
    return DmlEstimate(
        method="DML1",
        theta_hat=theta,
        sigma2_hat=sigma2,
        K=partition.K,
        n=dataset.n_rows,
        alpha=alpha,
        ci=confidence_interval(theta, sigma2, dataset.n_rows, alpha),
        per_fold_theta=thetas,
        flags=_flags(eta),
    )


def dml2(
    dataset: Dataset,
    model: MomentModel,
    eta: EtaInput,
    alpha: float = 0.05,
    K: Optional[int] = None,
) -> DmlEstimate:
    """Average the moment over all rows, then solve.

    Args:
        K: Fold count to record; read from ``eta`` when it is a CrossFitEvaluations

    Raises:
        GlobalDegeneracyError: If the psi_a sum vanishes
    """
    psi_a, psi_b = evaluate_psi(dataset, model, eta)
    theta = _ratio_estimate(psi_a, psi_b)
    sigma2 = _sigma2(psi_a, psi_b, theta)
    if K is None:
        K = len(eta.n0_per_fold) if isinstance(eta, CrossFitEvaluations) else 0
    return DmlEstimate(
        method="DML2",
        theta_hat=theta,
        sigma2_hat=sigma2,
        K=K,
        n=dataset.n_rows,
        alpha=alpha,
        ci=confidence_interval(theta, sigma2, dataset.n_rows, alpha),
        flags=_flags(eta),
    )


def oracle_estimates(
    dataset: Dataset,
    model: MomentModel,
    partition: FoldPartition,
    alpha: float = 0.05,
    sigma2: Optional[float] = None,
    weighted: bool = False,
) -> tuple[DmlEstimate, DmlEstimate]:
    """ORACLE1 and ORACLE2 using the truth_eta columns.

    Args:
        sigma2: Design-true variance; when given, intervals use it instead of the estimate

    Raises:
        MissingTruthError: If truth_eta_1..p are not all mapped
    """
    try:
        eta = dataset.truth_eta(model.p)
    except SchemaError as e:
        raise MissingTruthError(f"Oracle estimates need truth_eta_1..{model.p}: {e}") from e

    psi_a, psi_b = evaluate_psi(dataset, model, eta)
    n = dataset.n_rows
    source: Literal["estimated", "design"] = "estimated" if sigma2 is None else "design"

    theta1, thetas = _fold_average(psi_a, psi_b, partition, weighted)
    var1 = _sigma2(psi_a, psi_b, theta1) if sigma2 is None else float(sigma2)
    theta2 = _ratio_estimate(psi_a, psi_b)
    var2 = _sigma2(psi_a, psi_b, theta2) if sigma2 is None else float(sigma2)

    oracle1 = DmlEstimate(
        method="ORACLE1",
        theta_hat=theta1,
        sigma2_hat=var1,
        K=partition.K,
        n=n,
        alpha=alpha,
        ci=confidence_interval(theta1, var1, n, alpha),
        per_fold_theta=thetas,
        sigma2_source=source,
    )
    oracle2 = DmlEstimate(
        method="ORACLE2",
        theta_hat=theta2,
        sigma2_hat=var2,
        K=partition.K,
        n=n,
        alpha=alpha,
        ci=confidence_interval(theta2, var2, n, alpha),
        sigma2_source=source,
    )
    return oracle1, oracle2
