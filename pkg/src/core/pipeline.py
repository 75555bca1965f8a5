"""One estimation run: partition, cross-fit, estimate, collect records."""
import logging
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.core.crossfit import (
    CrossFitEvaluations,
    FoldPartition,
    crossfit_nuisance,
    partition_folds,
    write_eta_csv,
)
from src.core.dataset import Dataset, SchemaError, validate_for_model
from src.core.estimators import DmlEstimate, MissingTruthError, dml1, dml2, oracle_estimates
from src.core.moments import MomentModel, UnknownModelError, catalog_model
from src.smoothing.kernels import KernelConfig
from src.theory.lambdas import lambda_hat

logger = logging.getLogger(__name__)


class EstimationConfig(BaseModel):
    """Resolved settings of the estimate command."""

    model_config = ConfigDict(frozen=True)

    model: str
    method: Literal["dml1", "dml2", "both"] = "both"
    oracle: bool = False
    K: int = Field(default=5, ge=2)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    kernel_order: Literal[2, 4, 6] = 2
    c: float = Field(default=1.0, gt=0.0)
    phi0: float = Field(default=0.2, gt=0.0, lt=0.5)
    seed: int = Field(default=0, ge=0, lt=2**64)
    propensity_floor: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    weighted_dml1: bool = False

    @field_validator("model")
    @classmethod
    def known_model(cls, value: str) -> str:
        try:
            return catalog_model(value).id
        except UnknownModelError as e:
            raise ValueError(str(e)) from e

    @property
    def kernel(self) -> KernelConfig:
        return KernelConfig(
            order=self.kernel_order,
            bandwidth_constant=self.c,
            bandwidth_exponent=self.phi0,
            propensity_floor=self.propensity_floor,
        )


class EstimationRun(BaseModel):
    """Estimates of one run plus what produced them."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: EstimationConfig
    fold_sizes: list[int]
    estimates: list[DmlEstimate]
    lambda_hat: Optional[float] = None
    evaluations: Optional[CrossFitEvaluations] = None

    def to_payload(self, dataset_info: dict[str, Any]) -> dict[str, Any]:
        """JSON-ready output: resolved config, dataset summary and one record per method."""
        return {
            "config": {**self.config.model_dump(), "fold_sizes": self.fold_sizes},
            "dataset": dataset_info,
            "lambda_hat": self.lambda_hat,
            "records": [estimate.to_record() for estimate in self.estimates],
        }


def _dml_estimates(
    dataset: Dataset,
    model: MomentModel,
    config: EstimationConfig,
    partition: FoldPartition,
    evaluations: CrossFitEvaluations,
) -> list[DmlEstimate]:
    estimates = []
    if config.method in ("dml1", "both"):
        estimates.append(
            dml1(
                dataset,
                model,
                evaluations,
                partition,
                alpha=config.alpha,
                weighted=config.weighted_dml1,
            )
        )
    if config.method in ("dml2", "both"):
        estimates.append(dml2(dataset, model, evaluations, alpha=config.alpha))
    return estimates


def run_estimation(
    dataset: Dataset, config: EstimationConfig, export_eta: Optional[Path] = None
) -> EstimationRun:
    """Cross-fit the model's nuisances and compute the requested estimates.

    Args:
        dataset: Observations
        config: Resolved settings
        export_eta: Optional CSV path for the cross-fitted nuisance values

    Raises:
        SchemaError: If the dataset lacks roles the model needs
        FoldPartitionError: If K exceeds n
        NuisanceFitError: If a nuisance fit has an empty neighborhood
        EstimationError: On fold or global degeneracy, or oracle runs without truth columns
    """
    model = catalog_model(config.model)
    problems = validate_for_model(dataset, model)
    if problems:
        raise SchemaError("; ".join(problems), column="*")
    if config.oracle:
        try:
            dataset.truth_eta(model.p)
        except SchemaError as e:
            raise MissingTruthError(f"Oracle estimates need truth_eta_1..{model.p}: {e}") from e

    partition = partition_folds(dataset.n_rows, config.K, config.seed)
    logger.info(
        f"{model.id}: n={dataset.n_rows}, K={config.K}, fold sizes={partition.fold_sizes}, "
        f"kernel order {config.kernel_order}, h = {config.c} * n0^-{config.phi0}"
    )
    evaluations = crossfit_nuisance(dataset, model, partition, config.kernel)
    if export_eta is not None:
        write_eta_csv(evaluations, export_eta)

    estimates = _dml_estimates(dataset, model, config, partition, evaluations)
    if config.oracle:
        oracle1, oracle2 = oracle_estimates(
            dataset, model, partition, alpha=config.alpha, weighted=config.weighted_dml1
        )
        if config.method in ("dml1", "both"):
            estimates.append(oracle1)
        if config.method in ("dml2", "both"):
            estimates.append(oracle2)

    reference = next((e for e in estimates if e.method == "DML2"), estimates[0])
    discrepancy = lambda_hat(dataset, model, evaluations, reference.theta_hat)
    for estimate in estimates:
        logger.info(f"{estimate.method}: theta={estimate.theta_hat:.6g} (se {estimate.se:.3g})")
    return EstimationRun(
        config=config,
        fold_sizes=partition.fold_sizes,
        estimates=estimates,
        lambda_hat=discrepancy,
        evaluations=evaluations,
    )
