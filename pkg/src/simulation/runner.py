"""Monte Carlo runner over a (K, c, method) grid.

Replication r draws its data from ``derive_seed(seed, r)`` and its folds for K from
``derive_seed(fold_seed or seed, r, K)``. Replications run through a joblib pool and come
back in index order, so the summary does not depend on the worker count.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Literal, Optional

from joblib import Parallel, delayed
from pydantic import BaseModel, Field, field_validator, model_validator

from src.core.crossfit import CrossFitError, crossfit_nuisance, partition_folds
from src.core.dataset import Dataset
from src.core.estimators import DmlEstimate, EstimationError, dml1, dml2, oracle_estimates
from src.core.moments import MomentModel, catalog_model
from src.smoothing.kernels import KernelConfig, KernelError
from src.simulation.designs import (
    DESIGNS,
    SimulationError,
    design_constants,
    design_key,
)
from src.simulation.summary import McCell, McSummary, summarize
from src.utils.rng import derive_seed

logger = logging.getLogger(__name__)

McMethod = Literal["DML1", "DML2", "ORACLE1", "ORACLE2"]
ALL_METHODS: tuple[McMethod, ...] = ("DML1", "DML2", "ORACLE1", "ORACLE2")
DEFAULT_K_GRID = (2, 5, 10, 20)


class ReplicationFailure(SimulationError):
    """Raised in strict mode when one replication cell cannot be estimated."""

    def __init__(self, message: str, replication: int, method: str, K: int, c: float):
        super().__init__(message)
        self.replication = replication
        self.method = method
        self.K = K
        self.c = c

    def __reduce__(self) -> tuple[Any, ...]:
        # joblib workers send exceptions back pickled
        return (self.__class__, (str(self), self.replication, self.method, self.K, self.c))

    @property
    def cell(self) -> str:
        return f"method={self.method}, K={self.K}, c={self.c}, replication={self.replication}"


class McDesign(BaseModel):
    """Resolved Monte Carlo experiment.

    Kernel order, bandwidth constant and exponent default to the design's own setup when left
    unset.
    """

    name: str
    n: int = Field(default=1000, ge=2)
    K_grid: list[int] = Field(default_factory=lambda: list(DEFAULT_K_GRID))
    c_grid: Optional[list[float]] = None
    kernel_order: Optional[Literal[2, 4, 6]] = None
    phi0: Optional[float] = Field(default=None, gt=0.0, lt=0.5)
    reps: int = Field(default=500, ge=2)
    seed: int = Field(default=0, ge=0, lt=2**64)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    methods: list[McMethod] = Field(default_factory=lambda: list(ALL_METHODS))
    fold_seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    propensity_floor: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    strict: bool = False
    oracle_true_sigma2: bool = True
    theta0: Optional[float] = None

    @field_validator("name")
    @classmethod
    def normalize_name(cls, v: str) -> str:
        return design_key(v)

    @field_validator("c_grid")
    @classmethod
    def positive_constants(cls, v: Optional[list[float]]) -> Optional[list[float]]:
        if v is not None and (not v or any(c <= 0.0 for c in v)):
            raise ValueError("c_grid must be a non-empty list of positive constants")
        return v

    @model_validator(mode="after")
    def resolve_defaults(self) -> "McDesign":
        spec = DESIGNS[self.name]
        if not self.K_grid or any(K < 2 or K > self.n for K in self.K_grid):
            raise ValueError(f"K_grid entries must lie in [2, n={self.n}], got {self.K_grid}")
        if not self.methods:
            raise ValueError("At least one method is required")
        if self.theta0 is not None and not math.isclose(self.theta0, spec.theta0):
            raise ValueError(f"theta0 of {self.name} is {spec.theta0}, got {self.theta0}")
        self.theta0 = spec.theta0
        if self.c_grid is None:
            self.c_grid = [spec.bandwidth_constant]
        if self.kernel_order is None:
            self.kernel_order = spec.kernel_order  # type: ignore[assignment]
        if self.phi0 is None:
            self.phi0 = spec.bandwidth_exponent
        return self

    @property
    def model_id(self) -> str:
        return DESIGNS[self.name].model_id

    def kernel(self, c: float) -> KernelConfig:
        assert self.kernel_order is not None and self.phi0 is not None
        return KernelConfig(
            order=self.kernel_order,
            bandwidth_constant=c,
            bandwidth_exponent=self.phi0,
            propensity_floor=self.propensity_floor,
        )

    def data_seed(self, replication: int) -> int:
        return derive_seed(self.seed, replication)

    def partition_seed(self, replication: int, K: int) -> int:
        master = self.fold_seed if self.fold_seed is not None else self.seed
        return derive_seed(master, replication, K)

    def resolved(self) -> dict[str, Any]:
        """JSON-ready config echoed into every output."""
        config = self.model_dump()
        config["seed_rule"] = "data: derive_seed(seed, r); folds: derive_seed(fold_seed or seed, r, K)"
        return config


@dataclass(frozen=True)
class ReplicationRecord:
    """Outcome of one method in one cell of one replication."""

    replication: int
    method: str
    K: int
    c: float
    theta_hat: float
    covers: bool
    failed: bool = False
    floored: bool = False


def _record(
    replication: int, estimate: DmlEstimate, c: float, theta0: float, floored: bool = False
) -> ReplicationRecord:
    return ReplicationRecord(
        replication=replication,
        method=estimate.method,
        K=estimate.K,
        c=c,
        theta_hat=estimate.theta_hat,
        covers=estimate.covers(theta0),
        floored=floored,
    )


def _failed(
    design: McDesign, replication: int, method: str, K: int, c: float, error: Exception
) -> ReplicationRecord:
    if design.strict:
        raise ReplicationFailure(
            f"{design.name} replication {replication}, {method} K={K} c={c}: {error}",
            replication=replication,
            method=method,
            K=K,
            c=c,
        ) from error
    logger.warning(f"Replication {replication} {method} K={K} c={c} failed: {error}")
    return ReplicationRecord(replication, method, K, c, math.nan, False, failed=True)


def _oracle_records(
    design: McDesign,
    replication: int,
    dataset: Dataset,
    model: MomentModel,
    K: int,
    sigma2: Optional[float],
) -> list[ReplicationRecord]:
    wanted = [m for m in design.methods if m.startswith("ORACLE")]
    if not wanted:
        return []
    assert design.c_grid is not None and design.theta0 is not None
    try:
        partition = partition_folds(dataset.n_rows, K, design.partition_seed(replication, K))
        oracle1, oracle2 = oracle_estimates(
            dataset, model, partition, alpha=design.alpha, sigma2=sigma2
        )
    except (CrossFitError, EstimationError) as e:
        return [_failed(design, replication, m, K, c, e) for m in wanted for c in design.c_grid]
    by_method = {"ORACLE1": oracle1, "ORACLE2": oracle2}
    # oracle estimates do not smooth, so every c shares them
    return [
        _record(replication, by_method[m], c, design.theta0)
        for m in wanted
        for c in design.c_grid
    ]


def _dml_records(
    design: McDesign,
    replication: int,
    dataset: Dataset,
    model: MomentModel,
    K: int,
    c: float,
) -> list[ReplicationRecord]:
    wanted = [m for m in design.methods if m.startswith("DML")]
    if not wanted:
        return []
    assert design.theta0 is not None
    partition = partition_folds(dataset.n_rows, K, design.partition_seed(replication, K))
    try:
        evaluations = crossfit_nuisance(dataset, model, partition, design.kernel(c))
    except (CrossFitError, KernelError) as e:
        return [_failed(design, replication, m, K, c, e) for m in wanted]
    floored = evaluations.flag_count > 0

    records = []
    for method in wanted:
        try:
            if method == "DML1":
                estimate = dml1(dataset, model, evaluations, partition, alpha=design.alpha)
            else:
                estimate = dml2(dataset, model, evaluations, alpha=design.alpha)
        except EstimationError as e:
            records.append(_failed(design, replication, method, K, c, e))
            continue
        records.append(_record(replication, estimate, c, design.theta0, floored))
    return records


def run_replication(
    design: McDesign, replication: int, oracle_sigma2: Optional[float] = None
) -> list[ReplicationRecord]:
    """All grid cells of one replication; a pure function of (design, replication).

    Raises:
        ReplicationFailure: In strict mode, on the first cell that cannot be estimated
    """
    spec = DESIGNS[design.name]
    dataset = spec.generator(design.n, design.data_seed(replication))
    model = catalog_model(design.model_id)
    assert design.c_grid is not None

    records: list[ReplicationRecord] = []
    for K in design.K_grid:
        records.extend(_oracle_records(design, replication, dataset, model, K, oracle_sigma2))
        for c in design.c_grid:
            records.extend(_dml_records(design, replication, dataset, model, K, c))
    return records


def aggregate(design: McDesign, replications: list[list[ReplicationRecord]]) -> McSummary:
    """Fold per-replication records into summary cells, in grid order."""
    assert design.c_grid is not None and design.theta0 is not None
    grouped: dict[tuple[str, int, float], list[ReplicationRecord]] = {}
    for records in replications:
        for record in records:
            grouped.setdefault((record.method, record.K, record.c), []).append(record)

    cells = []
    for method in design.methods:
        for K in design.K_grid:
            for c in design.c_grid:
                records = grouped.get((method, K, c), [])
                usable = [r for r in records if not r.failed]
                cell = McCell(
                    design=design.name,
                    method=method,
                    K=K,
                    c=c,
                    reps=design.reps,
                    failures=len(records) - len(usable),
                    floored=sum(r.floored for r in usable),
                )
                if len(usable) >= 2:
                    cell.stats = summarize(
                        [r.theta_hat for r in usable],
                        [r.covers for r in usable],
                        design.theta0,
                        design.n,
                    )
                cells.append(cell)
    return McSummary(config=design.resolved(), cells=cells)


def run_monte_carlo(design: McDesign, worker_count: int = 1) -> McSummary:
    """Run every replication of ``design`` and summarize.

    Args:
        design: Resolved experiment
        worker_count: joblib worker processes; the result is identical for any value

    Raises:
        ReplicationFailure: In strict mode
    """
    if worker_count < 1:
        raise ValueError(f"worker_count must be at least 1, got {worker_count}")
    oracle_sigma2: Optional[float] = None
    if design.oracle_true_sigma2 and any(m.startswith("ORACLE") for m in design.methods):
        oracle_sigma2 = design_constants(design.name).sigma2

    logger.info(
        f"Monte Carlo {design.name}: n={design.n}, reps={design.reps}, K={design.K_grid}, "
        f"c={design.c_grid}, s={design.kernel_order}, phi0={design.phi0:.6g}, "
        f"workers={worker_count}"
    )
    replications = Parallel(n_jobs=worker_count)(
        delayed(run_replication)(design, r, oracle_sigma2) for r in range(1, design.reps + 1)
    )
    summary = aggregate(design, list(replications))
    if oracle_sigma2 is not None:
        summary.config["oracle_sigma2"] = oracle_sigma2
    failures = sum(cell.failures for cell in summary.cells)
    if failures:
        logger.warning(f"{failures} replication cells failed and were left out of the moments")
    logger.info(f"Monte Carlo {design.name} finished: {len(summary.cells)} cells")
    return summary
