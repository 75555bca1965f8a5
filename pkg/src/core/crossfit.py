"""Fold partitioning and out-of-fold nuisance evaluation.

For fold k every nuisance component is fitted on the rows outside fold k (n0 = n - n_k rows,
bandwidth c * n0^-phi0) and evaluated at the in-fold covariates. Components sharing a kernel
configuration reuse one kernel matrix per fold. Row sums run in a fixed order, so results do not
depend on how work is scheduled.
"""
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from src.core.dataset import CSV_FLOAT_FORMAT, Dataset, SchemaError, validate_for_model
from src.core.moments import MomentModel
from src.smoothing.kernels import EmptyNeighborhoodError, KernelConfig
from src.smoothing.nadaraya_watson import EVAL_CHUNK_ROWS, nw_fit
from src.utils.rng import make_rng

logger = logging.getLogger(__name__)

ORACLE = "oracle"
KernelChoice = Union[KernelConfig, Literal["oracle"]]


class CrossFitError(Exception):
    """Base exception for cross-fitting errors."""

    pass


class FoldPartitionError(CrossFitError, ValueError):
    """Raised for invalid fold counts or assignments."""

    pass


class NuisanceFitError(CrossFitError):
    """Raised when a nuisance fit fails inside a fold."""

    def __init__(self, message: str, fold: int, component: int, row: int):
        super().__init__(message)
        self.fold = fold
        self.component = component
        self.row = row


@dataclass(frozen=True, eq=False)
class FoldPartition:
    """Assignment of rows to folds 1..K."""

    K: int
    assignment: NDArray[np.intp]

    def __post_init__(self) -> None:
        assignment = np.asarray(self.assignment, dtype=np.intp).copy()
        assignment.setflags(write=False)
        object.__setattr__(self, "assignment", assignment)
        if self.K < 2:
            raise FoldPartitionError(f"Need at least 2 folds, got K={self.K}")
        present = np.unique(assignment)
        if present.min() < 1 or present.max() > self.K or present.size != self.K:
            raise FoldPartitionError(f"Assignment must use every fold id 1..{self.K}")

    @classmethod
    def from_assignment(cls, assignment: ArrayLike) -> "FoldPartition":
        """Partition from an explicit fold id vector with values in 1..K."""
        values = np.asarray(assignment, dtype=np.intp)
        return cls(K=int(values.max()), assignment=values)

    @property
    def n(self) -> int:
        return int(self.assignment.shape[0])

    @property
    def fold_sizes(self) -> list[int]:
        return [int(np.sum(self.assignment == k)) for k in range(1, self.K + 1)]

    def fold_indices(self, k: int) -> NDArray[np.intp]:
        """Rows in fold k, ascending."""
        return np.flatnonzero(self.assignment == k)

    def training_indices(self, k: int) -> NDArray[np.intp]:
        """Rows outside fold k, ascending."""
        return np.flatnonzero(self.assignment != k)


def partition_folds(n: int, K: int, seed: int) -> FoldPartition:
    """Randomly split rows 0..n-1 into K folds of near-equal size.

    A seeded permutation is cut into K contiguous blocks; the first n mod K blocks get one
    extra row.

    Raises:
        FoldPartitionError: If K < 2 or K > n
    """
    if K < 2 or K > n:
        raise FoldPartitionError(f"Fold count must satisfy 2 <= K <= n, got K={K}, n={n}")
    permutation = make_rng(seed).permutation(n)
    base, extra = divmod(n, K)
    assignment = np.empty(n, dtype=np.intp)
    start = 0
    for k in range(K):
        size = base + (1 if k < extra else 0)
        assignment[permutation[start : start + size]] = k + 1
        start += size
    return FoldPartition(K=K, assignment=assignment)


@dataclass(frozen=True, eq=False)
class CrossFitEvaluations:
    """Out-of-fold nuisance values.

    Attributes:
        eta_hat: (n, p) matrix; row i comes from fits trained outside fold_id[i]
        flags: (n,) count of guard triggers (propensity floor) per row
        n0_per_fold: Training size for each fold
        fold_id: Fold of each row
    """

    eta_hat: NDArray[np.float64]
    flags: NDArray[np.int64]
    n0_per_fold: tuple[int, ...]
    fold_id: NDArray[np.intp]

    @property
    def flag_count(self) -> int:
        return int(np.sum(self.flags))

    @property
    def flagged_rows(self) -> int:
        return int(np.count_nonzero(self.flags))


def _kernel_for(
    component: int,
    kernel: KernelConfig,
    component_kernels: Optional[Sequence[KernelConfig]],
) -> KernelConfig:
    if component_kernels is None:
        return kernel
    return component_kernels[component]


def crossfit_nuisance(
    dataset: Dataset,
    model: MomentModel,
    partition: FoldPartition,
    kernel: KernelChoice,
    component_kernels: Optional[Sequence[KernelConfig]] = None,
) -> CrossFitEvaluations:
    """Cross-fit every nuisance component of ``model``.

    Args:
        dataset: Observations; must pass ``validate_for_model``
        model: Moment model whose specs define the components
        partition: Fold assignment over the dataset rows
        kernel: Shared kernel configuration, or ``"oracle"`` to return the truth_eta columns
        component_kernels: Optional per-component configurations (length p)

    Returns:
        Out-of-fold evaluations

    Raises:
        SchemaError: If the dataset is missing roles the model needs
        FoldPartitionError: If the partition does not match the dataset
        NuisanceFitError: If a fit's denominator vanishes; carries fold, component and row
    """
    n, p = dataset.n_rows, model.p
    if partition.n != n:
        raise FoldPartitionError(f"Partition covers {partition.n} rows, dataset has {n}")
    if component_kernels is not None and len(component_kernels) != p:
        raise ValueError(f"Expected {p} component kernels, got {len(component_kernels)}")
    n0_per_fold = tuple(n - size for size in partition.fold_sizes)

    if kernel == ORACLE:
        eta = dataset.truth_eta(p)
        return CrossFitEvaluations(
            eta_hat=eta,
            flags=np.zeros(n, dtype=np.int64),
            n0_per_fold=n0_per_fold,
            fold_id=partition.assignment,
        )
    assert isinstance(kernel, KernelConfig)

    problems = validate_for_model(dataset, model)
    if problems:
        raise SchemaError("; ".join(problems), column="*")

    x_all = dataset.covariates()
    eta_hat = np.empty((n, p), dtype=np.float64)
    flags = np.zeros(n, dtype=np.int64)

    for k in range(1, partition.K + 1):
        eval_idx = partition.fold_indices(k)
        train_idx = partition.training_indices(k)
        if train_idx.size == 0:
            raise FoldPartitionError(f"Fold {k} has an empty complement")
        n0 = int(train_idx.size)

        fits = []
        for j, spec in enumerate(model.nuisance_specs):
            config = _kernel_for(j, kernel, component_kernels)
            fits.append(
                (
                    config,
                    nw_fit(
                        spec,
                        dataset,
                        train_idx,
                        config.spec_for(n0, dataset.d_x),
                        propensity_floor=config.propensity_floor,
                    ),
                )
            )
        logger.debug(
            f"Fold {k}: n_k={eval_idx.size}, n0={n0}, h={fits[0][1].kernel.bandwidth:.5g}"
        )

        x_train = x_all[train_idx]
        for start in range(0, eval_idx.size, EVAL_CHUNK_ROWS):
            rows = eval_idx[start : start + EVAL_CHUNK_ROWS]
            x_eval = x_all[rows]
            weight_cache: dict[KernelConfig, NDArray[np.float64]] = {}
            for j, (config, fit) in enumerate(fits):
                if config not in weight_cache:
                    weight_cache[config] = fit.kernel.weights(x_eval, x_train)
                try:
                    prediction = fit.predict_from_weights(weight_cache[config], x_eval)
                except EmptyNeighborhoodError as e:
                    row = int(rows[e.row])
                    raise NuisanceFitError(
                        f"fold {k}, component {j + 1} ({fit.spec.kind.value}), row {row}: {e}",
                        fold=k,
                        component=j + 1,
                        row=row,
                    ) from e
                eta_hat[rows, j] = prediction.values
                flags[rows] += prediction.floored.astype(np.int64)

    if flags.any():
        logger.warning(
            f"Propensity floor triggered {int(flags.sum())} times on {int(np.count_nonzero(flags))} rows"
        )
    return CrossFitEvaluations(
        eta_hat=eta_hat, flags=flags, n0_per_fold=n0_per_fold, fold_id=partition.assignment
    )


def write_eta_csv(evaluations: CrossFitEvaluations, path: Union[str, Path]) -> Path:
    """Export eta_hat as CSV with columns eta_1..eta_p and fold_id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        evaluations.eta_hat,
        columns=[f"eta_{j}" for j in range(1, evaluations.eta_hat.shape[1] + 1)],
    )
    frame["fold_id"] = evaluations.fold_id
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info(f"Wrote cross-fitted nuisance values to {path}")
    return path
