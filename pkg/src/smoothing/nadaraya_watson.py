"""Nadaraya-Watson fits for the three nuisance types.

    cond_mean        sum Y K / sum K
    group_cond_mean  sum Y G K / sum G K          G = 1{group == value}
    inv_group_prob   sum K / sum G K

Sums run over training rows only. ``predict_from_weights`` accepts a precomputed kernel matrix
so several components trained on the same rows can share one weight computation.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from src.core.dataset import Dataset
from src.core.moments import NuisanceComponentSpec, NuisanceKind
from src.smoothing.kernels import EmptyNeighborhoodError, KernelSpec

logger = logging.getLogger(__name__)

DENOMINATOR_GUARD = 1e-12
EVAL_CHUNK_ROWS = 512


@dataclass(frozen=True)
class NwPrediction:
    """Fitted values plus per-point propensity-floor flags."""

    values: NDArray[np.float64]
    floored: NDArray[np.bool_]


@dataclass(frozen=True, eq=False)
class NwFit:
    """Nadaraya-Watson estimate of one nuisance component.

    Attributes:
        spec: Component definition
        train_idx: Training rows of the source dataset
        kernel: Product kernel
        x_train: Training covariates (n0, d_x)
        response: Training response (None for inv_group_prob)
        group: Training group indicator (None for cond_mean)
        propensity_floor: Optional floor for inv_group_prob denominators
    """

    spec: NuisanceComponentSpec
    train_idx: NDArray[np.intp]
    kernel: KernelSpec
    x_train: NDArray[np.float64]
    response: Optional[NDArray[np.float64]]
    group: Optional[NDArray[np.float64]]
    propensity_floor: Optional[float] = None

    @property
    def n0(self) -> int:
        return int(self.train_idx.shape[0])

    def predict_from_weights(
        self, weights: NDArray[np.float64], x_eval: NDArray[np.float64]
    ) -> NwPrediction:
        """Fitted values given K_h(x_eval - x_train) as an (m, n0) matrix.

        Raises:
            EmptyNeighborhoodError: If a denominator is below the guard at some point
        """
        kind = self.spec.kind
        if kind is NuisanceKind.COND_MEAN:
            assert self.response is not None
            numerator = np.sum(weights * self.response, axis=1)
            denominator = np.sum(weights, axis=1)
        elif kind is NuisanceKind.GROUP_COND_MEAN:
            assert self.response is not None and self.group is not None
            group_weights = weights * self.group
            numerator = np.sum(group_weights * self.response, axis=1)
            denominator = np.sum(group_weights, axis=1)
        else:
            assert self.group is not None
            numerator = np.sum(weights, axis=1)
            denominator = np.sum(weights * self.group, axis=1)

        floored = np.zeros(denominator.shape, dtype=bool)
        if kind is NuisanceKind.INV_GROUP_PROB and self.propensity_floor is not None:
            floor = self.propensity_floor * numerator
            floored = denominator < floor
            denominator = np.where(floored, floor, denominator)
            if floored.any():
                logger.debug(f"Propensity floor applied at {int(floored.sum())} points")

        bad = np.flatnonzero(np.abs(denominator) < DENOMINATOR_GUARD)
        if bad.size:
            row = int(bad[0])
            x = np.asarray(x_eval, dtype=np.float64).reshape(-1, self.kernel.d_x)[row]
            raise EmptyNeighborhoodError(
                f"Empty neighborhood / bandwidth too small for {kind.value} at x={x.tolist()} "
                f"(|denominator|={abs(denominator[row]):.3g}, h={self.kernel.bandwidth:.4g})",
                x=x,
                row=row,
            )
        return NwPrediction(values=numerator / denominator, floored=floored)

    def predict(self, x_eval: NDArray[np.float64]) -> NwPrediction:
        """Evaluate the fit at each row of ``x_eval``."""
        x_eval = np.asarray(x_eval, dtype=np.float64).reshape(-1, self.kernel.d_x)
        values = []
        floored = []
        for start in range(0, x_eval.shape[0], EVAL_CHUNK_ROWS):
            chunk = x_eval[start : start + EVAL_CHUNK_ROWS]
            try:
                result = self.predict_from_weights(self.kernel.weights(chunk, self.x_train), chunk)
            except EmptyNeighborhoodError as e:
                raise EmptyNeighborhoodError(str(e), x=e.x, row=e.row + start) from e
            values.append(result.values)
            floored.append(result.floored)
        return NwPrediction(values=np.concatenate(values), floored=np.concatenate(floored))

    def __call__(self, x_eval: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.predict(x_eval).values


def nw_fit(
    spec: NuisanceComponentSpec,
    dataset: Dataset,
    train_idx: NDArray[np.intp],
    kernel: KernelSpec,
    propensity_floor: Optional[float] = None,
) -> NwFit:
    """Fit one nuisance component on the given training rows.

    Args:
        spec: Component definition
        dataset: Source data
        train_idx: Non-empty training row indices
        kernel: Product kernel with positive bandwidth
        propensity_floor: Optional epsilon; inv_group_prob denominators are floored at
            epsilon * sum K and flagged

    Raises:
        ValueError: If ``train_idx`` is empty
    """
    train_idx = np.asarray(train_idx, dtype=np.intp)
    if train_idx.size == 0:
        raise ValueError("Nadaraya-Watson fit needs at least one training row")

    block = dataset.role_block()
    train_block = {role: values[train_idx] for role, values in block.items()}
    response = spec.response.evaluate(train_block) if spec.response is not None else None
    group = spec.group_indicator(train_block) if spec.group_role is not None else None

    return NwFit(
        spec=spec,
        train_idx=train_idx,
        kernel=kernel,
        x_train=dataset.covariates()[train_idx],
        response=response,
        group=group,
        propensity_floor=propensity_floor,
    )
