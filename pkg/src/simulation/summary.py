"""Per-cell Monte Carlo summaries and their CSV / JSON layouts.

Scaling follows the usual plotting convention: bias by sqrt(n), MSE by n. Raw moments are kept
alongside.
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field

from src.core.dataset import CSV_FLOAT_FORMAT
from src.simulation.designs import SimulationError

logger = logging.getLogger(__name__)

LONG_COLUMNS = ["design", "method", "K", "c", "metric", "value", "mc_se", "flag_rate"]
METRICS_WITH_SE = ("scaled_bias", "scaled_mse", "coverage_pct", "bias", "mse")


class CellStatistics(BaseModel):
    """Moments of one (design, method, K, c) cell over its usable replications."""

    scaled_bias: float
    scaled_bias_se: float
    scaled_mse: float
    scaled_mse_se: float
    coverage_pct: float = Field(ge=0.0, le=100.0)
    coverage_se: float
    bias: float
    bias_se: float
    mse: float
    mse_se: float
    n_used: int


def summarize(theta_hats: ArrayLike, covers: ArrayLike, theta0: float, n: int) -> CellStatistics:
    """Scaled bias, scaled MSE and coverage with Monte Carlo standard errors.

    Args:
        theta_hats: Point estimates, one per replication
        covers: Whether each replication's interval contained theta0
        theta0: Design truth
        n: Sample size of each replication

    Raises:
        SimulationError: If fewer than two replications are given
    """
    estimates = np.asarray(theta_hats, dtype=np.float64)
    hits = np.asarray(covers, dtype=np.float64)
    reps = estimates.shape[0]
    if reps < 2:
        raise SimulationError(f"Need at least 2 replications to summarize, got {reps}")
    if hits.shape[0] != reps:
        raise ValueError(f"Got {reps} estimates but {hits.shape[0]} coverage flags")

    errors = estimates - theta0
    squared = errors**2
    root_reps = math.sqrt(reps)
    bias = float(np.mean(errors))
    bias_se = float(np.std(errors, ddof=1)) / root_reps
    mse = float(np.mean(squared))
    mse_se = float(np.std(squared, ddof=1)) / root_reps
    coverage = float(np.mean(hits))
    scale = math.sqrt(n)
    return CellStatistics(
        scaled_bias=scale * bias,
        scaled_bias_se=scale * bias_se,
        scaled_mse=n * mse,
        scaled_mse_se=n * mse_se,
        coverage_pct=100.0 * coverage,
        coverage_se=100.0 * math.sqrt(coverage * (1.0 - coverage) / reps),
        bias=bias,
        bias_se=bias_se,
        mse=mse,
        mse_se=mse_se,
        n_used=reps,
    )


class McCell(BaseModel):
    """One summary cell plus its failure bookkeeping."""

    design: str
    method: str
    K: int
    c: float
    reps: int
    failures: int = 0
    floored: int = 0
    stats: Optional[CellStatistics] = None

    @property
    def flag_rate(self) -> float:
        """Share of replications that failed and were left out of the moments."""
        return self.failures / self.reps

    @property
    def floor_rate(self) -> float:
        """Share of replications in which the propensity floor fired."""
        return self.floored / self.reps

    def long_rows(self) -> list[dict[str, Any]]:
        base = {"design": self.design, "method": self.method, "K": self.K, "c": self.c}
        rows = []
        for metric in METRICS_WITH_SE:
            value = getattr(self.stats, metric) if self.stats else math.nan
            se_name = "coverage_se" if metric == "coverage_pct" else f"{metric}_se"
            se = getattr(self.stats, se_name) if self.stats else math.nan
            rows.append({**base, "metric": metric, "value": value, "mc_se": se})
        used = self.stats.n_used if self.stats else 0
        rows.append({**base, "metric": "reps_used", "value": float(used), "mc_se": math.nan})
        rows.append({**base, "metric": "floor_rate", "value": self.floor_rate, "mc_se": math.nan})
        for row in rows:
            row["flag_rate"] = self.flag_rate
        return rows


class McSummary(BaseModel):
    """All cells of one Monte Carlo run, in design grid order."""

    config: dict[str, Any]
    cells: list[McCell] = Field(default_factory=list)

    def cell(self, method: str, K: int, c: float) -> McCell:
        for cell in self.cells:
            if cell.method == method and cell.K == K and math.isclose(cell.c, c):
                return cell
        raise KeyError(f"No cell for method={method}, K={K}, c={c}")

    def to_frame(self) -> pd.DataFrame:
        rows = [row for cell in self.cells for row in cell.long_rows()]
        return pd.DataFrame(rows, columns=LONG_COLUMNS)

    def header_lines(self) -> list[str]:
        return [
            "# dmlworkbench Monte Carlo summary",
            "# config: " + json.dumps(self.config, sort_keys=True),
        ]

    def to_csv_text(self) -> str:
        """Long-format CSV with the resolved config echoed in '#' lines."""
        body = self.to_frame().to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        return "\n".join(self.header_lines()) + "\n" + body


def write_summary_csv(summary: McSummary, path: Union[str, Path]) -> Path:
    """Write the long-format CSV; identical summaries give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(summary.to_csv_text(), encoding="utf-8")
    logger.info(f"Wrote {len(summary.cells)} cells to {path}")
    return path


def write_summary_json(summary: McSummary, path: Union[str, Path]) -> Path:
    """Write the summary as nested JSON (config plus one object per cell)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": summary.config,
        "cells": [
            {
                **cell.model_dump(exclude={"stats"}),
                "flag_rate": cell.flag_rate,
                "floor_rate": cell.floor_rate,
                "stats": cell.stats.model_dump() if cell.stats else None,
            }
            for cell in summary.cells
        ],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote JSON summary to {path}")
    return path
