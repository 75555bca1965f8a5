"""Observation container, column roles and CSV ingestion.

A ``Dataset`` holds n observations as named float columns plus a role map that tells the
estimators which column plays which part (outcome, treatment, covariates, true nuisance values
for oracle runs, ...). Row order is the observation index used for fold assignment, so loading
the same file always yields the same folds for a given seed.
"""
import logging
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import TYPE_CHECKING, Any, Optional, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

if TYPE_CHECKING:
    from src.core.moments import MomentModel

logger = logging.getLogger(__name__)

ROLE_OUTCOME = "outcome"
ROLE_OUTCOME_PRE = "outcome_pre"
ROLE_TREATMENT = "treatment"
ROLE_INSTRUMENT = "instrument"
ROLE_TRUTH_THETA = "truth_theta"
INDICATOR_ROLES = (ROLE_TREATMENT, ROLE_INSTRUMENT)

_ROLE_PATTERN = re.compile(
    r"^(outcome|outcome_pre|treatment|instrument|truth_theta|covariate_[1-9]\d*|truth_eta_[1-9]\d*)$"
)

# %.17g round-trips every float64 exactly
CSV_FLOAT_FORMAT = "%.17g"


class DatasetError(Exception):
    """Base exception for dataset errors."""

    pass


class SchemaError(DatasetError):
    """Raised when a role refers to a column that does not exist or is malformed."""

    def __init__(self, message: str, column: str):
        super().__init__(message)
        self.column = column


class DatasetValidationError(DatasetError):
    """Raised when column values break a dataset invariant."""

    def __init__(self, message: str, column: str, row: int | None = None):
        super().__init__(message)
        self.column = column
        self.row = row


class CsvParseError(DatasetError):
    """Raised when a CSV cell cannot be read as a finite number."""

    def __init__(self, message: str, column: str, row: int):
        super().__init__(message)
        self.column = column
        self.row = row


def covariate_role(index: int) -> str:
    """Role name of the ``index``-th covariate (1-based)."""
    return f"covariate_{index}"


def truth_eta_role(index: int) -> str:
    """Role name of the ``index``-th true nuisance column (1-based)."""
    return f"truth_eta_{index}"


def _role_index(role: str, prefix: str) -> int:
    return int(role[len(prefix) :])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of observations with semantic column roles.

    Attributes:
        columns: Column name to float64 vector of length ``n_rows`` (read-only)
        roles: Role name to column name
    """

    columns: Mapping[str, NDArray[np.float64]]
    roles: Mapping[str, str]
    _covariate_roles: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        frozen: dict[str, NDArray[np.float64]] = {}
        lengths = set()
        for name, values in self.columns.items():
            array = np.array(values, dtype=np.float64, copy=True).reshape(-1)
            array.setflags(write=False)
            frozen[name] = array
            lengths.add(array.shape[0])
        if len(lengths) > 1:
            raise DatasetValidationError(
                f"Columns have different lengths: {sorted(lengths)}", column="*"
            )
        object.__setattr__(self, "columns", MappingProxyType(frozen))
        object.__setattr__(self, "roles", MappingProxyType(dict(self.roles)))
        self._validate()

    def _validate(self) -> None:
        for role, column in self.roles.items():
            if not _ROLE_PATTERN.match(role):
                raise SchemaError(f"Unknown role '{role}'", column=column)
            if column not in self.columns:
                raise SchemaError(f"Column '{column}' for role '{role}' not found", column=column)

        covariates = sorted(
            (r for r in self.roles if r.startswith("covariate_")),
            key=lambda r: _role_index(r, "covariate_"),
        )
        if not covariates:
            raise DatasetValidationError("At least one covariate role is required", column="*")
        expected = [covariate_role(j) for j in range(1, len(covariates) + 1)]
        if covariates != expected:
            raise DatasetValidationError(
                f"Covariate roles must be numbered 1..{len(covariates)}, got {covariates}",
                column="*",
            )
        covariate_columns = [self.roles[r] for r in covariates]
        if len(set(covariate_columns)) != len(covariate_columns):
            raise DatasetValidationError(
                f"Covariate roles must map to distinct columns, got {covariate_columns}",
                column="*",
            )
        object.__setattr__(self, "_covariate_roles", tuple(covariates))

        for name, values in self.columns.items():
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                raise DatasetValidationError(
                    f"Column '{name}' has a missing or non-finite value at row {bad[0]}",
                    column=name,
                    row=int(bad[0]),
                )

        for role in INDICATOR_ROLES:
            if role not in self.roles:
                continue
            column = self.roles[role]
            values = self.columns[column]
            bad = np.flatnonzero((values != 0.0) & (values != 1.0))
            if bad.size:
                row = int(bad[0])
                raise DatasetValidationError(
                    f"Column '{column}' ({role}) must be 0/1, found {values[row]!r} at row {row}",
                    column=column,
                    row=row,
                )

    @classmethod
    def from_arrays(cls, data: Mapping[str, ArrayLike], roles: Mapping[str, str]) -> "Dataset":
        """Build a dataset from in-memory arrays."""
        return cls(columns={k: np.asarray(v, dtype=np.float64) for k, v in data.items()}, roles=roles)

    @property
    def n_rows(self) -> int:
        """Number of observations."""
        return int(next(iter(self.columns.values())).shape[0])

    @property
    def d_x(self) -> int:
        """Covariate dimension."""
        return len(self._covariate_roles)

    @property
    def covariate_roles(self) -> tuple[str, ...]:
        return self._covariate_roles

    def has_role(self, role: str) -> bool:
        return role in self.roles

    def role_values(self, role: str) -> NDArray[np.float64]:
        """Column vector for a role.

        Raises:
            SchemaError: If the role is not mapped
        """
        if role not in self.roles:
            raise SchemaError(f"Dataset has no '{role}' role", column=role)
        return self.columns[self.roles[role]]

    def covariates(self) -> NDArray[np.float64]:
        """Covariate block X as an (n, d_x) matrix."""
        return np.column_stack([self.role_values(r) for r in self._covariate_roles])

    def role_block(self) -> dict[str, NDArray[np.float64]]:
        """All mapped roles as role -> vector, the input format of moment functions."""
        return {role: self.columns[column] for role, column in self.roles.items()}

    def row(self, index: int) -> dict[str, float]:
        """Single observation as role -> value."""
        return {role: float(self.columns[column][index]) for role, column in self.roles.items()}

    def truth_eta(self, p: int) -> NDArray[np.float64]:
        """True nuisance values as an (n, p) matrix.

        Raises:
            SchemaError: If any truth_eta_j role is missing
        """
        return np.column_stack([self.role_values(truth_eta_role(j)) for j in range(1, p + 1)])

    def take(self, index: Sequence[int] | NDArray[np.intp]) -> "Dataset":
        """Dataset restricted to (and reordered by) the given rows."""
        idx = np.asarray(index, dtype=np.intp)
        return Dataset(columns={k: v[idx] for k, v in self.columns.items()}, roles=self.roles)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: np.asarray(values) for name, values in self.columns.items()})


PathLike = Union[str, Path]


def load_csv(path: PathLike, role_map: Optional[Mapping[str, str]] = None) -> Dataset:
    """Load a CSV file and bind its columns to roles.

    Only columns named in ``role_map`` are parsed and kept. Without a map, every column whose
    header is itself a role name is bound to that role.

    Args:
        path: UTF-8, comma-separated file with a header row
        role_map: Role name to column name

    Returns:
        Validated dataset

    Raises:
        SchemaError: If a mapped column is absent
        CsvParseError: If a mapped cell is empty or not a finite number
        DatasetValidationError: If an indicator column holds a value other than 0/1
    """
    path = Path(path)
    logger.info(f"Loading dataset from {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if role_map is None:
        role_map = {str(c): str(c) for c in frame.columns if _ROLE_PATTERN.match(str(c))}
        if not role_map:
            raise SchemaError(f"No column of {path.name} is named after a role", column="*")

    for role, column in role_map.items():
        if column not in frame.columns:
            raise SchemaError(
                f"Column '{column}' (role {role}) not found in {path.name}; "
                f"available: {list(frame.columns)}",
                column=column,
            )

    data: dict[str, NDArray[np.float64]] = {}
    for column in dict.fromkeys(role_map.values()):
        raw = frame[column].str.strip()
        values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            row = int(bad[0])
            cell = raw.iloc[row]
            reason = "missing value" if cell == "" else f"non-numeric value {cell!r}"
            raise CsvParseError(
                f"{reason} in column '{column}' at row {row} (line {row + 2})",
                column=column,
                row=row,
            )
        data[column] = values

    dataset = Dataset(columns=data, roles=role_map)
    logger.info(f"Loaded {dataset.n_rows} rows, d_x={dataset.d_x}, roles={sorted(role_map)}")
    return dataset


def write_csv(dataset: Dataset, path: PathLike) -> Path:
    """Write a dataset's columns to CSV with round-trip float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info(f"Wrote {dataset.n_rows} rows to {path}")
    return path


def validate_for_model(dataset: Dataset, model: "MomentModel") -> list[str]:
    """Check that every role the model needs is present.

    Scans all requirements and reports every violation.

    Returns:
        Empty list when the pairing is usable, otherwise one message per missing role
    """
    errors = []
    for role in model.required_roles():
        if not dataset.has_role(role):
            errors.append(f"model {model.id} requires role '{role}' which the dataset does not map")
    return errors


def parse_role_flags(flags: Sequence[str]) -> dict[str, str]:
    """Turn ``role=column`` strings into a role map.

    Raises:
        SchemaError: On malformed entries or unknown role names
    """
    role_map: dict[str, str] = {}
    for flag in flags:
        role, sep, column = flag.partition("=")
        role, column = role.strip(), column.strip()
        if not sep or not role or not column:
            raise SchemaError(f"Expected role=column, got '{flag}'", column=flag)
        if not _ROLE_PATTERN.match(role):
            raise SchemaError(f"Unknown role '{role}'", column=column)
        role_map[role] = column
    return role_map


def describe(dataset: Dataset) -> dict[str, Any]:
    """Small JSON-ready summary used in run headers."""
    return {"n_rows": dataset.n_rows, "d_x": dataset.d_x, "roles": dict(dataset.roles)}
