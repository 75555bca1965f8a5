"""Core estimation objects: datasets, moment models, cross-fitting and DML estimators.

A ``Dataset`` is paired with a ``MomentModel``; nuisance components are cross-fitted over a
``FoldPartition`` (``src.core.crossfit``) and the evaluations feed ``dml1`` / ``dml2``
(``src.core.estimators``). Only the leaf modules are re-exported here because the smoothing
package imports them.
"""
import logging

from src.core.dataset import Dataset, DatasetError, load_csv, validate_for_model, write_csv
from src.core.moments import MomentModel, MomentModelError, catalog_model, eval_moment


logger = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "DatasetError",
    "MomentModel",
    "MomentModelError",
    "catalog_model",
    "eval_moment",
    "load_csv",
    "validate_for_model",
    "write_csv",
]
