"""Tests for fold partitioning and cross-fitted nuisance evaluation."""
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.core.crossfit import (
    ORACLE,
    FoldPartition,
    FoldPartitionError,
    NuisanceFitError,
    crossfit_nuisance,
    partition_folds,
    write_eta_csv,
)
from src.core.dataset import Dataset, SchemaError
from src.core.moments import catalog_model
from src.simulation.designs import gen_selection
from src.smoothing.kernels import KernelConfig
from src.smoothing.nadaraya_watson import nw_fit


class TestPartition:
    def test_fold_sizes_differ_by_at_most_one(self) -> None:
        partition = partition_folds(103, 5, seed=0)
        assert sorted(partition.fold_sizes, reverse=True) == [21, 21, 21, 20, 20]
        assert partition.fold_sizes == [21, 21, 21, 20, 20]
        assert set(np.unique(partition.assignment)) == {1, 2, 3, 4, 5}

    def test_leave_one_out(self) -> None:
        partition = partition_folds(7, 7, seed=3)
        assert partition.fold_sizes == [1] * 7

    def test_same_seed_same_folds(self) -> None:
        a = partition_folds(50, 4, seed=9)
        b = partition_folds(50, 4, seed=9)
        c = partition_folds(50, 4, seed=10)
        np.testing.assert_array_equal(a.assignment, b.assignment)
        assert not np.array_equal(a.assignment, c.assignment)

    @pytest.mark.parametrize("n,K", [(10, 1), (10, 11), (3, 0)])
    def test_invalid_fold_count(self, n: int, K: int) -> None:
        with pytest.raises(FoldPartitionError, match="2 <= K <= n"):
            partition_folds(n, K, seed=0)

    def test_from_assignment(self) -> None:
        partition = FoldPartition.from_assignment([1, 2, 1, 2, 3])
        assert partition.K == 3
        np.testing.assert_array_equal(partition.fold_indices(1), [0, 2])
        np.testing.assert_array_equal(partition.training_indices(1), [1, 3, 4])

    def test_assignment_must_use_every_fold(self) -> None:
        with pytest.raises(FoldPartitionError):
            FoldPartition(K=3, assignment=np.array([1, 1, 3]))


class TestCrossFit:
    def test_each_row_comes_from_its_complement(self, selection_data: Dataset) -> None:
        model = catalog_model("ATE")
        kernel = KernelConfig(order=2, bandwidth_constant=0.5, bandwidth_exponent=0.2)
        partition = partition_folds(selection_data.n_rows, 3, seed=1)
        evaluations = crossfit_nuisance(selection_data, model, partition, kernel)

        assert evaluations.eta_hat.shape == (selection_data.n_rows, 4)
        assert evaluations.n0_per_fold == (400, 400, 400)
        np.testing.assert_array_equal(evaluations.fold_id, partition.assignment)

        x = selection_data.covariates()
        for k in (1, 2, 3):
            rows = partition.fold_indices(k)
            train = partition.training_indices(k)
            for j, spec in enumerate(model.nuisance_specs):
                fit = nw_fit(spec, selection_data, train, kernel.spec_for(train.size, 1))
                np.testing.assert_allclose(evaluations.eta_hat[rows, j], fit(x[rows]), rtol=1e-12)

    @pytest.mark.parametrize("row", [0, 13, 39])
    def test_changing_a_row_only_moves_other_folds(self, row: int) -> None:
        data = gen_selection(40, seed=21)
        model = catalog_model("ATE")
        kernel = KernelConfig(order=2, bandwidth_constant=0.8, bandwidth_exponent=0.2)
        partition = partition_folds(40, 4, seed=5)
        before = crossfit_nuisance(data, model, partition, kernel).eta_hat

        columns = {name: np.array(values) for name, values in data.columns.items()}
        columns[data.roles["outcome"]][row] += 5.0
        treatment = columns[data.roles["treatment"]]
        treatment[row] = 1.0 - treatment[row]
        mutated = Dataset.from_arrays(columns, data.roles)
        after = crossfit_nuisance(mutated, model, partition, kernel).eta_hat

        same_fold = partition.assignment == partition.assignment[row]
        np.testing.assert_array_equal(after[same_fold], before[same_fold])
        moved = np.any(after != before, axis=1)
        assert moved[~same_fold].all()

    def test_relabeling_rows_permutes_the_output(self) -> None:
        data = gen_selection(60, seed=8)
        model = catalog_model("ATE")
        kernel = KernelConfig(order=2, bandwidth_constant=0.6, bandwidth_exponent=0.2)
        partition = partition_folds(60, 3, seed=2)
        original = crossfit_nuisance(data, model, partition, kernel)

        order = np.random.default_rng(3).permutation(60)
        relabeled = crossfit_nuisance(
            data.take(order),
            model,
            FoldPartition.from_assignment(partition.assignment[order]),
            kernel,
        )
        restore = np.argsort(order)
        np.testing.assert_allclose(
            relabeled.eta_hat[restore], original.eta_hat, rtol=1e-12, atol=1e-12
        )
        np.testing.assert_array_equal(relabeled.fold_id[restore], partition.assignment)

    def test_component_kernels(self, selection_data: Dataset) -> None:
        model = catalog_model("ATE")
        kernels = [
            KernelConfig(order=2, bandwidth_constant=0.5, bandwidth_exponent=0.2),
            KernelConfig(order=2, bandwidth_constant=0.9, bandwidth_exponent=0.2),
            KernelConfig(order=2, bandwidth_constant=0.7, bandwidth_exponent=0.25),
            KernelConfig(order=2, bandwidth_constant=0.4, bandwidth_exponent=0.15),
        ]
        partition = partition_folds(selection_data.n_rows, 2, seed=6)
        evaluations = crossfit_nuisance(
            selection_data, model, partition, kernels[0], component_kernels=kernels
        )

        x = selection_data.covariates()
        for k in (1, 2):
            rows = partition.fold_indices(k)
            train = partition.training_indices(k)
            for j, spec in enumerate(model.nuisance_specs):
                fit = nw_fit(spec, selection_data, train, kernels[j].spec_for(train.size, 1))
                np.testing.assert_allclose(evaluations.eta_hat[rows, j], fit(x[rows]), rtol=1e-12)

        shared = crossfit_nuisance(selection_data, model, partition, kernels[0])
        np.testing.assert_array_equal(shared.eta_hat[:, 0], evaluations.eta_hat[:, 0])
        assert not np.allclose(shared.eta_hat[:, 1], evaluations.eta_hat[:, 1])

    def test_component_kernels_need_one_per_component(self, selection_data: Dataset) -> None:
        partition = partition_folds(selection_data.n_rows, 2, seed=6)
        with pytest.raises(ValueError, match="Expected 4 component kernels, got 2"):
            crossfit_nuisance(
                selection_data,
                catalog_model("ATE"),
                partition,
                KernelConfig(),
                component_kernels=[KernelConfig(), KernelConfig()],
            )

    def test_fold_bandwidth_follows_training_size(self, selection_data: Dataset) -> None:
        kernel = KernelConfig(order=2, bandwidth_constant=0.5, bandwidth_exponent=0.2)
        partition = partition_folds(selection_data.n_rows, 2, seed=1)
        evaluations = crossfit_nuisance(selection_data, catalog_model("PLM"), partition, kernel)
        assert evaluations.n0_per_fold == (300, 300)
        assert evaluations.flag_count == 0

    def test_oracle_returns_truth(self, selection_data: Dataset) -> None:
        model = catalog_model("ATE")
        partition = partition_folds(selection_data.n_rows, 2, seed=1)
        evaluations = crossfit_nuisance(selection_data, model, partition, ORACLE)
        np.testing.assert_array_equal(evaluations.eta_hat, selection_data.truth_eta(4))

    def test_missing_role(self, selection_data: Dataset) -> None:
        partition = partition_folds(selection_data.n_rows, 2, seed=1)
        with pytest.raises(SchemaError, match="instrument"):
            crossfit_nuisance(selection_data, catalog_model("LATE"), partition, KernelConfig())

    def test_partition_size_mismatch(self, selection_data: Dataset) -> None:
        partition = partition_folds(10, 2, seed=1)
        with pytest.raises(FoldPartitionError, match="covers 10 rows"):
            crossfit_nuisance(selection_data, catalog_model("ATE"), partition, KernelConfig())

    def test_empty_neighborhood_names_fold_and_component(self) -> None:
        x = np.concatenate([np.linspace(0.0, 0.1, 10), [50.0]])
        data = Dataset.from_arrays(
            {"outcome": np.arange(11.0), "treatment": [0.0, 1.0] * 5 + [1.0], "covariate_1": x},
            {"outcome": "outcome", "treatment": "treatment", "covariate_1": "covariate_1"},
        )
        partition = FoldPartition.from_assignment([1, 2] * 5 + [1])
        kernel = KernelConfig(order=2, bandwidth_constant=0.01, bandwidth_exponent=0.2)
        with pytest.raises(NuisanceFitError) as info:
            crossfit_nuisance(data, catalog_model("PLM"), partition, kernel)
        assert info.value.fold == 1
        assert info.value.component == 1
        assert info.value.row == 10

    def test_propensity_floor_counts_rows(self) -> None:
        rng = np.random.default_rng(2)
        x = rng.uniform(0.0, 1.0, 200)
        a = (x > 0.5).astype(float)
        data = Dataset.from_arrays(
            {"outcome": rng.standard_normal(200), "treatment": a, "covariate_1": x},
            {"outcome": "outcome", "treatment": "treatment", "covariate_1": "covariate_1"},
        )
        kernel = KernelConfig(
            order=2, bandwidth_constant=0.25, bandwidth_exponent=0.2, propensity_floor=0.01
        )
        partition = partition_folds(200, 2, seed=0)
        model = catalog_model("ATT")
        evaluations = crossfit_nuisance(data, model, partition, kernel)
        assert evaluations.flag_count > 0
        assert evaluations.flagged_rows <= evaluations.flag_count
        assert np.isfinite(evaluations.eta_hat).all()


class TestExport:
    def test_write_eta_csv(self, tmp_path: Path, selection_data: Dataset) -> None:
        partition = partition_folds(selection_data.n_rows, 2, seed=1)
        evaluations = crossfit_nuisance(selection_data, catalog_model("ATT"), partition, ORACLE)
        path = write_eta_csv(evaluations, tmp_path / "eta.csv")

        frame = pd.read_csv(path)
        assert list(frame.columns) == ["eta_1", "eta_2", "fold_id"]
        assert set(frame["fold_id"]) == {1, 2}
