"""Pytest configuration and shared fixtures."""
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from src.core.dataset import Dataset
from src.simulation.designs import gen_late, gen_selection
from src.utils.config import reset_config


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--runslow", action="store_true", default=False, help="Run slow Monte Carlo checks"
    )


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def fresh_config(monkeypatch: pytest.MonkeyPatch) -> Generator[None, None, None]:
    """Each test sees a config built from its own environment."""
    for name in (
        "DMLWB_THREADS",
        "DMLWB_LOG_LEVEL",
        "DMLWB_LOG_FILE",
        "DMLWB_RESULTS_DIR",
        "DMLWB_TRUTH_DRAWS",
    ):
        monkeypatch.delenv(name, raising=False)
    reset_config()
    yield
    reset_config()


@pytest.fixture
def tiny_ate() -> Dataset:
    """Four rows, two treated, with hand-checkable values."""
    return Dataset.from_arrays(
        {
            "y": [1.0, 3.0, 2.0, 4.0],
            "a": [1.0, 1.0, 0.0, 0.0],
            "x": [0.1, 0.4, 0.6, 0.9],
        },
        {"outcome": "y", "treatment": "a", "covariate_1": "x"},
    )


@pytest.fixture(scope="session")
def selection_data() -> Dataset:
    return gen_selection(600, seed=11)


@pytest.fixture(scope="session")
def late_data() -> Dataset:
    return gen_late(400, seed=5)


@pytest.fixture
def selection_csv(tmp_path: Path, selection_data: Dataset) -> Path:
    path = tmp_path / "selection.csv"
    selection_data.to_frame().to_csv(path, index=False, float_format="%.17g")
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
