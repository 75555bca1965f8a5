"""Data-generating processes with closed-form nuisance truths.

Each generator returns a ``Dataset`` whose column names equal their roles, including the true
nuisance values ``truth_eta_j`` in the order the catalog model lists its components and the
target ``truth_theta``. The same (n, seed) always produces the same rows.

Two designs drive the Monte Carlo lab: ``ATT_DID`` (discrepancy Lambda = 0) and ``LATE``
(Lambda != 0). The selection-on-observables and partially linear generators only back the
catalog checks.
"""
import functools
import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel
from scipy.special import expit, ndtr
from scipy.stats import poisson

from src.core.dataset import (
    ROLE_INSTRUMENT,
    ROLE_OUTCOME,
    ROLE_OUTCOME_PRE,
    ROLE_TREATMENT,
    ROLE_TRUTH_THETA,
    Dataset,
    covariate_role,
    truth_eta_role,
)
from src.core.moments import catalog_model
from src.theory.lambdas import moment_ratios
from src.utils.config import get_config
from src.utils.rng import make_rng

logger = logging.getLogger(__name__)

DataGenerator = Callable[[int, int], Dataset]
SelectionEstimand = Literal["ATE", "WATE", "ATT"]

DESIGN_CONSTANT_SEED = 20_240_601
_UNIT_OPEN = 2.0**-53


class SimulationError(Exception):
    """Base exception for the Monte Carlo lab."""

    pass


class UnknownDesignError(SimulationError, ValueError):
    """Raised for a design name outside the registry."""

    pass


def _open_uniform(rng: np.random.Generator, size: int) -> NDArray[np.float64]:
    """Uniform draws on the open interval (0, 1); inversion needs both ends excluded."""
    return (rng.integers(0, 2**53, size=size).astype(np.float64) + 0.5) * _UNIT_OPEN


def _poisson_inverse(u: NDArray[np.float64], mu: NDArray[np.float64] | float) -> NDArray[np.float64]:
    return np.asarray(poisson.ppf(u, mu), dtype=np.float64)


def _build(
    n: int,
    covariates: NDArray[np.float64],
    observed: dict[str, NDArray[np.float64]],
    truth: NDArray[np.float64],
    theta0: float,
) -> Dataset:
    columns: dict[str, NDArray[np.float64]] = dict(observed)
    for j in range(covariates.shape[1]):
        columns[covariate_role(j + 1)] = covariates[:, j]
    for j in range(truth.shape[1]):
        columns[truth_eta_role(j + 1)] = truth[:, j]
    columns[ROLE_TRUTH_THETA] = np.full(n, theta0)
    return Dataset.from_arrays(columns, {name: name for name in columns})


def _check_n(n: int) -> None:
    if n < 2:
        raise SimulationError(f"Sample size must be at least 2, got n={n}")


# --- ATT under parallel trends -------------------------------------------------


def att_did_regression(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """f_reg(X) = 210 + 6.85 X1 + 3.425 (X2 + X3 + X4)."""
    x = np.atleast_2d(x)
    return 210.0 + 6.85 * x[:, 0] + 3.425 * (x[:, 1] + x[:, 2] + x[:, 3])


def att_did_propensity(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """P(A = 1 | X), logistic in 0.25 (-X1 + 0.5 X2 - 0.25 X3 - 0.1 X4)."""
    x = np.atleast_2d(x)
    return expit(0.25 * (-x[:, 0] + 0.5 * x[:, 1] - 0.25 * x[:, 2] - 0.1 * x[:, 3]))


def att_did_truth(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """(E[Y1 - Y0 | X, A = 0], 1 / P(A = 0 | X))."""
    return np.column_stack([att_did_regression(x), 1.0 / (1.0 - att_did_propensity(x))])


def gen_att_did(n: int, seed: int) -> Dataset:
    """Two-period panel with a logistic treatment and outcome trend f_reg(X).

    The post-period effect is pure noise, so the ATT is 0.
    """
    _check_n(n)
    rng = make_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, 4))
    a = (rng.uniform(0.0, 1.0, size=n) < att_did_propensity(x)).astype(np.float64)
    # eps_0, eps_1(0), eps_1(1), eps_v
    eps = rng.standard_normal(size=(n, 4))

    f_reg = att_did_regression(x)
    v = a * f_reg + eps[:, 3]
    y_pre = f_reg + v + eps[:, 0]
    y_post = 2.0 * f_reg + v + np.where(a == 1.0, eps[:, 2], eps[:, 1])
    return _build(
        n,
        x,
        {ROLE_OUTCOME: y_post, ROLE_OUTCOME_PRE: y_pre, ROLE_TREATMENT: a},
        att_did_truth(x),
        0.0,
    )


# --- LATE with a binary instrument -------------------------------------------------


def late_truth(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """The six LATE nuisance components at covariate values x.

    E[Y | X, Z = z] is the same for both z because compliers draw Y(1) and Y(0) from one
    Poisson law.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    outcome = late_outcome_mean(x)
    p_instrument = ndtr(x - 0.5)
    return np.column_stack(
        [
            outcome,
            outcome,
            ndtr(x + 0.5),
            ndtr(x - 0.5),
            1.0 / p_instrument,
            1.0 / (1.0 - p_instrument),
        ]
    )


def late_outcome_mean(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """E[Y | X = x]; with f(x) = 1 on [0, 1] this is the truth of a cond_mean(outcome) fit."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    # always-takers add Poisson(2), never-takers Poisson(1)
    return np.exp(x / 2.0) + 2.0 * ndtr(x - 0.5) + 1.0 - ndtr(x + 0.5)


def gen_late(n: int, seed: int) -> Dataset:
    """Threshold-crossing treatment with a randomized instrument and Poisson outcomes.

    The complier effect is xi_1 - xi_2 with equal means, so the LATE is 0.
    """
    _check_n(n)
    rng = make_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n)
    v = rng.standard_normal(size=n)
    z = (rng.uniform(0.0, 1.0, size=n) < ndtr(x - 0.5)).astype(np.float64)
    u = _open_uniform(rng, 4 * n).reshape(4, n)
    mean = np.exp(x / 2.0)
    xi1 = _poisson_inverse(u[0], mean)
    xi2 = _poisson_inverse(u[1], mean)
    xi3 = _poisson_inverse(u[2], 2.0)
    xi4 = _poisson_inverse(u[3], 1.0)

    d1 = (x + 0.5 >= v).astype(np.float64)
    d0 = (x - 0.5 >= v).astype(np.float64)
    always = d1 * d0
    never = (1.0 - d1) * (1.0 - d0)
    y1 = xi1 + xi3 * always + xi4 * never
    y0 = xi2 + xi3 * always + xi4 * never
    d = z * d1 + (1.0 - z) * d0
    y = d * y1 + (1.0 - d) * y0
    return _build(
        n,
        x.reshape(-1, 1),
        {ROLE_OUTCOME: y, ROLE_TREATMENT: d, ROLE_INSTRUMENT: z},
        late_truth(x),
        0.0,
    )


# --- catalog check designs ---------------------------------------------------------

_SELECTION_THETA = {"ATE": 1.5, "WATE": 5.0 / 3.0, "ATT": 19.0 / 12.0}


def _share(x: NDArray[np.float64]) -> NDArray[np.float64]:
    return 0.25 + 0.5 * x


def gen_selection(n: int, seed: int, estimand: SelectionEstimand = "ATE") -> Dataset:
    """Selection on one uniform covariate: P(A=1|X) = 0.25 + 0.5X, Y(0) = X + e, effect 1 + X.

    Truth columns follow the component order of the ATE, WATE (weight X) or ATT model.
    """
    _check_n(n)
    if estimand not in _SELECTION_THETA:
        raise UnknownDesignError(f"Selection design covers ATE, WATE and ATT, got {estimand}")
    rng = make_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n)
    pi = _share(x)
    a = (rng.uniform(0.0, 1.0, size=n) < pi).astype(np.float64)
    y = x + a * (1.0 + x) + rng.standard_normal(size=n)

    if estimand == "ATT":
        truth = np.column_stack([x, 1.0 / (1.0 - pi)])
    else:
        truth = np.column_stack([1.0 + 2.0 * x, x, 1.0 / pi, 1.0 / (1.0 - pi)])
    return _build(
        n,
        x.reshape(-1, 1),
        {ROLE_OUTCOME: y, ROLE_TREATMENT: a},
        truth,
        _SELECTION_THETA[estimand],
    )


def gen_plm(n: int, seed: int) -> Dataset:
    """Y = D + X^2 + e with binary D, P(D=1|X) = 0.25 + 0.5X; theta = 1."""
    _check_n(n)
    rng = make_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n)
    pi = _share(x)
    d = (rng.uniform(0.0, 1.0, size=n) < pi).astype(np.float64)
    y = d + x**2 + rng.standard_normal(size=n)
    truth = np.column_stack([pi + x**2, pi])
    return _build(n, x.reshape(-1, 1), {ROLE_OUTCOME: y, ROLE_TREATMENT: d}, truth, 1.0)


def gen_plm_iv(n: int, seed: int) -> Dataset:
    """Endogenous binary D = 1{V <= Z + X - 0.5}, Y = D + X^2 + 0.5V + e; theta = 1."""
    _check_n(n)
    rng = make_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n)
    pi = _share(x)
    z = (rng.uniform(0.0, 1.0, size=n) < pi).astype(np.float64)
    v = rng.standard_normal(size=n)
    d = (v <= -0.5 + z + x).astype(np.float64)
    y = d + x**2 + 0.5 * v + rng.standard_normal(size=n)
    treatment_mean = pi * ndtr(x + 0.5) + (1.0 - pi) * ndtr(x - 0.5)
    truth = np.column_stack([treatment_mean + x**2, treatment_mean, pi])
    return _build(
        n,
        x.reshape(-1, 1),
        {ROLE_OUTCOME: y, ROLE_TREATMENT: d, ROLE_INSTRUMENT: z},
        truth,
        1.0,
    )


# --- registry ------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignSpec:
    """A Monte Carlo design and its default smoothing setup."""

    name: str
    model_id: str
    generator: DataGenerator
    theta0: float
    kernel_order: int
    bandwidth_constant: float
    bandwidth_exponent: float


DESIGNS: dict[str, DesignSpec] = {
    "ATT_DID": DesignSpec("ATT_DID", "ATT_DID", gen_att_did, 0.0, 6, 0.62, 1.0 / 16.0),
    "LATE": DesignSpec("LATE", "LATE", gen_late, 0.0, 2, 0.53, 0.2),
}


def design_key(name: str) -> str:
    """Normalize 'att-did' / 'late' style names to registry keys."""
    key = name.strip().upper().replace("-", "_")
    if key not in DESIGNS:
        raise UnknownDesignError(f"Unknown design '{name}'. Known: {', '.join(DESIGNS)}")
    return key


def get_design(name: str) -> DesignSpec:
    return DESIGNS[design_key(name)]


class DesignConstants(BaseModel):
    """Design-true sigma2, Lambda and Lambda1 from one large draw at the true nuisances."""

    design: str
    draws: int
    seed: int
    sigma2: float
    Lambda: float
    Lambda1: float


@functools.lru_cache(maxsize=16)
def _design_constants(key: str, draws: int, seed: int) -> DesignConstants:
    spec = DESIGNS[key]
    dataset = spec.generator(draws, seed)
    model = catalog_model(spec.model_id)
    ratios = moment_ratios(dataset, model, dataset.truth_eta(model.p), spec.theta0)
    constants = DesignConstants(
        design=key,
        draws=draws,
        seed=seed,
        sigma2=ratios.sigma2,
        Lambda=ratios.Lambda,
        Lambda1=ratios.lambda1,
    )
    logger.info(
        f"{key} constants from {draws} draws: sigma2={constants.sigma2:.6g}, "
        f"Lambda={constants.Lambda:.6g}, Lambda1={constants.Lambda1:.6g}"
    )
    return constants


def design_constants(
    name: str, draws: Optional[int] = None, seed: int = DESIGN_CONSTANT_SEED
) -> DesignConstants:
    """Constants of a design, computed once per (name, draws, seed).

    Args:
        name: Design name
        draws: Draw size; defaults to ``Config.truth_draws``
        seed: Seed of the draw
    """
    size = draws if draws is not None else get_config().truth_draws
    return _design_constants(design_key(name), int(size), int(seed))
