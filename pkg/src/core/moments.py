"""Linear-in-theta moment functions and the estimand catalog.

Every estimand here solves E[psi_b(W, eta0(X)) - psi_a(W, eta0(X)) * theta] = 0. A model carries
the two psi functions plus one ``NuisanceComponentSpec`` per nuisance component, which tells the
cross-fitting engine what to smooth.

psi functions take an observation block (role -> value, either scalars for one row or vectors for
many rows) and an eta array whose last axis has length p, so the same code serves single rows
and whole folds.
"""
import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Union

import numpy as np
from numpy.typing import NDArray

from src.core.dataset import (
    ROLE_INSTRUMENT,
    ROLE_OUTCOME,
    ROLE_OUTCOME_PRE,
    ROLE_TREATMENT,
    covariate_role,
)
from src.utils.rng import make_rng

logger = logging.getLogger(__name__)

ArrayOrFloat = Union[float, NDArray[np.float64]]
ObservationBlock = Mapping[str, ArrayOrFloat]
PsiFunction = Callable[[ObservationBlock, NDArray[np.float64]], NDArray[np.float64]]
WeightFunction = Callable[[NDArray[np.float64]], NDArray[np.float64]]

CATALOG_IDS = ("ATE", "ATT_DID", "LATE", "WATE", "ATT", "PLM", "PLM_IV")


class MomentModelError(Exception):
    """Base exception for moment model errors."""

    pass


class UnknownModelError(MomentModelError):
    """Raised when a catalog id is not known."""

    pass


class ArityError(MomentModelError):
    """Raised when an eta vector does not have p components."""

    pass


class DegenerateWeightError(MomentModelError):
    """Raised when the WATE weight has non-positive mean."""

    pass


class NuisanceKind(str, Enum):
    """The three nuisance targets a Nadaraya-Watson fit can produce."""

    COND_MEAN = "cond_mean"
    GROUP_COND_MEAN = "group_cond_mean"
    INV_GROUP_PROB = "inv_group_prob"


@dataclass(frozen=True)
class ResponseExpr:
    """Signed sum of role columns, e.g. ``outcome - outcome_pre``."""

    terms: tuple[tuple[int, str], ...]

    @classmethod
    def parse(cls, text: str) -> "ResponseExpr":
        """Parse ``role``, ``role + role`` or ``role - role`` chains."""
        tokens = text.replace("+", " + ").replace("-", " - ").split()
        # role names never contain '-' or '+', so splitting on them is safe
        terms: list[tuple[int, str]] = []
        sign = 1
        expect_role = True
        for token in tokens:
            if token in {"+", "-"}:
                if expect_role and terms:
                    raise MomentModelError(f"Malformed response expression: {text!r}")
                sign = 1 if token == "+" else -1
                expect_role = True
                continue
            if not expect_role:
                raise MomentModelError(f"Malformed response expression: {text!r}")
            terms.append((sign, token))
            sign = 1
            expect_role = False
        if not terms or expect_role:
            raise MomentModelError(f"Malformed response expression: {text!r}")
        return cls(tuple(terms))

    @property
    def roles(self) -> tuple[str, ...]:
        return tuple(role for _, role in self.terms)

    def evaluate(self, block: ObservationBlock) -> NDArray[np.float64]:
        total: Any = 0.0
        for sign, role in self.terms:
            total = total + sign * np.asarray(block[role], dtype=np.float64)
        return np.asarray(total, dtype=np.float64)

    def __str__(self) -> str:
        parts = []
        for i, (sign, role) in enumerate(self.terms):
            if i == 0:
                parts.append(role if sign > 0 else f"-{role}")
            else:
                parts.append(f"{'+' if sign > 0 else '-'} {role}")
        return " ".join(parts)


@dataclass(frozen=True)
class NuisanceComponentSpec:
    """Definition of one nuisance component eta_j(x).

    cond_mean:        E[response | X = x]
    group_cond_mean:  E[response | X = x, group = value]
    inv_group_prob:   1 / P(group = value | X = x)
    """

    kind: NuisanceKind
    response: Optional[ResponseExpr] = None
    group_role: Optional[str] = None
    group_value: Optional[int] = None

    def __post_init__(self) -> None:
        has_group = self.group_role is not None
        if self.kind is NuisanceKind.COND_MEAN and has_group:
            raise MomentModelError("cond_mean components take no group indicator")
        if self.kind is not NuisanceKind.COND_MEAN:
            if not has_group or self.group_value not in (0, 1):
                raise MomentModelError(f"{self.kind.value} needs a group role and a 0/1 value")
        if self.kind is not NuisanceKind.INV_GROUP_PROB and self.response is None:
            raise MomentModelError(f"{self.kind.value} needs a response")

    @property
    def roles(self) -> tuple[str, ...]:
        roles = list(self.response.roles) if self.response is not None else []
        if self.group_role is not None:
            roles.append(self.group_role)
        return tuple(roles)

    def group_indicator(self, block: ObservationBlock) -> NDArray[np.float64]:
        """1{group_role == group_value} as floats."""
        assert self.group_role is not None
        values = np.asarray(block[self.group_role], dtype=np.float64)
        return (values == float(self.group_value)).astype(np.float64)

    def describe(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "response": str(self.response) if self.response is not None else None,
            "group": (
                f"{self.group_role}={self.group_value}" if self.group_role is not None else None
            ),
        }


def cond_mean(response: str) -> NuisanceComponentSpec:
    return NuisanceComponentSpec(NuisanceKind.COND_MEAN, ResponseExpr.parse(response))


def group_cond_mean(response: str, group_role: str, value: int) -> NuisanceComponentSpec:
    return NuisanceComponentSpec(
        NuisanceKind.GROUP_COND_MEAN, ResponseExpr.parse(response), group_role, value
    )


def inv_group_prob(group_role: str, value: int) -> NuisanceComponentSpec:
    return NuisanceComponentSpec(NuisanceKind.INV_GROUP_PROB, None, group_role, value)


@dataclass(frozen=True)
class MomentModel:
    """Moment function m(W, theta, eta) = psi_b(W, eta) - psi_a(W, eta) * theta.

    Attributes:
        id: Catalog id or ``custom``
        psi_a: Coefficient on theta
        psi_b: Intercept part
        nuisance_specs: One spec per nuisance component
        psi_roles: Roles the psi functions read directly
        psi_a_is_constant: psi_a is the same for every row and eta
        weight_function: WATE weight g(X) on the (n, d_x) covariate block
    """

    id: str
    psi_a: PsiFunction
    psi_b: PsiFunction
    nuisance_specs: tuple[NuisanceComponentSpec, ...]
    psi_roles: tuple[str, ...] = ()
    psi_a_is_constant: bool = False
    weight_function: Optional[WeightFunction] = None
    description: str = field(default="", compare=False)

    @property
    def p(self) -> int:
        """Nuisance arity."""
        return len(self.nuisance_specs)

    def required_roles(self) -> list[str]:
        """Every role the psi functions and nuisance specs touch, in first-use order."""
        roles = list(self.psi_roles)
        for spec in self.nuisance_specs:
            roles.extend(spec.roles)
        roles.append(covariate_role(1))
        return list(dict.fromkeys(roles))

    def _check_eta(self, eta: NDArray[np.float64]) -> NDArray[np.float64]:
        eta = np.asarray(eta, dtype=np.float64)
        if eta.ndim == 0 or eta.shape[-1] != self.p:
            raise ArityError(
                f"{self.id} expects eta with {self.p} components, got shape {eta.shape}"
            )
        return eta

    def psi(
        self, block: ObservationBlock, eta: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Evaluate (psi_a, psi_b) on a block of observations.

        Args:
            block: Role -> vector of length n
            eta: (n, p) nuisance matrix

        Returns:
            Two length-n vectors
        """
        eta = self._check_eta(eta)
        n = eta.shape[0] if eta.ndim == 2 else 1
        psi_a = np.broadcast_to(np.asarray(self.psi_a(block, eta), dtype=np.float64), (n,))
        psi_b = np.broadcast_to(np.asarray(self.psi_b(block, eta), dtype=np.float64), (n,))
        return np.array(psi_a), np.array(psi_b)

    def describe(self) -> dict[str, Any]:
        """JSON-ready metadata."""
        return {
            "id": self.id,
            "p": self.p,
            "psi_a_is_constant": self.psi_a_is_constant,
            "required_roles": self.required_roles(),
            "nuisance": [spec.describe() for spec in self.nuisance_specs],
            "description": self.description,
        }


def eval_moment(
    model: MomentModel, row: ObservationBlock, theta: float, eta: NDArray[np.float64]
) -> float:
    """m(row, theta, eta) for a single observation.

    Raises:
        ArityError: If ``eta`` does not have p entries
    """
    eta = np.asarray(eta, dtype=np.float64)
    if eta.ndim != 1:
        raise ArityError(f"eta for a single row must be 1-d, got shape {eta.shape}")
    psi_a, psi_b = model.psi(row, eta.reshape(1, -1))
    return float(psi_b[0] - psi_a[0] * theta)


def covariate_matrix(block: ObservationBlock) -> NDArray[np.float64]:
    """Stack covariate_1..covariate_d from a block into an (n, d) matrix."""
    columns = []
    j = 1
    while covariate_role(j) in block:
        columns.append(np.atleast_1d(np.asarray(block[covariate_role(j)], dtype=np.float64)))
        j += 1
    return np.column_stack(columns)


def _first_covariate(x: NDArray[np.float64]) -> NDArray[np.float64]:
    return x[:, 0]


# --- psi building blocks ---------------------------------------------------


def _aipw_contrast(block: ObservationBlock, eta: NDArray[np.float64], y: str, g: str) -> Any:
    """eta1 - eta2 + G(y - eta1) eta3 - (1 - G)(y - eta2) eta4 on the first four components."""
    yv = np.asarray(block[y], dtype=np.float64)
    gv = np.asarray(block[g], dtype=np.float64)
    e1, e2, e3, e4 = eta[..., 0], eta[..., 1], eta[..., 2], eta[..., 3]
    return e1 - e2 + gv * (yv - e1) * e3 - (1.0 - gv) * (yv - e2) * e4


def _ones(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    return np.ones_like(eta[..., 0])


def _ate_psi_b(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    return _aipw_contrast(block, eta, ROLE_OUTCOME, ROLE_TREATMENT)


def _treated_psi_a(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    return np.asarray(block[ROLE_TREATMENT], dtype=np.float64) + 0.0 * eta[..., 0]


def _treated_residual(a: Any, response: Any, eta: NDArray[np.float64]) -> Any:
    residual = response - eta[..., 0]
    return a * residual + (1.0 - a) * (1.0 - eta[..., 1]) * residual


def _att_did_psi_b(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    a = np.asarray(block[ROLE_TREATMENT], dtype=np.float64)
    delta_y = np.asarray(block[ROLE_OUTCOME], dtype=np.float64) - np.asarray(
        block[ROLE_OUTCOME_PRE], dtype=np.float64
    )
    return _treated_residual(a, delta_y, eta)


def _att_psi_b(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    a = np.asarray(block[ROLE_TREATMENT], dtype=np.float64)
    return _treated_residual(a, np.asarray(block[ROLE_OUTCOME], dtype=np.float64), eta)


def _late_psi_b(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    return _aipw_contrast(block, eta[..., [0, 1, 4, 5]], ROLE_OUTCOME, ROLE_INSTRUMENT)


def _late_psi_a(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    return _aipw_contrast(block, eta[..., [2, 3, 4, 5]], ROLE_TREATMENT, ROLE_INSTRUMENT)


def _plm_psi_a(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    return (np.asarray(block[ROLE_TREATMENT], dtype=np.float64) - eta[..., 1]) ** 2


def _plm_psi_b(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    y = np.asarray(block[ROLE_OUTCOME], dtype=np.float64)
    d = np.asarray(block[ROLE_TREATMENT], dtype=np.float64)
    return (y - eta[..., 0]) * (d - eta[..., 1])


def _plm_iv_psi_a(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    d = np.asarray(block[ROLE_TREATMENT], dtype=np.float64)
    z = np.asarray(block[ROLE_INSTRUMENT], dtype=np.float64)
    return (d - eta[..., 1]) * (z - eta[..., 2])


def _plm_iv_psi_b(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
    y = np.asarray(block[ROLE_OUTCOME], dtype=np.float64)
    z = np.asarray(block[ROLE_INSTRUMENT], dtype=np.float64)
    return (y - eta[..., 0]) * (z - eta[..., 2])


def _wate_functions(weight: WeightFunction) -> tuple[PsiFunction, PsiFunction]:
    def psi_a(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
        g = weight(covariate_matrix(block))
        return g + 0.0 * eta[..., 0]

    def psi_b(block: ObservationBlock, eta: NDArray[np.float64]) -> Any:
        g = weight(covariate_matrix(block))
        return g * _aipw_contrast(block, eta, ROLE_OUTCOME, ROLE_TREATMENT)

    return psi_a, psi_b


def _ate_specs() -> tuple[NuisanceComponentSpec, ...]:
    return (
        group_cond_mean(ROLE_OUTCOME, ROLE_TREATMENT, 1),
        group_cond_mean(ROLE_OUTCOME, ROLE_TREATMENT, 0),
        inv_group_prob(ROLE_TREATMENT, 1),
        inv_group_prob(ROLE_TREATMENT, 0),
    )


def catalog_model(model_id: str, weight_function: Optional[WeightFunction] = None) -> MomentModel:
    """Build a catalog model.

    Args:
        model_id: One of ATE, ATT_DID, LATE, WATE, ATT, PLM, PLM_IV (case-insensitive,
            '-' accepted for '_')
        weight_function: WATE only; g(X) on the (n, d_x) covariate block. Defaults to X_1.

    Raises:
        UnknownModelError: If the id is not in the catalog
    """
    key = model_id.strip().upper().replace("-", "_")
    if key == "ATE":
        return MomentModel(
            id="ATE",
            psi_a=_ones,
            psi_b=_ate_psi_b,
            nuisance_specs=_ate_specs(),
            psi_roles=(ROLE_OUTCOME, ROLE_TREATMENT),
            psi_a_is_constant=True,
            description="Average treatment effect, augmented inverse propensity weighting",
        )
    if key == "ATT_DID":
        return MomentModel(
            id="ATT_DID",
            psi_a=_treated_psi_a,
            psi_b=_att_did_psi_b,
            nuisance_specs=(
                group_cond_mean(f"{ROLE_OUTCOME} - {ROLE_OUTCOME_PRE}", ROLE_TREATMENT, 0),
                inv_group_prob(ROLE_TREATMENT, 0),
            ),
            psi_roles=(ROLE_OUTCOME, ROLE_OUTCOME_PRE, ROLE_TREATMENT),
            description="ATT under conditional parallel trends (two periods)",
        )
    if key == "LATE":
        return MomentModel(
            id="LATE",
            psi_a=_late_psi_a,
            psi_b=_late_psi_b,
            nuisance_specs=(
                group_cond_mean(ROLE_OUTCOME, ROLE_INSTRUMENT, 1),
                group_cond_mean(ROLE_OUTCOME, ROLE_INSTRUMENT, 0),
                group_cond_mean(ROLE_TREATMENT, ROLE_INSTRUMENT, 1),
                group_cond_mean(ROLE_TREATMENT, ROLE_INSTRUMENT, 0),
                inv_group_prob(ROLE_INSTRUMENT, 1),
                inv_group_prob(ROLE_INSTRUMENT, 0),
            ),
            psi_roles=(ROLE_OUTCOME, ROLE_TREATMENT, ROLE_INSTRUMENT),
            description="Local average treatment effect with a binary instrument",
        )
    if key == "WATE":
        psi_a, psi_b = _wate_functions(weight_function or _first_covariate)
        return MomentModel(
            id="WATE",
            psi_a=psi_a,
            psi_b=psi_b,
            nuisance_specs=_ate_specs(),
            psi_roles=(ROLE_OUTCOME, ROLE_TREATMENT),
            weight_function=weight_function or _first_covariate,
            description="Weighted average treatment effect with known weight g(X)",
        )
    if key == "ATT":
        return MomentModel(
            id="ATT",
            psi_a=_treated_psi_a,
            psi_b=_att_psi_b,
            nuisance_specs=(
                group_cond_mean(ROLE_OUTCOME, ROLE_TREATMENT, 0),
                inv_group_prob(ROLE_TREATMENT, 0),
            ),
            psi_roles=(ROLE_OUTCOME, ROLE_TREATMENT),
            description="Average treatment effect on the treated",
        )
    if key == "PLM":
        return MomentModel(
            id="PLM",
            psi_a=_plm_psi_a,
            psi_b=_plm_psi_b,
            nuisance_specs=(cond_mean(ROLE_OUTCOME), cond_mean(ROLE_TREATMENT)),
            psi_roles=(ROLE_OUTCOME, ROLE_TREATMENT),
            description="Partially linear model, residual-on-residual",
        )
    if key == "PLM_IV":
        return MomentModel(
            id="PLM_IV",
            psi_a=_plm_iv_psi_a,
            psi_b=_plm_iv_psi_b,
            nuisance_specs=(
                cond_mean(ROLE_OUTCOME),
                cond_mean(ROLE_TREATMENT),
                cond_mean(ROLE_INSTRUMENT),
            ),
            psi_roles=(ROLE_OUTCOME, ROLE_TREATMENT, ROLE_INSTRUMENT),
            description="Partially linear instrumental-variable model",
        )
    raise UnknownModelError(f"Unknown model '{model_id}'. Known: {', '.join(CATALOG_IDS)}")


def custom_model(
    psi_a: PsiFunction,
    psi_b: PsiFunction,
    nuisance_specs: tuple[NuisanceComponentSpec, ...],
    psi_roles: tuple[str, ...] = (),
    psi_a_is_constant: bool = False,
) -> MomentModel:
    """User-defined model; available through the library only."""
    return MomentModel(
        id="custom",
        psi_a=psi_a,
        psi_b=psi_b,
        nuisance_specs=nuisance_specs,
        psi_roles=psi_roles,
        psi_a_is_constant=psi_a_is_constant,
    )


def describe_catalog() -> list[dict[str, Any]]:
    """Metadata for every catalog model."""
    return [catalog_model(model_id).describe() for model_id in CATALOG_IDS]


def population_lambda_wate(
    model: MomentModel,
    eta01: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    eta02: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    sampler: Callable[[np.random.Generator, int], NDArray[np.float64]],
    theta0: float,
    n_draws: int = 200_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte Carlo value of Lambda = E[g(X)^2 (eta01 - eta02 - theta0)] / E[g(X)]^2.

    Args:
        model: WATE model; its weight function is g
        eta01: E[Y | X, A=1] on an (n, d) covariate matrix
        eta02: E[Y | X, A=0]
        sampler: Draws an (n, d) covariate matrix from a generator
        theta0: Target value
        n_draws: Monte Carlo size
        seed: Generator seed

    Returns:
        (estimate, standard error), the latter by the delta method for a ratio of means

    Raises:
        DegenerateWeightError: If the sample mean of g(X) is not positive
    """
    if model.id != "WATE" or model.weight_function is None:
        raise MomentModelError(f"population_lambda_wate needs a WATE model, got {model.id}")
    weight = model.weight_function
    x = np.asarray(sampler(make_rng(seed), n_draws), dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    g = np.asarray(weight(x), dtype=np.float64)
    g_bar = float(np.mean(g))
    if g_bar <= 0.0:
        raise DegenerateWeightError(f"E[g(X)] estimate is {g_bar:.6g}; weight must have positive mean")

    numerator = g**2 * (eta01(x) - eta02(x) - theta0)
    num_bar = float(np.mean(numerator))
    estimate = num_bar / g_bar**2

    # gradient of a / b^2 at the means: (1/b^2, -2a/b^3)
    grad = np.array([1.0 / g_bar**2, -2.0 * num_bar / g_bar**3])
    cov = np.cov(np.vstack([numerator, g]), ddof=1)
    se = float(np.sqrt(max(grad @ cov @ grad, 0.0) / n_draws))
    logger.debug(f"population Lambda (WATE) = {estimate:.6g} +/- {se:.2g}")
    return estimate, se
