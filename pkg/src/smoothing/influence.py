"""First-order influence terms of a Nadaraya-Watson nuisance fit.

With h = C_h * n0^(-phi0) the fit linearizes as

    eta_hat(x) - eta0(x) ~ n0^(-1/2) sum_l n0^(-phi1) delta(W_l, x)
                         + n0^(-1)   sum_l n0^(-phi2) b(W_l, x)

where phi1 = (1 - d_x phi0) / 2 and phi2 = s phi0. ``delta`` is the mean-zero stochastic part
and ``b`` the smoothing-bias part. ``b`` is normalized by n0^phi2 = C_h^s h^-s so that the two
sums above recombine into the exact linear part of the ratio estimator for any C_h. For
group_cond_mean both terms are also divided by P(G = 1 | X = x), the limit of the normalized
group denominator.
"""
import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from src.core.moments import NuisanceComponentSpec, NuisanceKind
from src.smoothing.kernels import DensitySupportError, KernelConfig, KernelSpec
from src.theory.rates import nw_rates

logger = logging.getLogger(__name__)

CovariateFunction = Callable[[NDArray[np.float64]], NDArray[np.float64]]


@dataclass(frozen=True)
class NuisanceTruth:
    """Population objects behind one nuisance component.

    Attributes:
        density: f(x), covariate density
        eta0: True component eta0(x)
        g1: E[response * G | X = x] (group_cond_mean)
        g2: P(G = 1 | X = x) (group_cond_mean, inv_group_prob)
    """

    density: CovariateFunction
    eta0: CovariateFunction
    g1: Optional[CovariateFunction] = None
    g2: Optional[CovariateFunction] = None


@dataclass(frozen=True, eq=False)
class InfluenceTerms:
    """delta_n and b_n for one component, with their rates."""

    spec: NuisanceComponentSpec
    kernel: KernelSpec
    bandwidth_constant: float
    n0: int
    truth: NuisanceTruth
    phi1: float
    phi2: float

    @property
    def rates(self) -> tuple[float, float]:
        return self.phi1, self.phi2

    def _common(
        self, x_obs: NDArray[np.float64], x_eval: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
        d = self.kernel.d_x
        x_obs = np.asarray(x_obs, dtype=np.float64).reshape(-1, d)
        x_eval = np.asarray(x_eval, dtype=np.float64).reshape(-1, d)
        f = np.asarray(self.truth.density(x_eval), dtype=np.float64)
        bad = np.flatnonzero(f <= 0.0)
        if bad.size:
            raise DensitySupportError(
                f"Covariate density is not positive at x={x_eval[bad[0]].tolist()}"
            )
        # (n_obs, m) kernel matrix divided by f(x)
        k_over_f = self.kernel.weights(x_eval, x_obs).T / f[None, :]
        return x_obs, x_eval, k_over_f

    def _group(self, block: Mapping[str, NDArray[np.float64]]) -> NDArray[np.float64]:
        return self.spec.group_indicator(block)

    def _group_share(self, x_eval: NDArray[np.float64]) -> NDArray[np.float64]:
        """P(G = 1 | X = x); the group_cond_mean denominator converges to f(x) times this."""
        share = np.asarray(self._need(self.truth.g2, "g2")(x_eval), dtype=np.float64)
        bad = np.flatnonzero(share <= 0.0)
        if bad.size:
            raise DensitySupportError(
                f"Group probability is not positive at x={np.asarray(x_eval)[bad[0]].tolist()}"
            )
        return share

    def _need(self, fn: Optional[CovariateFunction], name: str) -> CovariateFunction:
        if fn is None:
            raise ValueError(f"{self.spec.kind.value} influence terms need truth.{name}")
        return fn

    def delta(
        self,
        block: Mapping[str, NDArray[np.float64]],
        x_obs: NDArray[np.float64],
        x_eval: NDArray[np.float64],
    ) -> NDArray[np.float64]:
        """delta_n(W_l, x_i) as an (n_obs, m) matrix.

        Scaled by C_h^(-d_x/2) h^(d_x/2) = n0^(phi1 - 1/2).

        Args:
            block: Role -> vector for the observations W_l
            x_obs: Their covariates (n_obs, d_x)
            x_eval: Evaluation points (m, d_x)
        """
        x_obs, x_eval, k_over_f = self._common(x_obs, x_eval)
        h, d = self.kernel.bandwidth, self.kernel.d_x
        scale = self.bandwidth_constant ** (-d / 2.0) * h ** (d / 2.0)
        eta_x = self.truth.eta0(x_eval)[None, :]
        kind = self.spec.kind

        if kind is NuisanceKind.COND_MEAN:
            assert self.spec.response is not None
            resid = self.spec.response.evaluate(block) - self.truth.eta0(x_obs)
            return scale * resid[:, None] * k_over_f
        g2 = self._need(self.truth.g2, "g2")(x_obs)
        group = self._group(block)
        if kind is NuisanceKind.GROUP_COND_MEAN:
            assert self.spec.response is not None
            g1 = self._need(self.truth.g1, "g1")(x_obs)
            y_g = self.spec.response.evaluate(block) * group
            inner = (y_g - g1)[:, None] - eta_x * (group - g2)[:, None]
            return scale * inner * k_over_f / self._group_share(x_eval)[None, :]
        return -scale * eta_x**2 * (group - g2)[:, None] * k_over_f

    def bias_b(
        self,
        block: Mapping[str, NDArray[np.float64]],
        x_obs: NDArray[np.float64],
        x_eval: NDArray[np.float64],
    ) -> NDArray[np.float64]:
        """b_n(W_l, x_i) as an (n_obs, m) matrix.

        Scaled by n0^phi2 = C_h^s h^-s, not by h^-s alone, so the bias sum in the expansion is
        free of the bandwidth constant. group_cond_mean terms are divided by P(G = 1 | X = x);
        inv_group_prob terms carry -eta0(x)^2 instead.
        """
        x_obs, x_eval, k_over_f = self._common(x_obs, x_eval)
        scale = float(self.n0) ** self.phi2
        kind = self.spec.kind
        eta_x = self.truth.eta0(x_eval)[None, :]

        if kind is NuisanceKind.COND_MEAN:
            gap = self.truth.eta0(x_obs)[:, None] - eta_x
            return scale * gap * k_over_f
        g2 = self._need(self.truth.g2, "g2")
        g2_gap = g2(x_obs)[:, None] - g2(x_eval)[None, :]
        if kind is NuisanceKind.GROUP_COND_MEAN:
            g1 = self._need(self.truth.g1, "g1")
            g1_gap = g1(x_obs)[:, None] - g1(x_eval)[None, :]
            share = self._group_share(x_eval)[None, :]
            return scale * (g1_gap - eta_x * g2_gap) * k_over_f / share
        return -scale * eta_x**2 * g2_gap * k_over_f

    def expansion(
        self,
        block: Mapping[str, NDArray[np.float64]],
        x_obs: NDArray[np.float64],
        x_eval: NDArray[np.float64],
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """(variance term, bias term) of the linearization at each evaluation point."""
        n0 = float(self.n0)
        variance = n0 ** (-0.5 - self.phi1) * np.sum(self.delta(block, x_obs, x_eval), axis=0)
        bias = n0 ** (-1.0 - self.phi2) * np.sum(self.bias_b(block, x_obs, x_eval), axis=0)
        return variance, bias


def influence_terms(
    spec: NuisanceComponentSpec,
    kernel: KernelConfig,
    n0: int,
    d_x: int,
    truth: NuisanceTruth,
) -> InfluenceTerms:
    """Build delta_n and b_n for a component fitted on n0 rows.

    Args:
        spec: Component definition
        kernel: Order and bandwidth rule h = C_h * n0^(-phi0)
        n0: Training size
        d_x: Covariate dimension
        truth: Density and true regressions of the design
    """
    phi1, phi2, _ = nw_rates(d_x, kernel.order, kernel.bandwidth_exponent)
    return InfluenceTerms(
        spec=spec,
        kernel=kernel.spec_for(n0, d_x),
        bandwidth_constant=kernel.bandwidth_constant,
        n0=n0,
        truth=truth,
        phi1=phi1,
        phi2=phi2,
    )
