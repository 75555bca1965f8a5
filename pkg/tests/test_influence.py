"""Tests for the first-order linearization of Nadaraya-Watson fits."""
import numpy as np
import pytest

from src.core.moments import cond_mean, group_cond_mean, inv_group_prob
from src.simulation.designs import gen_late, late_outcome_mean
from src.smoothing.influence import NuisanceTruth, influence_terms
from src.smoothing.kernels import DensitySupportError, KernelConfig
from src.smoothing.nadaraya_watson import nw_fit

LATE_KERNEL = KernelConfig(order=2, bandwidth_constant=0.53, bandwidth_exponent=0.2)


def _uniform_density(x: np.ndarray) -> np.ndarray:
    return np.ones(np.asarray(x).reshape(-1, 1).shape[0])


def _outcome_truth() -> NuisanceTruth:
    return NuisanceTruth(density=_uniform_density, eta0=late_outcome_mean)


class TestRates:
    def test_rates_from_bandwidth_rule(self) -> None:
        terms = influence_terms(cond_mean("outcome"), LATE_KERNEL, 1000, 1, _outcome_truth())
        assert terms.rates == pytest.approx((0.4, 0.4))
        assert terms.kernel.bandwidth == pytest.approx(0.53 * 1000 ** (-0.2))


class TestTermShapes:
    def test_noise_free_response_has_no_variance_term(self) -> None:
        x = np.linspace(0.0, 1.0, 50).reshape(-1, 1)
        block = {"outcome": late_outcome_mean(x), "covariate_1": x[:, 0]}
        terms = influence_terms(cond_mean("outcome"), LATE_KERNEL, 50, 1, _outcome_truth())
        delta = terms.delta(block, x, np.array([[0.3], [0.6]]))
        assert delta.shape == (50, 2)
        np.testing.assert_allclose(delta, 0.0, atol=1e-15)

    def test_self_point_has_no_bias_contribution(self) -> None:
        point = np.array([[0.4]])
        terms = influence_terms(cond_mean("outcome"), LATE_KERNEL, 100, 1, _outcome_truth())
        bias = terms.bias_b({"outcome": np.array([1.0])}, point, point)
        assert bias[0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_non_positive_density(self) -> None:
        truth = NuisanceTruth(density=lambda x: np.zeros(len(x)), eta0=late_outcome_mean)
        terms = influence_terms(cond_mean("outcome"), LATE_KERNEL, 100, 1, truth)
        with pytest.raises(DensitySupportError):
            terms.delta({"outcome": np.array([1.0])}, np.array([[0.5]]), np.array([[0.5]]))

    def test_group_terms_need_group_truth(self) -> None:
        terms = influence_terms(
            group_cond_mean("outcome", "instrument", 1), LATE_KERNEL, 100, 1, _outcome_truth()
        )
        with pytest.raises(ValueError, match="truth.g2"):
            terms.delta(
                {"outcome": np.array([1.0]), "instrument": np.array([1.0])},
                np.array([[0.5]]),
                np.array([[0.5]]),
            )

    def test_delta_has_mean_zero_given_x(self, rng: np.random.Generator) -> None:
        # inverse propensity of Z = 1 with P(Z = 1 | X) = 0.4 everywhere
        truth = NuisanceTruth(
            density=_uniform_density,
            eta0=lambda x: np.full(np.asarray(x).reshape(-1, 1).shape[0], 2.5),
            g2=lambda x: np.full(np.asarray(x).reshape(-1, 1).shape[0], 0.4),
        )
        terms = influence_terms(inv_group_prob("instrument", 1), LATE_KERNEL, 500, 1, truth)
        draws = 20_000
        x = np.full((draws, 1), 0.45)
        z = (rng.uniform(size=draws) < 0.4).astype(float)
        delta = terms.delta({"instrument": z}, x, np.array([[0.5]]))[:, 0]
        se = delta.std(ddof=1) / np.sqrt(draws)
        assert abs(delta.mean()) < 4.0 * se


class TestLinearization:
    def test_first_order_expansion_tracks_the_fit(self) -> None:
        n0 = 2000
        data = gen_late(n0, seed=17)
        x_eval = np.linspace(0.2, 0.8, 20).reshape(-1, 1)
        spec = cond_mean("outcome")

        fit = nw_fit(spec, data, np.arange(n0), LATE_KERNEL.spec_for(n0, 1))
        error = fit(x_eval) - late_outcome_mean(x_eval)

        terms = influence_terms(spec, LATE_KERNEL, n0, 1, _outcome_truth())
        variance, bias = terms.expansion(data.role_block(), data.covariates(), x_eval)
        linear = variance + bias

        gap = np.mean(np.abs(error - linear))
        assert gap <= 0.25 * np.mean(np.abs(linear))

    def test_error_shrinks_with_sample_size(self) -> None:
        grid = np.linspace(0.2, 0.8, 20).reshape(-1, 1)
        spec = cond_mean("outcome")

        def rmse(n0: int, seed: int) -> float:
            data = gen_late(n0, seed=seed)
            fit = nw_fit(spec, data, np.arange(n0), LATE_KERNEL.spec_for(n0, 1))
            return float(np.sqrt(np.mean((fit(grid) - late_outcome_mean(grid)) ** 2)))

        small = np.mean([rmse(500, seed) for seed in range(20)])
        large = np.mean([rmse(5000, seed) for seed in range(20)])
        assert large < small


class TestBiasNormalization:
    @pytest.mark.parametrize("constant", [0.3, 0.9])
    def test_bias_is_scaled_by_n0_to_phi2(self, constant: float) -> None:
        n0 = 800
        kernel = KernelConfig(order=2, bandwidth_constant=constant, bandwidth_exponent=0.2)
        terms = influence_terms(cond_mean("outcome"), kernel, n0, 1, _outcome_truth())
        x_obs = np.linspace(0.0, 1.0, 30).reshape(-1, 1)
        x_eval = np.array([[0.25], [0.7]])

        gap = late_outcome_mean(x_obs)[:, None] - late_outcome_mean(x_eval)[None, :]
        unscaled = gap * terms.kernel.weights(x_eval, x_obs).T
        bias = terms.bias_b({"outcome": np.zeros(30)}, x_obs, x_eval)

        h = terms.kernel.bandwidth
        np.testing.assert_allclose(bias, n0**terms.phi2 * unscaled, rtol=1e-10)
        np.testing.assert_allclose(bias, constant**2 * h**-2 * unscaled, rtol=1e-10)

    def test_group_mean_bias_is_divided_by_group_share(self) -> None:
        n0 = 500

        def share(x: np.ndarray) -> np.ndarray:
            return 0.4 + 0.2 * np.asarray(x).reshape(-1)

        truth = NuisanceTruth(
            density=_uniform_density,
            eta0=lambda x: np.asarray(x).reshape(-1),
            g1=lambda x: np.asarray(x).reshape(-1) * share(x),
            g2=share,
        )
        spec = group_cond_mean("outcome", "instrument", 1)
        terms = influence_terms(spec, LATE_KERNEL, n0, 1, truth)
        x_obs = np.linspace(0.0, 1.0, 25).reshape(-1, 1)
        x_eval = np.array([[0.2], [0.5], [0.9]])

        xo, xe = x_obs[:, 0][:, None], x_eval[:, 0][None, :]
        g1_gap = xo * share(xo).reshape(-1, 1) - xe * share(xe).reshape(1, -1)
        g2_gap = share(xo).reshape(-1, 1) - share(xe).reshape(1, -1)
        weights = terms.kernel.weights(x_eval, x_obs).T
        expected = n0**terms.phi2 * (g1_gap - xe * g2_gap) * weights / share(xe).reshape(1, -1)

        block = {"outcome": np.zeros(25), "instrument": np.ones(25)}
        np.testing.assert_allclose(terms.bias_b(block, x_obs, x_eval), expected, rtol=1e-10)
