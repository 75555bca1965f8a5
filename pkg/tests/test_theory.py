"""Tests for rate calculus, higher-order curves and fold advice."""
import numpy as np
import pytest
from pydantic import ValidationError

from src.theory import (
    GB_CAVEAT,
    TheoryDomainError,
    TheoryParams,
    UnusableRateError,
    admissible_phi0,
    advise_k,
    curve_table,
    curve_value,
    dml1_oracle_bias,
    ho_bias_leading,
    ho_variance_second_term,
    nw_rates,
    omega,
    omega_tilde,
    optimal_rate_exponent,
    oracle_ho_mse,
    relative_loss_bias,
    relative_loss_mse,
    relative_loss_mse_bound,
    so_mse,
)


class TestRates:
    def test_reference_rates(self) -> None:
        assert nw_rates(1, 2, 0.2) == pytest.approx((0.4, 0.4, 0.3))
        phi1, phi2, _ = nw_rates(4, 6, 1.0 / 16.0)
        assert phi1 == pytest.approx(0.375)
        assert phi2 == pytest.approx(0.375)

    def test_two_sevenths_maximizes_zeta(self) -> None:
        best = nw_rates(1, 2, 2.0 / 7.0)[2]
        assert best == pytest.approx(3.0 / 7.0)
        others = [p for p in np.linspace(0.2, 0.49, 20) if abs(p - 2.0 / 7.0) > 1e-3]
        assert len(others) == 20
        for phi0 in others:
            assert nw_rates(1, 2, phi0)[2] < 3.0 / 7.0

    def test_optimal_rate_exponent(self) -> None:
        assert optimal_rate_exponent(1, 2) == pytest.approx(2.0 / 7.0, abs=1e-6)

    def test_admissible_range(self) -> None:
        assert admissible_phi0(1, 2) == pytest.approx((0.2, 0.5))
        with pytest.raises(TheoryDomainError, match="too low"):
            admissible_phi0(4, 2)

    def test_unusable_rate(self) -> None:
        with pytest.raises(UnusableRateError):
            nw_rates(4, 2, 0.3)
        with pytest.raises(TheoryDomainError):
            nw_rates(1, 2, 0.0)


class TestTheoryParams:
    def test_rates_derived_from_bandwidth(self) -> None:
        params = TheoryParams(phi0=0.2, s=2, d_x=1)
        assert params.rates() == pytest.approx((0.4, 0.4))
        assert params.zeta == pytest.approx(0.3)

    def test_phi1_above_phi2_rejected(self) -> None:
        with pytest.raises(ValidationError, match="must not exceed"):
            TheoryParams(phi1=0.45, phi2=0.3)

    def test_positive_sigma2(self) -> None:
        with pytest.raises(ValidationError):
            TheoryParams(sigma2=0.0, phi1=0.4, phi2=0.4)

    def test_missing_rates(self) -> None:
        with pytest.raises(TheoryDomainError):
            TheoryParams().rates()

    def test_upsilon(self) -> None:
        assert TheoryParams(G_b=2.0, sigma2=4.0).upsilon == 0.5


class TestCurves:
    bias_params = TheoryParams(F_delta=1.0, phi1=0.4, phi2=0.4)
    var_params = TheoryParams(G_b=1.0, phi1=0.4, phi2=0.4)

    @pytest.mark.parametrize("K,expected", [(2, 0.219178), (10, 0.136963), (1000, 0.125993)])
    def test_ho_bias_anchors(self, K: int, expected: float) -> None:
        assert ho_bias_leading(self.bias_params, K, 1000) == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("K,expected", [(2, 0.154992), (1000, 0.125963)])
    def test_ho_variance_anchors(self, K: int, expected: float) -> None:
        assert ho_variance_second_term(self.var_params, K, 1000) == pytest.approx(expected, abs=1e-6)
        assert 1000 * so_mse(self.var_params, K, 1000) == pytest.approx(1.0 + expected, abs=1e-6)

    def test_bias_decreases_in_k(self) -> None:
        values = [ho_bias_leading(self.bias_params, K, 500) for K in (2, 5, 10, 50, 500)]
        assert values == sorted(values, reverse=True)

    def test_unequal_rates_use_delta_only(self) -> None:
        params = TheoryParams(F_delta=1.0, F_b=5.0, phi1=0.3, phi2=0.5)
        assert ho_bias_leading(params, 2, 100) == pytest.approx(2**0.6 * 100 ** (0.5 - 0.6))

    def test_omega_regimes(self) -> None:
        K = 5
        growth_delta = (K / (K - 1)) ** 0.2
        delta = TheoryParams(G_delta=1.0, G_b=7.0, F_delta=2.0, phi1=0.3, phi2=0.5)
        assert omega(delta, K) == pytest.approx((K * K - K + 3) / (K - 1) ** 2 * growth_delta)
        assert omega_tilde(delta, K) == pytest.approx(
            ((K * K - 3 * K + 3) / (K - 1) ** 2 + 4.0 * K / (K - 1)) * growth_delta
        )

        both = TheoryParams(G_delta=1.0, G_b=2.0, F_delta=1.0, phi1=0.35, phi2=0.55)
        growth_both = (K / (K - 1)) ** 0.4
        assert omega(both, K) == pytest.approx(((K * K - 3 * K + 3) / (K - 1) ** 2 + 2.0) * growth_both)
        assert omega_tilde(both, K) == pytest.approx(
            ((K * K - 3 * K + 3) / (K - 1) ** 2 + 2.0 + K / (K - 1)) * growth_both
        )

        bias = TheoryParams(G_delta=9.0, G_b=2.0, phi1=0.4, phi2=0.4)
        assert omega(bias, K) == omega_tilde(bias, K) == pytest.approx(2.0 * (K / (K - 1)) ** 0.3)

    def test_domain_errors(self) -> None:
        with pytest.raises(TheoryDomainError):
            ho_bias_leading(self.bias_params, 1, 100)
        with pytest.raises(TheoryDomainError):
            ho_bias_leading(self.bias_params, 200, 100)
        with pytest.raises(TheoryDomainError, match="phi1"):
            ho_bias_leading(TheoryParams(phi1=0.6, phi2=0.7), 2, 100)

    def test_curve_table_adds_leave_one_out(self) -> None:
        rows = curve_table("ho-bias", self.bias_params, 1000, [10, 2, 2])
        assert [K for K, _ in rows] == [2, 10, 1000]
        assert rows[0][1] == pytest.approx(0.219178, abs=1e-6)
        assert curve_value("so-mse", self.var_params, 2, 1000) == pytest.approx(1.154992, abs=1e-6)


class TestRelativeLosses:
    @pytest.mark.parametrize(
        "loss,phi,expected",
        [
            (relative_loss_bias, 0.25, 0.053565),
            (relative_loss_bias, 0.5, 0.110000),
            (relative_loss_mse_bound, 0.5, 0.053565),
            (relative_loss_mse_bound, 0.3, 0.010491),
        ],
    )
    def test_reference_values(self, loss, phi: float, expected: float) -> None:
        assert loss(10, 1000, phi) == pytest.approx(expected, abs=1e-6)

    def test_zero_at_leave_one_out(self) -> None:
        assert relative_loss_bias(1000, 1000, 0.4) == pytest.approx(0.0, abs=1e-15)
        assert relative_loss_mse(1000, 1000, 0.4, 2.0) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("upsilon", [0.01, 1.0, 100.0, 1e6])
    def test_exact_loss_below_bound(self, upsilon: float) -> None:
        exact = relative_loss_mse(5, 1000, 0.45, upsilon)
        assert 0.0 < exact <= relative_loss_mse_bound(5, 1000, 0.45) + 1e-12

    def test_phi_range(self) -> None:
        with pytest.raises(TheoryDomainError):
            relative_loss_bias(10, 1000, 0.2)


class TestOracleTheory:
    def test_oracle_mse(self) -> None:
        one = oracle_ho_mse(2.0, 0.5, 1.0, 4, 100, "ORACLE1")
        two = oracle_ho_mse(2.0, 0.5, 1.0, 4, 100, "ORACLE2")
        assert one == pytest.approx(0.02 + (16 * 0.25 + 4 * 1.0) / 1e4)
        assert two == pytest.approx(0.02 + (0.25 + 1.0) / 1e4)

    def test_oracle_bias(self) -> None:
        assert dml1_oracle_bias(0.5, 10, 1000) == pytest.approx(0.005)


class TestAdvisor:
    def test_known_phi(self) -> None:
        advice = advise_k(1000, [20, 2, 10, 5], phi=0.25)
        assert [row.K for row in advice.rows] == [2, 5, 10, 20]
        row10 = advice.rows[2]
        assert row10.bias_loss_low == row10.bias_loss_high == pytest.approx(0.053565, abs=1e-6)
        assert advice.recommended_K == 20
        assert GB_CAVEAT in advice.notes

    def test_unknown_phi_reports_range(self) -> None:
        advice = advise_k(1000, [10], upsilon=1.0)
        row = advice.rows[0]
        assert row.bias_loss_low == pytest.approx(0.053565, abs=1e-6)
        assert row.bias_loss_high == pytest.approx(0.11, abs=1e-6)
        assert row.mse_loss is None
        assert any("upsilon ignored" in note for note in advice.notes)

    def test_rates_use_phi1(self) -> None:
        advice = advise_k(1000, [2, 10], rates=(1, 2, 2.0 / 7.0))
        assert advice.phi == pytest.approx(5.0 / 14.0)
        assert any("differs" in note for note in advice.notes)

    def test_upsilon_column(self) -> None:
        advice = advise_k(1000, [2, 1000], phi=0.4, upsilon=1.0)
        assert advice.rows[0].mse_loss == pytest.approx(relative_loss_mse(2, 1000, 0.4, 1.0))
        assert advice.rows[1].mse_loss == pytest.approx(0.0, abs=1e-15)
        assert "leave-one-out" in advice.notes[-1]

    def test_invalid_candidates(self) -> None:
        with pytest.raises(TheoryDomainError, match="lie in"):
            advise_k(100, [1, 5])
        with pytest.raises(TheoryDomainError):
            advise_k(100, [])
        with pytest.raises(TheoryDomainError, match="not both"):
            advise_k(100, [5], phi=0.3, rates=(1, 2, 0.2))
