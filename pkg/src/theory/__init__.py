"""Closed-form calculators: rates, higher-order curves, Lambda constants and fold advice."""
from src.theory.advisor import GB_CAVEAT, AdviceRow, FoldAdvice, advise_k
from src.theory.curves import (
    TheoryParams,
    curve_table,
    curve_value,
    dml1_oracle_bias,
    ho_bias_leading,
    ho_variance_second_term,
    omega,
    omega_tilde,
    oracle_ho_mse,
    relative_loss_bias,
    relative_loss_mse,
    relative_loss_mse_bound,
    so_mse,
)
from src.theory.lambdas import MomentRatios, lambda1, lambda_hat, moment_ratios
from src.theory.rates import (
    TheoryDomainError,
    UnusableRateError,
    admissible_phi0,
    nw_rates,
    optimal_rate_exponent,
)

__all__ = [
    "GB_CAVEAT",
    "AdviceRow",
    "FoldAdvice",
    "MomentRatios",
    "TheoryDomainError",
    "TheoryParams",
    "UnusableRateError",
    "admissible_phi0",
    "advise_k",
    "curve_table",
    "curve_value",
    "dml1_oracle_bias",
    "ho_bias_leading",
    "ho_variance_second_term",
    "lambda1",
    "lambda_hat",
    "moment_ratios",
    "nw_rates",
    "optimal_rate_exponent",
    "omega",
    "omega_tilde",
    "oracle_ho_mse",
    "relative_loss_bias",
    "relative_loss_mse",
    "relative_loss_mse_bound",
    "so_mse",
]
