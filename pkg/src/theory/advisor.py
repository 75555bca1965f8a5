"""Fold-count advice from the relative-loss formulas."""
import logging
from typing import Optional

from pydantic import BaseModel, Field

from src.theory.curves import relative_loss_bias, relative_loss_mse, relative_loss_mse_bound
from src.theory.rates import TheoryDomainError, nw_rates

logger = logging.getLogger(__name__)

PHI_RANGE = (0.25, 0.5)

GB_CAVEAT = (
    "K = n minimizes the second-order MSE only when G_b > 0; G_b depends on the data and "
    "cannot be tested here. The bias ranking holds regardless."
)


class AdviceRow(BaseModel):
    """Relative losses at one candidate K; low == high when phi is known."""

    K: int
    bias_loss_low: float
    bias_loss_high: float
    mse_bound_low: float
    mse_bound_high: float
    mse_loss: Optional[float] = None


class FoldAdvice(BaseModel):
    n: int
    phi: Optional[float] = None
    phi_range: tuple[float, float]
    upsilon: Optional[float] = None
    rows: list[AdviceRow] = Field(default_factory=list)
    recommended_K: int
    notes: list[str] = Field(default_factory=list)

    def to_records(self) -> list[dict[str, object]]:
        return [row.model_dump() for row in self.rows]


def _resolve_phi(
    phi: Optional[float], rates: Optional[tuple[int, int, float]], notes: list[str]
) -> Optional[float]:
    if phi is not None and rates is not None:
        raise TheoryDomainError("Give either phi or (d_x, s, phi0), not both")
    if rates is None:
        return phi
    d_x, s, phi0 = rates
    phi1, phi2, _ = nw_rates(d_x, s, phi0)
    if abs(phi1 - phi2) > 1e-12:
        notes.append(
            f"phi1={phi1:.4g} differs from phi2={phi2:.4g}; losses use phi1 and the MSE "
            "columns assume the equal-rate regime"
        )
    return phi1


def advise_k(
    n: int,
    candidates: list[int],
    phi: Optional[float] = None,
    rates: Optional[tuple[int, int, float]] = None,
    upsilon: Optional[float] = None,
) -> FoldAdvice:
    """Tabulate the relative losses of each candidate K against K = n.

    Args:
        n: Sample size
        candidates: Fold counts in [2, n]
        phi: Nuisance rate; when neither it nor ``rates`` is given, every column reports its
            range over phi in [1/4, 1/2]
        rates: (d_x, s, phi0) for a Nadaraya-Watson fit; phi is then phi1
        upsilon: G_b / sigma2; adds the exact MSE loss column (needs a known phi)

    Raises:
        TheoryDomainError: If a candidate falls outside [2, n] or phi is out of range
    """
    folds = sorted({int(K) for K in candidates})
    if not folds:
        raise TheoryDomainError("No candidate fold counts given")
    bad = [K for K in folds if K < 2 or K > n]
    if bad:
        raise TheoryDomainError(f"Candidates must lie in [2, {n}], got {bad}")

    notes: list[str] = []
    resolved = _resolve_phi(phi, rates, notes)
    if resolved is None:
        low, high = PHI_RANGE
        if upsilon is not None:
            notes.append("upsilon ignored: the exact MSE loss needs a known phi")
            upsilon = None
    else:
        low = high = resolved

    rows = []
    for K in folds:
        # both losses increase in phi, so the range endpoints bound them
        rows.append(
            AdviceRow(
                K=K,
                bias_loss_low=relative_loss_bias(K, n, low),
                bias_loss_high=relative_loss_bias(K, n, high),
                mse_bound_low=relative_loss_mse_bound(K, n, low),
                mse_bound_high=relative_loss_mse_bound(K, n, high),
                mse_loss=(
                    relative_loss_mse(K, n, low, upsilon) if upsilon is not None else None
                ),
            )
        )

    recommended = folds[-1]
    notes.append(GB_CAVEAT)
    notes.append(
        f"K = {recommended} means {recommended} nuisance fits per component"
        + (" (leave-one-out)" if recommended == n else "")
    )
    logger.info(f"advise-k: n={n}, candidates={folds}, recommended K={recommended}")
    return FoldAdvice(
        n=n,
        phi=resolved,
        phi_range=(low, high),
        upsilon=upsilon,
        rows=rows,
        recommended_K=recommended,
        notes=notes,
    )
