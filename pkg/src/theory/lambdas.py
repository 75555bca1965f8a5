"""Sample analogs of the DML1/DML2 discrepancy Lambda and the oracle constant Lambda1.

    Lambda  = -E[(m - E m)(psi_a - E psi_a)] / E[psi_a]^2
    Lambda1 = 5 Lambda^2 + sigma2 (3 E[psi_a^2]/E[psi_a]^2 - 1) - 2 E[m^2 psi_a]/E[psi_a]^3

Lambda vanishes whenever psi_a is constant, so DML1 and DML2 then share their leading terms.
"""
import logging

import numpy as np
from pydantic import BaseModel

from src.core.dataset import Dataset
from src.core.estimators import DEGENERACY_TOLERANCE, EtaInput, GlobalDegeneracyError, evaluate_psi
from src.core.moments import MomentModel

logger = logging.getLogger(__name__)


class MomentRatios(BaseModel):
    """Plug-in moments of psi_a and m at a given theta."""

    psi_a_second: float
    m2_psi_a: float
    sigma2: float
    Lambda: float

    @property
    def lambda1(self) -> float:
        return lambda1(self.sigma2, self.Lambda, (self.psi_a_second, self.m2_psi_a))


def _psi_mean(psi_a: np.ndarray) -> float:
    n = psi_a.shape[0]
    mean_a = float(np.mean(psi_a))
    if abs(mean_a) < DEGENERACY_TOLERANCE:
        raise GlobalDegeneracyError(
            f"mean of psi_a is {mean_a:.3g} over {n} rows; the moment is not identified"
        )
    return mean_a


def lambda_hat(dataset: Dataset, model: MomentModel, eta: EtaInput, theta_hat: float) -> float:
    """Demeaned sample analog of Lambda at theta_hat.

    Raises:
        GlobalDegeneracyError: If mean(psi_a) vanishes
    """
    psi_a, psi_b = evaluate_psi(dataset, model, eta)
    mean_a = _psi_mean(psi_a)
    m = psi_b - psi_a * theta_hat
    covariance = float(np.mean((m - np.mean(m)) * (psi_a - mean_a)))
    return -covariance / mean_a**2


def lambda1(sigma2: float, Lambda: float, moments: tuple[float, float]) -> float:
    """Lambda1 from sigma2, Lambda and (E[psi_a^2]/E[psi_a]^2, E[m^2 psi_a]/E[psi_a]^3)."""
    psi_a_second, m2_psi_a = moments
    return 5.0 * Lambda**2 + sigma2 * (3.0 * psi_a_second - 1.0) - 2.0 * m2_psi_a


def moment_ratios(
    dataset: Dataset, model: MomentModel, eta: EtaInput, theta: float
) -> MomentRatios:
    """Plug-in moments feeding ``lambda1``; evaluate at the truth for design constants."""
    psi_a, psi_b = evaluate_psi(dataset, model, eta)
    mean_a = _psi_mean(psi_a)
    m = psi_b - psi_a * theta
    ratios = MomentRatios(
        psi_a_second=float(np.mean(psi_a**2)) / mean_a**2,
        m2_psi_a=float(np.mean(m**2 * psi_a)) / mean_a**3,
        sigma2=float(np.mean(m**2)) / mean_a**2,
        Lambda=-float(np.mean((m - np.mean(m)) * (psi_a - mean_a))) / mean_a**2,
    )
    logger.debug(f"moment ratios for {model.id}: {ratios.model_dump()}")
    return ratios
