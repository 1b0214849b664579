"""
Penalty levels that control the probability of falsely joining two
connectivity components at level alpha.
"""

import math
from typing import List, Tuple

import numpy as np
from scipy import special

from src.core.logger import get_logger
from src.covariance.exceptions import (
    DegenerateVarianceError,
    InsufficientSamplesError,
    ParameterError,
)
from src.covariance.schemas import PenaltyChoice, PenaltyFamily, SecondMoment

logger = get_logger(__name__)


def _check_probability(q: float) -> None:
    if not (0.0 < q < 1.0):
        raise ParameterError(f"Tail probability must lie in (0, 1), got {q}.")


def _t_density(t: float, dof: int) -> float:
    log_norm = (
        special.gammaln((dof + 1) / 2.0)
        - special.gammaln(dof / 2.0)
        - 0.5 * math.log(dof * math.pi)
    )
    return math.exp(log_norm - (dof + 1) / 2.0 * math.log1p(t * t / dof))


def student_t_quantile(prob_upper: float, dof: int) -> float:
    """
    t with P(T_dof > t) = prob_upper.

    The inverse incomplete-beta value is polished with one Newton step on the
    upper-tail function.
    """
    _check_probability(prob_upper)
    if dof < 1:
        raise ParameterError(f"Degrees of freedom must be at least 1, got {dof}.")

    # upper tail at t equals the lower tail at -t
    t = -float(special.stdtrit(dof, prob_upper))
    residual = float(special.stdtr(dof, -t)) - prob_upper
    density = _t_density(t, dof)
    if density > 0:
        t += residual / density
    return t


def chi2_quantile_1dof(prob_upper: float) -> float:
    """
    c with P(chi2_1 > c) = prob_upper, i.e. the squared normal (prob_upper/2) point.
    """
    _check_probability(prob_upper)
    z = float(special.ndtri(prob_upper / 2.0))
    return z * z


def _pairs(sigma_hat: np.ndarray) -> np.ndarray:
    rows, cols = np.triu_indices(sigma_hat.shape[0], k=1)
    return sigma_hat[rows] * sigma_hat[cols]


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}.")


def _tail(alpha: float, p: int, relaxed: bool) -> float:
    return alpha if relaxed else alpha / (2.0 * p * p)


def _zero_columns(moment: SecondMoment) -> List[int]:
    return [int(k) for k in np.flatnonzero(moment.sigma_hat == 0.0)]


def gaussian_lambda(moment: SecondMoment, alpha: float, relaxed: bool = False) -> PenaltyChoice:
    n, p = moment.n, moment.p
    _check_alpha(alpha)
    if n < 3:
        raise InsufficientSamplesError(n, 3)
    if p < 2:
        raise ParameterError(f"Penalty selection needs at least 2 variables, got {p}.")

    degenerate = _zero_columns(moment)
    if degenerate:
        logger.warning(f"Columns {degenerate} have zero empirical variance")

    pair = float(np.max(_pairs(moment.sigma_hat)))
    if pair <= 0.0:
        raise DegenerateVarianceError(degenerate[0], _name(moment, degenerate[0]))

    tail = _tail(alpha, p, relaxed)
    t = student_t_quantile(tail, n - 2)
    lam = pair * t / math.sqrt(n - 2 + t * t)
    logger.info(f"Gaussian penalty: alpha={alpha}, n={n}, p={p}, lambda={lam:.6g}")
    return PenaltyChoice(
        alpha=alpha,
        lam=lam,
        family=PenaltyFamily.GAUSSIAN_T,
        quantile_value=t,
        tail_probability=tail,
        pair_statistic=pair,
        relaxed_bonferroni=relaxed,
        n=n,
        p=p,
        degenerate_columns=degenerate,
    )


def binary_lambda(moment: SecondMoment, alpha: float, relaxed: bool = False) -> PenaltyChoice:
    n, p = moment.n, moment.p
    _check_alpha(alpha)
    if n < 1:
        raise InsufficientSamplesError(n, 1)
    if p < 2:
        raise ParameterError(f"Penalty selection needs at least 2 variables, got {p}.")

    degenerate = _zero_columns(moment)
    if degenerate:
        # the min over pairs would be zero
        raise DegenerateVarianceError(degenerate[0], _name(moment, degenerate[0]))

    pair = float(np.min(_pairs(moment.sigma_hat)))
    tail = _tail(alpha, p, relaxed)
    c = chi2_quantile_1dof(tail)
    lam = math.sqrt(c) / (pair * math.sqrt(n))
    logger.info(f"Binary penalty: alpha={alpha}, n={n}, p={p}, lambda={lam:.6g}")
    return PenaltyChoice(
        alpha=alpha,
        lam=lam,
        family=PenaltyFamily.BINARY_CHI2,
        quantile_value=c,
        tail_probability=tail,
        pair_statistic=pair,
        relaxed_bonferroni=relaxed,
        n=n,
        p=p,
    )


def _name(moment: SecondMoment, k: int) -> str | None:
    names = moment.variable_names
    return names[k] if names else None


def parse_auto_lambda(text: str) -> Tuple[float, bool]:
    """
    Parses "auto:<alpha>[:relaxed]" into (alpha, relaxed).
    """
    parts = text.split(":")
    if parts[0] != "auto" or len(parts) not in (2, 3):
        raise ParameterError(f"Expected auto:<alpha>[:relaxed], got '{text}'.")
    if len(parts) == 3 and parts[2] != "relaxed":
        raise ParameterError(f"Unknown auto-lambda modifier '{parts[2]}'.")
    try:
        alpha = float(parts[1])
    except ValueError:
        raise ParameterError(f"alpha must be a number, got '{parts[1]}'.")
    _check_alpha(alpha)
    return alpha, len(parts) == 3
