from typing import Optional

import numpy as np

from src.core.config import settings
from src.core.logger import get_logger
from src.covariance.bcd import solve_bcd
from src.covariance.model import duality_gap, screening_diagonal_columns
from src.covariance.nesterov import solve_nesterov
from src.covariance.schemas import (
    BcdOptions,
    Estimate,
    NesterovOptions,
    Problem,
    SolverKind,
)

logger = get_logger(__name__)


def default_bcd_options() -> BcdOptions:
    return BcdOptions(
        max_sweeps=settings.BCD_MAX_SWEEPS,
        qp_tol=settings.BCD_QP_TOL,
        qp_max_iter=settings.BCD_QP_MAX_ITER,
    )


def default_nesterov_options() -> NesterovOptions:
    return NesterovOptions(gap_check_every=settings.NESTEROV_GAP_CHECK_EVERY)


def solve_analytic(prob: Problem) -> Estimate:
    """
    Closed-form solution when every column is screened: W is diagonal with the
    fixed diagonal, and X = W^-1.
    """
    d = np.asarray(prob.fixed_diagonal, dtype=float)
    W = np.diag(d)
    return Estimate(
        W=W,
        X=np.diag(1.0 / d),
        gap=duality_gap(W, prob),
        iterations=0,
        solver=SolverKind.ANALYTIC,
    )


def solve_problem(
    prob: Problem,
    solver: SolverKind = SolverKind.BCD,
    bcd_options: Optional[BcdOptions] = None,
    nesterov_options: Optional[NesterovOptions] = None,
    W0: Optional[np.ndarray] = None,
) -> Estimate:
    """
    Dispatches one problem to the requested solver; fully screened problems are
    answered analytically.
    """
    if len(screening_diagonal_columns(prob)) == prob.p:
        logger.info(f"All {prob.p} columns screened at lambda={prob.lam:.4g}; analytic solution")
        return solve_analytic(prob)

    if solver is SolverKind.NESTEROV:
        return solve_nesterov(prob, nesterov_options or default_nesterov_options())
    return solve_bcd(prob, bcd_options or default_bcd_options(), W0)
