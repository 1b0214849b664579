"""
Objective, certificate and solution-property checks for the l1-penalized
Gaussian maximum likelihood problem

    max  log det X - trace(S X) - lam * ||X||_1      (primal, X = precision)
    max  log det W  s.t. ||W - S||_inf <= lam         (dual, W = covariance)

plus the dense linear-algebra helpers both solvers share.
"""

from typing import Set, Tuple

import numpy as np
from scipy import linalg

from src.core.config import settings
from src.core.logger import get_logger
from src.covariance.exceptions import DimensionError, DomainError, ParameterError
from src.covariance.schemas import Problem, SampleMatrix, SecondMoment, symmetrize

logger = get_logger(__name__)

DEGENERATE_WIDENING = 1e-6


def cholesky(A: np.ndarray, what: str = "matrix"):
    """
    Lower Cholesky factor in scipy's (c, lower) form; DomainError if A is not PD.
    """
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        raise DomainError(what)


def logdet(A: np.ndarray, what: str = "matrix") -> float:
    c, _ = cholesky(A, what)
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def spd_inverse(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    factor = cholesky(A, what)
    return symmetrize(linalg.cho_solve(factor, np.eye(A.shape[0])))


def is_positive_definite(A: np.ndarray) -> bool:
    try:
        linalg.cho_factor(A, lower=True)
        return True
    except (linalg.LinAlgError, ValueError):
        return False


def zero_threshold(X: np.ndarray, rel: float | None = None) -> float:
    if rel is None:
        rel = settings.ZERO_THRESHOLD_REL
    return rel * max(1.0, float(np.max(np.abs(X))))


def offdiag_abs_max(A: np.ndarray) -> float:
    if A.shape[0] < 2:
        return 0.0
    mask = ~np.eye(A.shape[0], dtype=bool)
    return float(np.max(np.abs(A[mask])))


def second_moment(samples: SampleMatrix) -> SecondMoment:
    """
    S = (1/n) sum_k (y_k - mu)(y_k - mu)^T about the column means.
    """
    Y = samples.data
    n = Y.shape[0]
    if n < 2:
        raise DimensionError(f"Need at least 2 samples, got {n}.")
    mu_bar = Y.mean(axis=0)
    centered = Y - mu_bar
    S = symmetrize(centered.T @ centered / n)
    sigma_hat = np.sqrt(np.maximum(S.diagonal(), 0.0))
    return SecondMoment(
        S=S,
        n=n,
        sigma_hat=sigma_hat,
        mu_bar=mu_bar,
        variable_names=samples.variable_names,
    )


def _diagonal_excess(prob: Problem) -> np.ndarray | None:
    # d_k - S_kk - lam: nonzero only when the diagonal is overridden
    if prob.diag_override is None:
        return None
    return prob.diag_override - prob.S.diagonal() - prob.lam


def primal_objective(X: np.ndarray, prob: Problem) -> float:
    X = symmetrize(X)
    value = logdet(X, "primal iterate") - np.sum(prob.S * X) - prob.lam * np.abs(X).sum()
    excess = _diagonal_excess(prob)
    if excess is not None:
        value -= float(np.dot(excess, X.diagonal()))
    return float(value)


def dual_objective(W: np.ndarray) -> float:
    return logdet(symmetrize(W), "dual iterate")


def duality_gap(W: np.ndarray, prob: Problem) -> float:
    """
    trace(W^-1 S) - p + lam * ||W^-1||_1, evaluated at the symmetrized inverse.
    """
    X = spd_inverse(symmetrize(W), "dual iterate")
    gap = np.sum(prob.S * X) - prob.p + prob.lam * np.abs(X).sum()
    excess = _diagonal_excess(prob)
    if excess is not None:
        gap += float(np.dot(excess, X.diagonal()))
    return float(gap)


def kkt_residual(X: np.ndarray, prob: Problem) -> float:
    """
    Largest violation of 0 in the subgradient of the primal objective at X.
    """
    X = symmetrize(X)
    X_inv = spd_inverse(X, "primal iterate")
    G = prob.S - X_inv
    lam = prob.lam
    thr = zero_threshold(X)

    residual = np.where(
        X > thr,
        np.abs(G + lam),
        np.where(X < -thr, np.abs(G - lam), np.maximum(0.0, np.abs(G) - lam)),
    )
    np.fill_diagonal(residual, np.abs(prob.fixed_diagonal - X_inv.diagonal()))
    return float(np.max(residual))


def eigenvalue_bounds(prob: Problem) -> Tuple[float, float]:
    """
    Lower and upper bounds (a, b) on the eigenvalues of the optimal precision matrix.
    """
    lam, p = prob.lam, prob.p
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}.")
    s_norm = float(linalg.eigvalsh(prob.S)[-1]) if p else 0.0
    s_norm = max(s_norm, 0.0)

    if prob.diag_override is None:
        a = 1.0 / (s_norm + lam * p)
        b = p / lam
    else:
        excess = prob.diag_override - prob.S.diagonal()
        if np.min(excess) <= 0:
            raise ParameterError(
                "Eigenvalue bounds need the overridden diagonal strictly above S."
            )
        a = 1.0 / (s_norm + float(np.max(excess)) + lam * (p - 1))
        b = p / float(np.min(excess))

    if a >= b:
        a, b = a * (1 - DEGENERATE_WIDENING), b * (1 + DEGENERATE_WIDENING)
    return a, b


def screening_diagonal_columns(prob: Problem) -> Set[int]:
    """
    Columns k with lam >= |S_kj| for every j != k; the estimate isolates them.
    """
    off = np.abs(prob.S).copy()
    np.fill_diagonal(off, 0.0)
    return {int(k) for k in np.flatnonzero(np.all(off <= prob.lam, axis=1))}


def box_project(W: np.ndarray, prob: Problem) -> np.ndarray:
    """
    Nearest dual-feasible matrix entrywise: off-diagonals clipped into
    [S - lam, S + lam], diagonal set to the fixed diagonal.
    """
    S = prob.S
    out = np.clip(symmetrize(W), S - prob.lam, S + prob.lam)
    np.fill_diagonal(out, prob.fixed_diagonal)
    return out


def initial_dual_point(prob: Problem) -> np.ndarray:
    """
    W0 = S + lam I, or S with the overridden diagonal.
    """
    W = np.array(prob.S, dtype=float)
    np.fill_diagonal(W, prob.fixed_diagonal)
    return W
