"""
Approximate sparse maximum likelihood for +-1 data.

Replacing the log partition function by its log-determinant upper bound turns
the penalized logistic problem into the Gaussian dual with a modified diagonal,

    Gamma = argmax { log det W : W_kk = S_kk + 1/3, |W_kj - S_kj| <= lam },

with theta_k = mu_k and theta_kj = -(Gamma^-1)_kj. The exact log partition
function and the bound itself are only evaluated for validation.
"""

import math
from typing import Optional

import numpy as np
from scipy import linalg, special

from src.core.logger import get_logger
from src.covariance.exceptions import (
    DataError,
    DegenerateVarianceError,
    DomainError,
    NumericError,
    SizeError,
)
from src.covariance.model import cholesky, second_moment
from src.covariance.schemas import (
    BcdOptions,
    BinaryEstimate,
    DataKind,
    Estimate,
    LogisticParams,
    NesterovOptions,
    Problem,
    SampleMatrix,
    SolverKind,
)
from src.covariance.solvers import solve_problem

logger = get_logger(__name__)

SPIN_DIAGONAL_SHIFT = 1.0 / 3.0
MAX_ENUMERATION_P = 20
ENUMERATION_CHUNK = 1 << 14
NEWTON_MAX_ITER = 200
NEWTON_TOL = 1e-12


def binary_problem(samples: SampleMatrix, lam: float, epsilon: float) -> Problem:
    if samples.kind is not DataKind.BINARY:
        raise DataError("Binary estimation needs samples of kind 'binary'.")
    moment = second_moment(samples)
    zero = np.flatnonzero(moment.sigma_hat == 0.0)
    if zero.size:
        k = int(zero[0])
        names = samples.variable_names
        raise DegenerateVarianceError(k, names[k] if names else None)
    return Problem(
        moment=moment,
        lam=lam,
        epsilon=epsilon,
        diag_override=moment.S.diagonal() + SPIN_DIAGONAL_SHIFT,
    )


def params_from_gamma(gamma_inverse: np.ndarray, mu_bar: np.ndarray) -> LogisticParams:
    return LogisticParams(theta_linear=mu_bar, theta_pair=-np.asarray(gamma_inverse))


def solve_binary(
    samples: SampleMatrix,
    lam: float,
    epsilon: float,
    solver: SolverKind = SolverKind.BCD,
    bcd_options: Optional[BcdOptions] = None,
    nesterov_options: Optional[NesterovOptions] = None,
) -> BinaryEstimate:
    prob = binary_problem(samples, lam, epsilon)
    logger.info(f"Binary ASML: n={samples.n}, p={samples.p}, lambda={lam:.4g}")
    est = solve_problem(prob, solver, bcd_options, nesterov_options)
    return binary_estimate(est, prob.moment.mu_bar)


def binary_estimate(est: Estimate, mu_bar: np.ndarray) -> BinaryEstimate:
    """
    Logistic parameters from a solution of the modified dual problem.
    """
    return BinaryEstimate(
        gamma=est.W,
        params=params_from_gamma(est.X, mu_bar),
        mu_bar=mu_bar,
        gap=est.gap,
        estimate=est,
    )


def assemble_R(params: LogisticParams) -> np.ndarray:
    """
    (p+1) x (p+1) symmetric matrix with the linear terms in the first row and
    column and the pair terms in the lower-right block.
    """
    p = params.p
    R = np.zeros((p + 1, p + 1))
    R[0, 1:] = params.theta_linear
    R[1:, 0] = params.theta_linear
    R[1:, 1:] = params.theta_pair
    return R


def _spins(start: int, stop: int, p: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)[:, None]
    bits = (codes >> np.arange(p, dtype=np.int64)) & 1
    return 2.0 * bits - 1.0


def exact_log_partition(params: LogisticParams) -> float:
    """
    log sum over x in {-1, +1}^p of exp(theta^T x + sum_{i<j} theta_ij x_i x_j).
    """
    p = params.p
    if p > MAX_ENUMERATION_P:
        raise SizeError(f"Exact log partition enumerates 2^p states; p={p} exceeds {MAX_ENUMERATION_P}.")
    theta, pair = params.theta_linear, params.theta_pair
    total = 1 << p
    partial = []
    for start in range(0, total, ENUMERATION_CHUNK):
        x = _spins(start, min(start + ENUMERATION_CHUNK, total), p)
        energy = x @ theta + 0.5 * np.einsum("ij,jk,ik->i", x, pair, x)
        partial.append(special.logsumexp(energy))
    return float(special.logsumexp(partial))


def _nu_objective(nu: np.ndarray, R: np.ndarray, m: np.ndarray) -> float:
    K = -(R + np.diag(nu))
    c, _ = cholesky(K, "relaxation matrix")
    return float(nu @ m) + 2.0 * float(np.sum(np.log(np.diag(c))))


def relaxed_log_partition_bound(params: LogisticParams) -> float:
    """
    B(theta) = (p/2) log(e pi / 2) - (p+1)/2
               - (1/2) max_nu { nu^T m + log det(-(R(theta) + diag(nu))) },

    m = (1, 4/3, ..., 4/3). The concave inner problem is solved by damped Newton.
    """
    p = params.p
    R = assemble_R(params)
    m = np.full(p + 1, 4.0 / 3.0)
    m[0] = 1.0

    nu = -(float(np.max(np.abs(linalg.eigvalsh(R)))) + 1.0) * np.ones(p + 1)
    value = _nu_objective(nu, R, m)
    for it in range(NEWTON_MAX_ITER):
        K_inv = linalg.cho_solve(cholesky(-(R + np.diag(nu)), "relaxation matrix"), np.eye(p + 1))
        grad = m - K_inv.diagonal()
        neg_hessian = K_inv * K_inv
        step = linalg.solve(neg_hessian, grad, assume_a="pos")
        decrement = float(grad @ step)
        if decrement / 2.0 <= NEWTON_TOL:
            break

        t = 1.0
        while True:
            candidate = nu + t * step
            try:
                new_value = _nu_objective(candidate, R, m)
            except DomainError:
                new_value = -math.inf
            if new_value >= value + 0.25 * t * decrement:
                break
            t *= 0.5
            if t < 1e-20:
                raise NumericError("Line search failed in the log-partition relaxation.")
        nu, value = candidate, new_value
    else:
        raise NumericError(
            f"Log-partition relaxation did not converge in {NEWTON_MAX_ITER} Newton steps."
        )

    logger.debug(f"relaxation solved in {it} Newton steps")
    return p / 2.0 * math.log(math.e * math.pi / 2.0) - (p + 1) / 2.0 - value / 2.0


def relaxation_gap(params: LogisticParams) -> float:
    """
    B(theta) - A(theta); nonnegative since B bounds A from above.
    """
    return relaxed_log_partition_bound(params) - exact_log_partition(params)
