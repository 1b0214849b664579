"""
First-order smoothing scheme on the primal problem

    min { f(x) = -log det x + <S, x> + max_{||u||_inf <= 1} <lam x, u> : x in Q1 },
    Q1 = { a I <= x <= b I }.

The max term is replaced by its mu-regularized version (prox function
d2(u) = ||u||_F^2 / 2), giving a smooth f~ with Lipschitz gradient; the
estimate sequence uses the prox function d1(x) = -log det x + log b on Q1.
"""

import math
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import linalg

from src.core.logger import get_logger
from src.covariance.exceptions import ConvergenceError, DomainError, ParameterError
from src.covariance.model import (
    box_project,
    duality_gap,
    eigenvalue_bounds,
    is_positive_definite,
    logdet,
    spd_inverse,
)
from src.covariance.schemas import (
    Estimate,
    NesterovOptions,
    Problem,
    SmoothingConstants,
    SolverKind,
    symmetrize,
)

logger = get_logger(__name__)

StepHook = Callable[[int, np.ndarray, np.ndarray], None]


def smoothing_constants(
    p: int, a: float, b: float, lam: float, epsilon: float
) -> SmoothingConstants:
    if not (0 < a < b) or lam <= 0 or epsilon <= 0:
        raise ParameterError(
            f"Need 0 < a < b, lambda > 0, epsilon > 0 (a={a}, b={b}, "
            f"lambda={lam}, epsilon={epsilon})."
        )
    sigma1 = 1.0 / b**2
    sigma2 = 1.0
    D1 = p * math.log(b / a)
    D2 = p**2 / 2.0
    M = 1.0 / a**2
    mu = epsilon / (2.0 * D2)
    return SmoothingConstants(
        mu=mu,
        L=M + lam**2 / (sigma2 * mu),
        L_printed=M + D2 * lam**2 / (2.0 * sigma2 * epsilon),
        sigma1=sigma1,
        sigma2=sigma2,
        D1=D1,
        D2=D2,
        M=M,
        A_norm=lam,
    )


def iteration_bound_terms(
    p: int, a: float, b: float, lam: float, epsilon: float
) -> Tuple[float, float]:
    c = smoothing_constants(p, a, b, lam, epsilon)
    first = 4.0 * c.A_norm * math.sqrt(c.D1 * c.D2 / (c.sigma1 * c.sigma2)) / epsilon
    second = math.sqrt(c.M * c.D1 / (c.sigma1 * epsilon))
    return first, second


def iteration_bound(p: int, a: float, b: float, lam: float, epsilon: float) -> int:
    """
    A-priori number of steps after which the scheme is epsilon-suboptimal.
    """
    first, second = iteration_bound_terms(p, a, b, lam, epsilon)
    return math.ceil(first + second)


def smoothed_maximizer(x: np.ndarray, lam: float, mu: float, mask=None) -> np.ndarray:
    u = np.clip(lam * x / mu, -1.0, 1.0)
    return u if mask is None else u * mask


def smoothed_gradient(
    x: np.ndarray, S: np.ndarray, lam: float, mu: float, mask=None
) -> np.ndarray:
    """
    -x^-1 + S + lam * u*(x), with u*(x) = clip(lam x / mu, -1, 1) elementwise.
    """
    x = symmetrize(x)
    x_inv = spd_inverse(x, "Nesterov iterate")
    return symmetrize(-x_inv + S + lam * smoothed_maximizer(x, lam, mu, mask))


def smoothed_objective(x: np.ndarray, S: np.ndarray, lam: float, mu: float, mask=None) -> float:
    x = symmetrize(x)
    u = smoothed_maximizer(x, lam, mu, mask)
    huber = lam * x * u - mu * u**2 / 2.0
    return -logdet(x, "Nesterov iterate") + float(np.sum(S * x)) + float(np.sum(huber))


def exact_objective(x: np.ndarray, S: np.ndarray, lam: float, mask=None) -> float:
    x = symmetrize(x)
    penalty = np.abs(x) if mask is None else np.abs(x) * mask
    return -logdet(x, "Nesterov iterate") + float(np.sum(S * x)) + lam * float(np.sum(penalty))


def project_spectral_box(G: np.ndarray, a: float, b: float) -> np.ndarray:
    """
    Frobenius projection onto { a I <= X <= b I }: clamp the eigenvalues.
    """
    w, V = linalg.eigh(symmetrize(G))
    return symmetrize((V * np.clip(w, a, b)) @ V.T)


def prox_center_step(
    accumulated_grad: np.ndarray, L: float, sigma1: float, a: float, b: float
) -> np.ndarray:
    """
    argmin over Q1 of (L / sigma1) (-log det X + log b) + <accumulated_grad, X>.
    """
    w, V = linalg.eigh(symmetrize(accumulated_grad))
    scale = L / sigma1
    safe = np.where(w > 0, w, 1.0)
    vals = np.where(w > 0, np.clip(scale / safe, a, b), b)
    return symmetrize((V * vals) @ V.T)


def _smooth_data(prob: Problem):
    """
    Linear term and penalty mask of the primal: (S, None) in the Gaussian case;
    with a fixed diagonal d, the diagonal of S is replaced by d and left unpenalized.
    """
    if prob.diag_override is None:
        return prob.S, None
    C = np.array(prob.S, dtype=float)
    np.fill_diagonal(C, prob.diag_override)
    mask = 1.0 - np.eye(prob.p)
    return C, mask


class NesterovSolver:
    """
    One solver instance per problem; owns the (x, y, z) sequences and the
    accumulated gradient.
    """

    def __init__(self, prob: Problem, opts: NesterovOptions | None = None):
        self.prob = prob
        self.opts = opts or NesterovOptions()
        default_a, default_b = eigenvalue_bounds(prob)
        self.a = self.opts.a if self.opts.a is not None else default_a
        self.b = self.opts.b if self.opts.b is not None else default_b
        if not self.a < self.b:
            raise ParameterError(f"Need a < b, got a={self.a}, b={self.b}.")
        self.epsilon = self.opts.epsilon or prob.epsilon
        self.constants = smoothing_constants(prob.p, self.a, self.b, prob.lam, self.epsilon)
        self.max_steps = self.opts.max_steps or math.ceil(
            4 * iteration_bound(prob.p, self.a, self.b, prob.lam, self.epsilon)
        )
        self.objective_trace: List[float] = []

    def certify(self, y: np.ndarray, steps: int) -> Optional[Estimate]:
        """
        Dual point from the primal iterate: W = box-projected y^-1. None when
        the projection leaves the PD cone.
        """
        W = box_project(spd_inverse(y, "Nesterov iterate"), self.prob)
        if not is_positive_definite(W):
            return None
        return Estimate(
            W=W,
            X=spd_inverse(W, "dual iterate"),
            gap=duality_gap(W, self.prob),
            iterations=steps,
            solver=SolverKind.NESTEROV,
        )

    def _unclipped(self, y: np.ndarray, steps: int) -> Estimate:
        W = spd_inverse(y, "Nesterov iterate")
        return Estimate(
            W=W,
            X=y,
            gap=duality_gap(W, self.prob),
            iterations=steps,
            solver=SolverKind.NESTEROV,
            converged=False,
            gap_is_bound=True,
        )

    def solve(self, on_step: Optional[StepHook] = None) -> Estimate:
        """
        Runs the scheme until a certified gap reaches the target. on_step, when
        given, sees (step, y, z) after every step; the arrays are not copied.
        """
        prob, c = self.prob, self.constants
        a, b = self.a, self.b
        C, mask = _smooth_data(prob)
        p = prob.p
        logger.info(
            f"Nesterov start: p={p}, lambda={prob.lam:.4g}, epsilon={self.epsilon:.3g}, "
            f"a={a:.3g}, b={b:.3g}, L={c.L:.3g}, max_steps={self.max_steps}"
        )

        x = b * np.eye(p)
        accumulated = np.zeros((p, p))
        y = x
        last: Optional[Estimate] = None
        for k in range(self.max_steps):
            grad = smoothed_gradient(x, C, prob.lam, c.mu, mask)
            y = project_spectral_box(x - grad / c.L, a, b)
            accumulated += (k + 1) / 2.0 * grad
            z = prox_center_step(accumulated, c.L, c.sigma1, a, b)

            steps = k + 1
            if on_step is not None:
                on_step(steps, y, z)
            if steps % self.opts.gap_check_every == 0 or steps == self.max_steps:
                self.objective_trace.append(smoothed_objective(y, C, prob.lam, c.mu, mask))
                try:
                    candidate = self.certify(y, steps)
                except DomainError:
                    candidate = None
                if candidate is not None:
                    last = candidate
                    logger.debug(f"Nesterov step {steps}: gap={candidate.gap:.3e}")
                    if candidate.gap <= prob.epsilon:
                        logger.info(
                            f"Nesterov converged in {steps} steps, gap={candidate.gap:.3e}"
                        )
                        return candidate

            x = 2.0 / (k + 3) * z + (k + 1) / (k + 3) * y

        if last is None:
            last = self._unclipped(y, self.max_steps)
        else:
            last = last.model_copy(update={"converged": False})
        logger.warning(
            f"Nesterov stopped after {self.max_steps} steps with gap {last.gap:.3e}"
        )
        raise ConvergenceError(SolverKind.NESTEROV.value, last.gap, prob.epsilon, estimate=last)


def solve_nesterov(
    prob: Problem, opts: NesterovOptions | None = None, on_step: Optional[StepHook] = None
) -> Estimate:
    return NesterovSolver(prob, opts).solve(on_step)
