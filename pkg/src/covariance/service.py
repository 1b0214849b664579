from typing import List, Optional, Sequence, Union

import numpy as np

from src.core.logger import get_logger
from src.covariance.baselines import pattern_of
from src.covariance.binary import binary_problem, solve_binary
from src.covariance.exceptions import ConvergenceError, DataError, ParameterError
from src.covariance.model import (
    dual_objective,
    eigenvalue_bounds,
    kkt_residual,
    primal_objective,
    screening_diagonal_columns,
    second_moment,
)
from src.covariance.penalty import binary_lambda, gaussian_lambda
from src.covariance.schemas import (
    BcdOptions,
    BinaryEstimate,
    Certificate,
    DataKind,
    Estimate,
    NesterovOptions,
    PathPoint,
    PathResult,
    PenaltyChoice,
    Problem,
    SampleMatrix,
    SecondMoment,
    SolverKind,
)
from src.covariance.solvers import default_bcd_options, default_nesterov_options, solve_problem

logger = get_logger(__name__)


class EstimationService:

    def __init__(
        self,
        bcd_options: Optional[BcdOptions] = None,
        nesterov_options: Optional[NesterovOptions] = None,
    ):
        self.bcd_options = bcd_options or default_bcd_options()
        self.nesterov_options = nesterov_options or default_nesterov_options()

    def problem(
        self,
        moment: SecondMoment,
        lam: float,
        epsilon: float,
        diag_override: Optional[np.ndarray] = None,
    ) -> Problem:
        return Problem(moment=moment, lam=lam, epsilon=epsilon, diag_override=diag_override)

    def solve(
        self,
        prob: Problem,
        solver: SolverKind = SolverKind.BCD,
        W0: Optional[np.ndarray] = None,
    ) -> Estimate:
        return solve_problem(prob, solver, self.bcd_options, self.nesterov_options, W0)

    def estimate(
        self,
        data: Union[SampleMatrix, SecondMoment],
        lam: float,
        epsilon: float,
        solver: SolverKind = SolverKind.BCD,
    ) -> Estimate:
        """
        Solves the Gaussian problem for samples or a precomputed second moment.
        """
        moment = second_moment(data) if isinstance(data, SampleMatrix) else data
        return self.solve(self.problem(moment, lam, epsilon), solver)

    def estimate_binary(
        self,
        samples: SampleMatrix,
        lam: float,
        epsilon: float,
        solver: SolverKind = SolverKind.BCD,
    ) -> BinaryEstimate:
        return solve_binary(
            samples, lam, epsilon, solver, self.bcd_options, self.nesterov_options
        )

    def choose_penalty(
        self,
        data: Union[SampleMatrix, SecondMoment],
        alpha: float,
        relaxed: bool = False,
        kind: DataKind = DataKind.GAUSSIAN,
    ) -> PenaltyChoice:
        moment = second_moment(data) if isinstance(data, SampleMatrix) else data
        if kind is DataKind.BINARY:
            return binary_lambda(moment, alpha, relaxed)
        return gaussian_lambda(moment, alpha, relaxed)

    def path(
        self,
        moment: SecondMoment,
        lambdas: Sequence[float],
        epsilon: float,
        solver: SolverKind = SolverKind.BCD,
        warm_start: bool = True,
        diag_override: Optional[np.ndarray] = None,
    ) -> PathResult:
        """
        Solves along an increasing lambda grid, warm-starting each BCD solve from
        the previous W. Points that miss the gap target keep their last iterate
        and are flagged unconverged.
        """
        grid = [float(lam) for lam in lambdas]
        if not grid:
            raise ParameterError("The lambda grid is empty.")
        if any(lam <= 0 for lam in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParameterError("The lambda grid must be positive and strictly increasing.")

        points: List[PathPoint] = []
        W_prev = None
        for lam in grid:
            prob = self.problem(moment, lam, epsilon, diag_override)
            try:
                est = self.solve(prob, solver, W_prev if warm_start else None)
            except ConvergenceError as e:
                logger.warning(f"Path point lambda={lam:.4g} did not converge: {e.message}")
                est = e.estimate
            points.append(
                PathPoint(
                    lam=lam,
                    gap=est.gap,
                    iterations=est.iterations,
                    converged=est.converged,
                    X=est.X,
                )
            )
            W_prev = est.W
        logger.info(f"Path of {len(points)} points solved")
        return PathResult(points=points)

    def binary_problem(self, samples: SampleMatrix, lam: float, epsilon: float) -> Problem:
        return binary_problem(samples, lam, epsilon)

    def build_certificate(
        self, result: Union[Estimate, BinaryEstimate], prob: Problem
    ) -> Certificate:
        binary = isinstance(result, BinaryEstimate)
        est = result.estimate if binary else result
        if est.p != prob.p:
            raise DataError("Estimate and problem dimensions differ.")
        a, b = eigenvalue_bounds(prob)
        degrees = pattern_of(est.X).degrees()
        return Certificate(
            lam=prob.lam,
            epsilon=prob.epsilon,
            gap=est.gap,
            kkt_residual=kkt_residual(est.X, prob),
            solver=est.solver,
            iterations=est.iterations,
            converged=est.converged,
            gap_is_bound=est.gap_is_bound,
            eigenvalue_lower=a,
            eigenvalue_upper=b,
            screened_columns=sorted(screening_diagonal_columns(prob)),
            isolated_variables=sum(1 for d in degrees if d == 0),
            primal_objective=primal_objective(est.X, prob),
            dual_objective=dual_objective(est.W),
            binary=binary,
        )
