"""
Block coordinate descent on the dual problem

    max log det W  s.t.  ||W - S||_inf <= lam,  diag(W) fixed,

one row/column of W at a time. Each column update is the box-constrained QP

    y = argmin { y^T W_{-j,-j}^{-1} y : ||y - S_j||_inf <= lam }

solved through its lasso dual  min_x x^T W_{-j,-j} x - S_j^T x + lam ||x||_1,
with y = 2 W_{-j,-j} x.
"""

from typing import List, Optional

import numpy as np
from scipy import linalg

from src.core.logger import get_logger
from src.covariance.exceptions import ConvergenceError, InnerConvergenceError, NumericError
from src.covariance.model import (
    box_project,
    cholesky,
    duality_gap,
    initial_dual_point,
    is_positive_definite,
    logdet,
    spd_inverse,
)
from src.covariance.schemas import (
    BcdOptions,
    ColumnWorkspace,
    Estimate,
    Problem,
    SolverKind,
)

logger = get_logger(__name__)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def qp_tolerance(s: np.ndarray, lam: float, opts: BcdOptions) -> float:
    """
    Bound on the column QP optimality residual, in the units of the right-hand side.
    """
    scale = max(1.0, lam, float(np.max(np.abs(s))) if s.size else 0.0)
    return opts.qp_tol * scale


def lasso_dual_solve(
    Q_gram: np.ndarray,
    s: np.ndarray,
    lam: float,
    opts: BcdOptions,
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Cyclic coordinate descent for min_x x^T Q x - s^T x + lam ||x||_1.

    Coordinates with a non-positive Gram diagonal are pinned at zero. Stops once
    a pass moves no coordinate by more than opts.qp_tol and the subgradient
    residual of the free coordinates is within qp_tolerance.
    """
    Q = np.asarray(Q_gram, dtype=float)
    s = np.asarray(s, dtype=float)
    m = s.shape[0]
    x = np.zeros(m) if x0 is None else np.array(x0, dtype=float)
    diag = Q.diagonal()
    active = diag > 0
    x[~active] = 0.0
    Qx = Q @ x
    tol = qp_tolerance(s, lam, opts)

    change = np.inf
    for _ in range(opts.qp_max_iter):
        change = 0.0
        for i in range(m):
            if not active[i]:
                continue
            rho = s[i] - 2.0 * (Qx[i] - diag[i] * x[i])
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / (2.0 * diag[i])
            delta = new - x[i]
            if delta != 0.0:
                Qx += delta * Q[:, i]
                x[i] = new
                change = max(change, abs(delta))
        if change <= opts.qp_tol:
            # drop the drift of the incremental updates before checking
            Qx = Q @ x
            if _box_residual(2.0 * Qx[active], x[active], s[active], lam) <= tol:
                return x
    raise InnerConvergenceError(opts.qp_max_iter, change)


def column_qp(ws: ColumnWorkspace, lam: float, opts: BcdOptions) -> np.ndarray:
    """
    Solves the column QP of one BCD update and refreshes the workspace warm start.
    """
    x = lasso_dual_solve(ws.minor, ws.rhs, lam, opts, x0=ws.warm_start)
    y = 2.0 * ws.minor @ x
    residual = _box_residual(y, x, ws.rhs, lam)
    if residual > qp_tolerance(ws.rhs, lam, opts):
        raise NumericError(
            f"Column QP residual {residual:.3e} exceeds the tolerance "
            f"{qp_tolerance(ws.rhs, lam, opts):.3e}."
        )
    ws.warm_start = x
    # y sits in the box up to the residual; clip the roundoff
    return np.clip(y, ws.rhs - lam, ws.rhs + lam)


def _box_residual(y: np.ndarray, x: np.ndarray, s: np.ndarray, lam: float) -> float:
    """
    Optimality of the lasso solution x read off y = 2 Q x: y - s = -lam * sign(x_i)
    wherever x_i != 0, and |y_i - s_i| <= lam elsewhere.
    """
    if x.size == 0:
        return 0.0
    d = y - s
    nz = x != 0
    viol = np.where(nz, np.abs(d + lam * np.sign(x)), np.maximum(np.abs(d) - lam, 0.0))
    return float(np.max(viol))


def qp_value(ws: ColumnWorkspace, y: np.ndarray) -> float:
    return float(y @ linalg.cho_solve(ws.minor_factor, y))


def lasso_value(Q_gram: np.ndarray, s: np.ndarray, lam: float, x: np.ndarray) -> float:
    return float(x @ Q_gram @ x - s @ x + lam * np.abs(x).sum())


class BcdSolver:
    """
    One solver instance per problem. The instance owns the iterate W, the lasso
    warm starts and the dual-objective trace; it is not shareable during a solve.
    """

    def __init__(self, prob: Problem, opts: BcdOptions | None = None):
        self.prob = prob
        self.opts = opts or BcdOptions()
        self.p = prob.p
        self.warm_starts: List[Optional[np.ndarray]] = [None] * self.p
        self.logdet_trace: List[float] = []
        self.W: np.ndarray | None = None

    def _start(self, W0: Optional[np.ndarray]) -> np.ndarray:
        if W0 is None:
            return initial_dual_point(self.prob)
        W = box_project(W0, self.prob)
        if is_positive_definite(W):
            return W
        logger.warning("Warm start is not positive definite after projection; cold start")
        return initial_dual_point(self.prob)

    def update_column(self, j: int) -> None:
        W, prob = self.W, self.prob
        idx = np.arange(self.p) != j
        minor = W[np.ix_(idx, idx)]
        factor = cholesky(minor, f"minor W[-{j},-{j}]")
        ws = ColumnWorkspace(
            minor=minor,
            minor_factor=factor,
            rhs=prob.S[idx, j],
            radius=prob.lam,
            warm_start=self.warm_starts[j],
        )
        y = column_qp(ws, prob.lam, self.opts)
        self.warm_starts[j] = ws.warm_start

        schur = W[j, j] - qp_value(ws, y)
        if not schur > 0:
            raise NumericError(
                f"Schur complement of column {j} is not positive ({schur:.3e})."
            )
        W[idx, j] = y
        W[j, idx] = y
        minor_logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
        self.logdet_trace.append(minor_logdet + float(np.log(schur)))

    def solve(self, W0: Optional[np.ndarray] = None) -> Estimate:
        prob, opts = self.prob, self.opts
        self.W = self._start(W0)
        logger.info(
            f"BCD start: p={self.p}, lambda={prob.lam:.4g}, epsilon={prob.epsilon:.3g}"
        )

        gap = np.inf
        for sweep in range(1, opts.max_sweeps + 1):
            if self.p > 1:
                for j in range(self.p):
                    self.update_column(j)

            if sweep % opts.check_every == 0 or sweep == opts.max_sweeps:
                gap = duality_gap(self.W, prob)
                logger.debug(f"BCD sweep {sweep}: gap={gap:.3e}")
                if gap <= prob.epsilon:
                    logger.info(f"BCD converged in {sweep} sweeps, gap={gap:.3e}")
                    return self._estimate(gap, sweep, converged=True)

        logger.warning(
            f"BCD stopped after {opts.max_sweeps} sweeps with gap {gap:.3e}"
        )
        last = self._estimate(gap, opts.max_sweeps, converged=False)
        raise ConvergenceError(SolverKind.BCD.value, gap, prob.epsilon, estimate=last)

    def _estimate(self, gap: float, sweeps: int, converged: bool) -> Estimate:
        return Estimate(
            W=self.W.copy(),
            X=spd_inverse(self.W, "dual iterate"),
            gap=gap,
            iterations=sweeps,
            solver=SolverKind.BCD,
            converged=converged,
        )


def solve_bcd(
    prob: Problem, opts: BcdOptions | None = None, W0: Optional[np.ndarray] = None
) -> Estimate:
    return BcdSolver(prob, opts).solve(W0)


def dual_objective_trace(prob: Problem, opts: BcdOptions | None = None) -> List[float]:
    """
    log det W after every column update of a full solve (convergence diagnostics).
    """
    solver = BcdSolver(prob, opts)
    try:
        solver.solve()
    except ConvergenceError:
        pass
    return [logdet(initial_dual_point(prob))] + solver.logdet_trace
