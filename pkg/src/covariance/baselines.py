"""
Comparison estimators for the sparsity pattern and the classification
statistics used to score any estimated pattern against the truth.
"""

from typing import Dict, Optional, Union

import numpy as np
from scipy import linalg

from src.core.logger import get_logger
from src.covariance.bcd import lasso_dual_solve
from src.covariance.exceptions import DimensionError, DomainError, ParameterError, SingularMatrixError
from src.covariance.model import second_moment, spd_inverse, zero_threshold
from src.covariance.schemas import (
    BcdOptions,
    ClassificationReport,
    EdgeRule,
    SampleMatrix,
    SecondMoment,
    SparsityPattern,
    ThresholdReport,
    symmetrize,
)

logger = get_logger(__name__)

SINGULAR_RCOND = 1e-12


def pattern_of(X: np.ndarray, threshold: Optional[float] = None) -> SparsityPattern:
    X = symmetrize(X)
    thr = zero_threshold(X) if threshold is None else threshold
    rows, cols = np.nonzero(np.triu(np.abs(X) > thr, k=1))
    return SparsityPattern(p=X.shape[0], edges=zip(rows.tolist(), cols.tolist()))


def threshold_inverse(moment: SecondMoment, t: float) -> ThresholdReport:
    """
    Thresholds S^-1 at t. The PD bound is min_i (S^-1)_ii, the value of the
    quadratic form at the extreme points +-e_i of the unit l1 ball.
    """
    if t < 0:
        raise ParameterError(f"Threshold must be nonnegative, got {t}.")
    eig = linalg.eigvalsh(moment.S)
    # rank-deficient S can still pass a Cholesky factorization on roundoff
    if eig[0] <= SINGULAR_RCOND * max(eig[-1], 0.0):
        raise SingularMatrixError()
    try:
        S_inv = spd_inverse(moment.S, "second moment matrix")
    except DomainError:
        raise SingularMatrixError()
    bound = float(np.min(S_inv.diagonal()))
    return ThresholdReport(
        pattern=pattern_of(S_inv, threshold=t),
        threshold=t,
        pd_bound=bound,
        preserves_pd=t <= bound,
    )


def _as_moment(data: Union[SampleMatrix, SecondMoment]) -> SecondMoment:
    return second_moment(data) if isinstance(data, SampleMatrix) else data


def neighborhood_supports(
    data: Union[SampleMatrix, SecondMoment],
    lam: float,
    opts: Optional[BcdOptions] = None,
) -> np.ndarray:
    """
    selected[k, j] is True when the lasso regression of variable k on the others
    keeps variable j. Each regression is

        min_b (1/2) b^T S_{-k,-k} b - S_{-k,k}^T b + lam ||b||_1

    on the raw second moments, solved with the same coordinate-descent engine
    as the column updates.
    """
    moment = _as_moment(data)
    p = moment.p
    if p < 2:
        raise DimensionError(f"Neighborhood selection needs p >= 2, got {p}.")
    if lam <= 0:
        raise ParameterError(f"lambda must be positive, got {lam}.")
    opts = opts or BcdOptions()
    S = moment.S

    selected = np.zeros((p, p), dtype=bool)
    for k in range(p):
        if S[k, k] <= 0:
            logger.warning(f"Variable {k} has zero variance; its regression is empty")
            continue
        idx = np.arange(p) != k
        gram = S[np.ix_(idx, idx)]
        if np.any(gram.diagonal() <= 0):
            logger.warning(f"Regression of variable {k} has zero-variance predictors; pinned at 0")
        beta = lasso_dual_solve(gram / 2.0, S[idx, k], lam, opts)
        selected[k, idx] = beta != 0.0
    return selected


def _combine(selected: np.ndarray, rule: EdgeRule) -> SparsityPattern:
    both = selected & selected.T if rule is EdgeRule.AND else selected | selected.T
    rows, cols = np.nonzero(np.triu(both, k=1))
    return SparsityPattern(p=selected.shape[0], edges=zip(rows.tolist(), cols.tolist()))


def neighborhood_select(
    data: Union[SampleMatrix, SecondMoment],
    lam: float,
    rule: EdgeRule = EdgeRule.OR,
    opts: Optional[BcdOptions] = None,
) -> SparsityPattern:
    return _combine(neighborhood_supports(data, lam, opts), rule)


def neighborhood_select_both(
    data: Union[SampleMatrix, SecondMoment],
    lam: float,
    opts: Optional[BcdOptions] = None,
) -> Dict[EdgeRule, SparsityPattern]:
    """
    OR and AND patterns from a single set of p regressions.
    """
    selected = neighborhood_supports(data, lam, opts)
    return {rule: _combine(selected, rule) for rule in EdgeRule}


def classification_report(estimated: SparsityPattern, truth: SparsityPattern) -> ClassificationReport:
    if estimated.p != truth.p:
        raise DimensionError(
            f"Cannot compare patterns of dimension {estimated.p} and {truth.p}."
        )
    p = truth.p
    hits = len(estimated.edges & truth.edges)
    false_pos = len(estimated.edges - truth.edges)
    false_neg = len(truth.edges - estimated.edges)
    return ClassificationReport(
        power=hits / len(truth.edges) if truth.edges else 1.0,
        ppv=hits / len(estimated.edges) if estimated.edges else 1.0,
        density=estimated.density,
        # ordered off-diagonal entries, hence the factor 2 over p^2
        error_pct=2.0 * (false_pos + false_neg) / (p * p),
        false_positives=false_pos,
        false_negatives=false_neg,
    )
