"""
Benchmark trials as Celery tasks. Arguments and results are JSON-serialisable so
that trials run the same way in-process (eager mode) and on a worker pool.
"""

import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from src.bench.schemas import Method, Stream, TrialRecord
from src.bench.synthetic import generate_ground_truth, noise_masked_moment, rng_for, sample_gaussian
from src.core.celery_app import celery_app
from src.core.logger import get_logger
from src.covariance.baselines import (
    classification_report,
    neighborhood_select_both,
    pattern_of,
    threshold_inverse,
)
from src.covariance.exceptions import SingularMatrixError
from src.covariance.files import default_names, write_matrix_csv
from src.covariance.model import is_positive_definite, second_moment, spd_inverse
from src.covariance.penalty import gaussian_lambda
from src.covariance.schemas import EdgeRule, SolverKind
from src.covariance.service import EstimationService

logger = get_logger(__name__)


def _record(**fields) -> Dict[str, Any]:
    return TrialRecord(**fields).model_dump(mode="json")


@celery_app.task(name="bench.recovery_trial")
def recovery_trial(
    p: int,
    delta: float,
    n: int,
    lam: float,
    epsilon: float,
    seed: int,
    trial_id: int,
    out_dir: Optional[str] = None,
) -> Dict[str, Any]:
    """
    One sample size of the structure-recovery experiment; the truth is shared
    across sample sizes, the samples are not.
    """
    logger.info(f"Recovery trial {trial_id}: p={p}, n={n}, lambda={lam}")
    truth = generate_ground_truth(p, delta, seed)
    samples = sample_gaussian(truth, n, seed, n)
    moment = second_moment(samples)

    start = time.perf_counter()
    est = EstimationService().estimate(moment, lam, epsilon)
    wall = time.perf_counter() - start

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        names = default_names(p)
        write_matrix_csv(out / "truth_precision.csv", truth.precision, names)
        write_matrix_csv(out / f"estimate_n{n}.csv", est.X, names)
        if is_positive_definite(moment.S):
            write_matrix_csv(out / f"sample_inverse_n{n}.csv", spd_inverse(moment.S), names)
        else:
            logger.info(f"S is singular at n={n}; no sample inverse written")

    return _record(
        trial_id=trial_id,
        n=n,
        p=p,
        delta=delta,
        lam=lam,
        method=Method.SML,
        report=classification_report(pattern_of(est.X), truth.pattern),
        wall_time=wall,
        gap=est.gap,
        seed=seed,
    )


@celery_app.task(name="bench.noise_masking_trial")
def noise_masking_trial(
    p: int,
    delta: float,
    sigma: float,
    lambdas: List[float],
    epsilon: float,
    seed: int,
    trial: int,
) -> Dict[str, Any]:
    truth = generate_ground_truth(p, delta, seed, trial)
    moment = noise_masked_moment(truth, sigma, rng_for(seed, Stream.NOISE, trial))
    path = EstimationService().path(moment, lambdas, epsilon)
    errors = [
        classification_report(pattern_of(point.X), truth.pattern).error_pct
        for point in path.points
    ]
    gaps = [point.gap for point in path.points]
    logger.info(f"Noise-masking trial {trial} done; errors={np.round(errors, 4).tolist()}")
    return {"trial": trial, "error_pct": errors, "gap": gaps}


@celery_app.task(name="bench.comparison_trial")
def comparison_trial(
    p: int,
    delta: float,
    n: int,
    alpha: float,
    epsilon: float,
    seed: int,
    trial: int,
    trial_id: int,
    lasso_lam: Optional[float] = None,
    threshold: Optional[float] = None,
) -> List[Dict[str, Any]]:
    """
    SML at lambda(alpha) against Lasso-OR and Lasso-AND neighborhood selection
    and the thresholded inverse of S, all on the same samples. The lasso penalty
    and the threshold default to the SML lambda(alpha). No threshold record is
    produced when S is singular.
    """
    truth = generate_ground_truth(p, delta, seed, trial)
    samples = sample_gaussian(truth, n, seed, n, trial)
    moment = second_moment(samples)
    lam = gaussian_lambda(moment, alpha).lam
    lasso = lam if lasso_lam is None else lasso_lam
    cut = lam if threshold is None else threshold
    common = dict(trial_id=trial_id, n=n, p=p, delta=delta, seed=seed)

    start = time.perf_counter()
    est = EstimationService().estimate(moment, lam, epsilon)
    sml_wall = time.perf_counter() - start

    start = time.perf_counter()
    patterns = neighborhood_select_both(moment, lasso)
    lasso_wall = time.perf_counter() - start

    records = [
        _record(
            **common,
            lam=lam,
            method=Method.SML,
            report=classification_report(pattern_of(est.X), truth.pattern),
            wall_time=sml_wall,
            gap=est.gap,
        ),
        _record(
            **common,
            lam=lasso,
            method=Method.LASSO_OR,
            report=classification_report(patterns[EdgeRule.OR], truth.pattern),
            wall_time=lasso_wall,
        ),
        _record(
            **common,
            lam=lasso,
            method=Method.LASSO_AND,
            report=classification_report(patterns[EdgeRule.AND], truth.pattern),
            wall_time=lasso_wall,
        ),
    ]

    start = time.perf_counter()
    try:
        thresholded = threshold_inverse(moment, cut)
    except SingularMatrixError:
        logger.info(f"S is singular at n={n}, trial {trial}; no threshold record")
        return records
    if not thresholded.preserves_pd:
        logger.debug(f"Threshold {cut:.4g} exceeds the PD bound {thresholded.pd_bound:.4g}")
    records.append(
        _record(
            **common,
            lam=cut,
            method=Method.THRESHOLD,
            report=classification_report(thresholded.pattern, truth.pattern),
            wall_time=time.perf_counter() - start,
        )
    )
    return records


@celery_app.task(name="bench.scaling_trial")
def scaling_trial(
    p: int,
    n: int,
    delta: float,
    alpha: float,
    epsilon: float,
    seed: int,
    instance: int,
) -> Dict[str, Any]:
    truth = generate_ground_truth(p, delta, seed, instance)
    moment = second_moment(sample_gaussian(truth, n, seed, p, instance))
    lam = gaussian_lambda(moment, alpha).lam

    start = time.perf_counter()
    est = EstimationService().estimate(moment, lam, epsilon, SolverKind.BCD)
    wall = time.perf_counter() - start
    logger.info(f"Scaling instance p={p}, n={n}: {wall:.2f}s, {est.iterations} sweeps")
    return {
        "p": p,
        "n": n,
        "instance": instance,
        "lam": lam,
        "wall_time": wall,
        "gap": est.gap,
        "iterations": est.iterations,
    }
