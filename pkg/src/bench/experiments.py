"""
Experiment drivers: each dispatches its trials through Celery, collects the
results, and writes sorted CSV tables plus a JSON metadata file.
"""

import math
import platform
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from celery.exceptions import TimeoutError as CeleryTimeoutError

from src.bench.schemas import (
    NoiseMaskingRow,
    PathFollowingReport,
    RunMetadata,
    ScalingReport,
    ScalingRow,
    TrialRecord,
)
from src.bench.synthetic import RNG_NAME, generate_ground_truth, generator_constants, sample_gaussian
from src.bench.tasks import comparison_trial, noise_masking_trial, recovery_trial, scaling_trial
from src.core.config import settings
from src.core.logger import get_logger
from src.covariance.baselines import pattern_of
from src.covariance.exceptions import ParameterError
from src.covariance.files import FLOAT_FORMAT, write_json
from src.covariance.model import offdiag_abs_max, second_moment, spd_inverse
from src.covariance.penalty import gaussian_lambda
from src.covariance.service import EstimationService

logger = get_logger(__name__)


def _collect(results, timeout: Optional[float] = None) -> List[Any]:
    return [r.get(timeout=timeout or settings.BENCH_TIMEOUT_SECONDS) for r in results]


def versions() -> Dict[str, str]:
    import celery
    import pydantic
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.__version__,
        "celery": celery.__version__,
    }


def run_metadata(experiment: str, seed: int, parameters: Dict[str, Any]) -> RunMetadata:
    return RunMetadata(
        experiment=experiment,
        seed=seed,
        rng=RNG_NAME,
        parameters=parameters,
        constants=generator_constants(),
        versions=versions(),
    )


def write_records(records: Sequence[TrialRecord], out_dir: Path, stem: str) -> List[Path]:
    """
    <stem>.csv holds the reproducible columns; wall times go to <stem>_timings.csv.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(records, key=lambda r: (r.trial_id, r.method.value))
    table = pd.DataFrame([r.row() for r in ordered])
    timings = pd.DataFrame(
        [{"trial_id": r.trial_id, "method": r.method.value, "wall_time": r.wall_time} for r in ordered]
    )
    paths = [out_dir / f"{stem}.csv", out_dir / f"{stem}_timings.csv"]
    table.to_csv(paths[0], index=False, float_format=FLOAT_FORMAT)
    timings.to_csv(paths[1], index=False, float_format=FLOAT_FORMAT)
    return paths


def run_recovery_experiment(
    p: int = 30,
    delta: float = 0.1,
    n_list: Sequence[int] = (60, 30, 20),
    lam: float = 0.1,
    seed: int = 0,
    epsilon: Optional[float] = None,
    out_dir: Optional[Path] = None,
) -> List[TrialRecord]:
    eps = epsilon or settings.DEFAULT_EPSILON
    plots = None if out_dir is None else str(Path(out_dir) / "recovery_matrices")
    pending = [
        recovery_trial.delay(p, delta, n, lam, eps, seed, trial_id, plots)
        for trial_id, n in enumerate(n_list)
    ]
    records = [TrialRecord.model_validate(r) for r in _collect(pending)]
    if out_dir is not None:
        write_records(records, Path(out_dir), "recovery")
        params = dict(p=p, delta=delta, n_list=list(n_list), lam=lam, epsilon=eps)
        write_json(Path(out_dir) / "recovery_meta.json", run_metadata("recovery", seed, params))
    return records


def run_path_following(
    p: int = 5,
    n: int = 100,
    lambda_grid: Optional[Sequence[float]] = None,
    seed: int = 0,
    delta: float = 0.3,
    epsilon: Optional[float] = None,
    out_dir: Optional[Path] = None,
) -> PathFollowingReport:
    """
    Warm-started path over an increasing lambda grid. Above max_{k>j} |S_kj|
    every estimate must be diagonal.
    """
    eps = epsilon or settings.DEFAULT_EPSILON
    truth = generate_ground_truth(p, delta, seed)
    moment = second_moment(sample_gaussian(truth, n, seed, n))
    terminal = offdiag_abs_max(moment.S)
    if lambda_grid is None:
        lambda_grid = np.linspace(terminal / 20.0, 1.2 * terminal, 24).tolist()

    path = EstimationService().path(moment, lambda_grid, eps)
    exact, terminal_ok = [], True
    for point in path.points:
        pattern = pattern_of(point.X)
        if pattern.edges == truth.pattern.edges:
            exact.append(point.lam)
        if point.lam >= terminal and pattern.edges:
            terminal_ok = False
            logger.error(f"Estimate at lambda={point.lam:.4g} >= {terminal:.4g} is not diagonal")

    report = PathFollowingReport(
        path=path,
        truth=truth,
        terminal_lambda=terminal,
        exact_recovery_lambdas=exact,
        terminal_points_diagonal=terminal_ok,
    )
    if out_dir is not None:
        write_path_tables(report, Path(out_dir))
        params = dict(p=p, n=n, delta=delta, lambda_grid=list(lambda_grid), epsilon=eps)
        write_json(Path(out_dir) / "path_meta.json", run_metadata("path", seed, params))
    return report


def path_entry_table(report: PathFollowingReport) -> pd.DataFrame:
    """
    Every off-diagonal entry of every path estimate, tagged by the truth.
    """
    p = report.truth.p
    rows, cols = np.triu_indices(p, k=1)
    true_edges = report.truth.pattern.edges
    frames = [
        pd.DataFrame(
            {
                "lam": point.lam,
                "i": rows,
                "j": cols,
                "value": point.X[rows, cols],
                "true_nonzero": [(int(k), int(j)) in true_edges for k, j in zip(rows, cols)],
            }
        )
        for point in report.path.points
    ]
    return pd.concat(frames, ignore_index=True)


def path_summary_table(path) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "lam": pt.lam,
                "gap": pt.gap,
                "iterations": pt.iterations,
                "converged": pt.converged,
                "edges": len(pattern_of(pt.X).edges),
            }
            for pt in path.points
        ]
    )


def write_path_tables(report: PathFollowingReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    path_summary_table(report.path).to_csv(out_dir / "path.csv", index=False, float_format=FLOAT_FORMAT)
    path_entry_table(report).to_csv(out_dir / "path_entries.csv", index=False, float_format=FLOAT_FORMAT)


def default_masking_grid(sigma: float) -> List[float]:
    return (sigma * np.logspace(-2, 1, 13)).tolist()


def run_noise_masking(
    p: int = 50,
    sigma: float = 0.1,
    lambda_grid: Optional[Sequence[float]] = None,
    trials: int = 10,
    seed: int = 0,
    delta: float = 0.05,
    epsilon: Optional[float] = None,
    out_dir: Optional[Path] = None,
) -> List[NoiseMaskingRow]:
    if sigma <= 0:
        raise ParameterError(f"Noise level must be positive, got {sigma}.")
    eps = epsilon or settings.DEFAULT_EPSILON
    grid = sorted(float(v) for v in (lambda_grid or default_masking_grid(sigma)))
    pending = [
        noise_masking_trial.delay(p, delta, sigma, grid, eps, seed, trial)
        for trial in range(trials)
    ]
    results = sorted(_collect(pending), key=lambda r: r["trial"])
    errors = np.array([r["error_pct"] for r in results])

    rows = [
        NoiseMaskingRow(
            lam=lam,
            log_ratio=math.log(lam / sigma),
            mean_error_pct=float(errors[:, k].mean()),
            std_error_pct=float(errors[:, k].std()),
            trials=trials,
        )
        for k, lam in enumerate(grid)
    ]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pd.DataFrame([r.model_dump() for r in rows]).to_csv(
            out / "noise_masking.csv", index=False, float_format=FLOAT_FORMAT
        )
        params = dict(p=p, sigma=sigma, delta=delta, lambda_grid=grid, trials=trials, epsilon=eps)
        write_json(out / "noise_masking_meta.json", run_metadata("masking", seed, params))
    return rows


def run_classifier_comparison(
    p: int = 30,
    delta: float = 0.05,
    n_grid: Sequence[int] = tuple(range(10, 311, 50)),
    trials: int = 30,
    alpha: float = 0.05,
    seed: int = 0,
    lasso_lam: Optional[float] = None,
    threshold: Optional[float] = None,
    epsilon: Optional[float] = None,
    out_dir: Optional[Path] = None,
) -> List[TrialRecord]:
    eps = epsilon or settings.DEFAULT_EPSILON
    pending = [
        comparison_trial.delay(
            p, delta, n, alpha, eps, seed, trial, i * trials + trial, lasso_lam, threshold
        )
        for i, n in enumerate(n_grid)
        for trial in range(trials)
    ]
    records = [TrialRecord.model_validate(r) for batch in _collect(pending) for r in batch]
    records.sort(key=lambda r: (r.trial_id, r.method.value))
    if out_dir is not None:
        out = Path(out_dir)
        write_records(records, out, "comparison")
        comparison_summary(records).to_csv(out / "comparison_summary.csv", index=False, float_format=FLOAT_FORMAT)
        params = dict(
            p=p,
            delta=delta,
            n_grid=list(n_grid),
            trials=trials,
            alpha=alpha,
            lasso_lam="sml lambda(alpha)" if lasso_lam is None else lasso_lam,
            threshold="sml lambda(alpha)" if threshold is None else threshold,
            epsilon=eps,
        )
        write_json(out / "comparison_meta.json", run_metadata("comparison", seed, params))
    return records


def comparison_summary(records: Sequence[TrialRecord]) -> pd.DataFrame:
    """
    Means of power, ppv, density and error per (n, method).
    """
    table = pd.DataFrame([r.row() for r in records])
    metrics = ["power", "ppv", "density", "error_pct"]
    return table.groupby(["n", "method"], sort=True)[metrics].mean().reset_index()


def run_scaling_bench(
    p_list: Sequence[int] = (50, 100, 200),
    seed: int = 0,
    instances: int = 3,
    delta: float = 0.1,
    alpha: float = 0.05,
    epsilon: Optional[float] = None,
    timeout: Optional[float] = None,
    out_dir: Optional[Path] = None,
) -> ScalingReport:
    """
    BCD wall time against p with n = ceil(p / 3). Instances that exceed the
    timeout are counted as censored and left out of the mean.
    """
    if list(p_list) != sorted(p_list):
        raise ParameterError("p_list must be ascending.")
    eps = epsilon or settings.DEFAULT_EPSILON
    limit = timeout or settings.BENCH_TIMEOUT_SECONDS

    rows = []
    for p in p_list:
        n = math.ceil(p / 3)
        pending = [
            scaling_trial.delay(p, n, delta, alpha, eps, seed, i) for i in range(instances)
        ]
        done, censored = [], 0
        for result in pending:
            try:
                record = result.get(timeout=limit)
            except CeleryTimeoutError:
                censored += 1
                continue
            if record["wall_time"] > limit:
                censored += 1
                continue
            done.append(record)
        rows.append(
            ScalingRow(
                p=p,
                n=n,
                instances=instances,
                mean_wall_time=float(np.mean([r["wall_time"] for r in done])) if done else math.inf,
                max_gap=max((r["gap"] for r in done), default=None),
                censored=censored,
            )
        )

    finite = [r for r in rows if math.isfinite(r.mean_wall_time) and r.mean_wall_time > 0]
    slope = None
    if len(finite) >= 2:
        slope = float(
            np.polyfit(np.log([r.p for r in finite]), np.log([r.mean_wall_time for r in finite]), 1)[0]
        )
        logger.info(f"Scaling log-log slope: {slope:.2f}")

    report = ScalingReport(rows=rows, loglog_slope=slope)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pd.DataFrame([r.model_dump() for r in rows]).to_csv(
            out / "scaling.csv", index=False, float_format=FLOAT_FORMAT
        )
        params = dict(p_list=list(p_list), instances=instances, delta=delta, alpha=alpha, epsilon=eps, timeout=limit)
        write_json(out / "scaling_meta.json", {**run_metadata("scaling", seed, params).model_dump(), "loglog_slope": slope})
    return report


def run_sorted_magnitudes(
    p: int = 100,
    delta: float = 0.1,
    n: int = 200,
    seed: int = 0,
    lam: Optional[float] = None,
    alpha: float = 0.05,
    epsilon: Optional[float] = None,
    out_dir: Optional[Path] = None,
) -> pd.DataFrame:
    """
    Sorted absolute off-diagonal entries of S^-1 and of the SML estimate for one
    instance. lambda defaults to lambda(alpha).
    """
    eps = epsilon or settings.DEFAULT_EPSILON
    truth = generate_ground_truth(p, delta, seed)
    moment = second_moment(sample_gaussian(truth, n, seed, n))
    lam = lam if lam is not None else gaussian_lambda(moment, alpha).lam
    est = EstimationService().estimate(moment, lam, eps)

    rows, cols = np.triu_indices(p, k=1)
    table = pd.DataFrame(
        {
            "rank": np.arange(1, rows.size + 1),
            "sample_inverse": np.sort(np.abs(spd_inverse(moment.S)[rows, cols]))[::-1],
            "sml_estimate": np.sort(np.abs(est.X[rows, cols]))[::-1],
        }
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "sorted_magnitudes.csv", index=False, float_format=FLOAT_FORMAT)
        params = dict(p=p, delta=delta, n=n, lam=lam, epsilon=eps)
        write_json(out / "sorted_meta.json", run_metadata("sorted", seed, params))
    return table
