import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Union

import click
import numpy as np
import pandas as pd

from src.bench import experiments
from src.bench.synthetic import generate_ground_truth, sample_gaussian
from src.core.config import settings
from src.core.logger import ROOT_LOGGER, get_logger
from src.covariance.binary import SPIN_DIAGONAL_SHIFT, binary_estimate, binary_problem
from src.covariance.exceptions import ConvergenceError, CovarianceException, ParameterError
from src.covariance.files import (
    default_names,
    edge_table,
    emit_estimate,
    parse_moment_csv,
    parse_samples_csv,
    read_certificate,
    read_matrix_csv,
    write_json,
    write_matrix_csv,
)
from src.covariance.model import duality_gap, kkt_residual, second_moment, spd_inverse
from src.covariance.penalty import parse_auto_lambda
from src.covariance.schemas import (
    DataKind,
    NesterovOptions,
    PenaltyChoice,
    RunMeta,
    SampleMatrix,
    SecondMoment,
    SolverKind,
)
from src.covariance.service import EstimationService

logger = get_logger(__name__)

CERTIFY_TOLERANCE = 1e-9
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3


def input_options(f):
    """
    Options shared by every command that reads a data file.
    """
    options = [
        click.option("--input", "input_path", required=True, type=click.Path(dir_okay=False, path_type=Path)),
        click.option("--kind", type=click.Choice(["samples", "moment"]), default="samples", show_default=True),
        click.option("--binary", is_flag=True, help="Samples are +-1 spins."),
        click.option("--impute", type=float, default=None, help="Fill value for missing binary cells."),
        click.option("--no-remap", is_flag=True, help="Reject 0/1-coded binary files instead of remapping."),
        click.option("--n-samples", type=int, default=None, help="Sample count behind a moment file."),
        click.option("--top-variance", type=int, default=None, help="Keep the K highest-variance columns."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def select_top_variance(data: Union[SampleMatrix, SecondMoment], k: int):
    p = data.p
    if not 1 <= k <= p:
        raise ParameterError(f"--top-variance must lie in [1, {p}], got {k}.")
    variances = data.data.var(axis=0) if isinstance(data, SampleMatrix) else data.S.diagonal()
    keep = np.sort(np.argsort(-variances, kind="stable")[:k])
    names = [data.variable_names[j] for j in keep] if data.variable_names else [default_names(p)[j] for j in keep]
    logger.info(f"Keeping the {k} highest-variance of {p} columns")
    if isinstance(data, SampleMatrix):
        return SampleMatrix(
            data=data.data[:, keep],
            kind=data.kind,
            variable_names=names,
            imputed_cells=data.imputed_cells,
            remapped_binary=data.remapped_binary,
        )
    return SecondMoment.from_matrix(
        data.S[np.ix_(keep, keep)], n=data.n, mu_bar=data.mu_bar[keep], variable_names=names
    )


def load_input(
    input_path: Path,
    kind: str,
    binary: bool,
    impute: Optional[float],
    no_remap: bool,
    n_samples: Optional[int],
    top: Optional[int],
) -> Union[SampleMatrix, SecondMoment]:
    if kind == "moment":
        if binary:
            raise ParameterError("Binary estimation needs the +-1 samples, not a moment file.")
        if n_samples is None:
            logger.warning("No --n-samples for the moment file; recording n=1")
        data = parse_moment_csv(input_path, n=n_samples or 1)
    else:
        data = parse_samples_csv(
            input_path,
            DataKind.BINARY if binary else DataKind.GAUSSIAN,
            impute=impute,
            remap_binary=not no_remap,
        )
    if top is not None:
        data = select_top_variance(data, top)
    return data


def require_sample_count(kind: str, n_samples: Optional[int]) -> None:
    """
    lambda(alpha) depends on n, which a moment file does not carry.
    """
    if kind == "moment" and n_samples is None:
        raise ParameterError("Choosing lambda(alpha) from a moment file needs --n-samples.")


def resolve_lambda(
    service: EstimationService, data, lam_text: str, binary: bool
) -> tuple[float, Optional[PenaltyChoice]]:
    if lam_text.startswith("auto"):
        alpha, relaxed = parse_auto_lambda(lam_text)
        kind = DataKind.BINARY if binary else DataKind.GAUSSIAN
        choice = service.choose_penalty(data, alpha, relaxed, kind)
        return choice.lam, choice
    try:
        return float(lam_text), None
    except ValueError:
        raise ParameterError(f"--lambda must be a number or auto:<alpha>[:relaxed], got '{lam_text}'.")


@click.group()
@click.option("--log-level", default=None, help="Overrides LOG_LEVEL for this run.")
def cli(log_level: Optional[str]):
    """
    Sparse inverse-covariance estimation.
    """
    if log_level:
        root = logging.getLogger(ROOT_LOGGER)
        root.setLevel(log_level.upper())
        for handler in root.handlers:
            handler.setLevel(log_level.upper())


@cli.command()
@input_options
@click.option("--lambda", "lam_text", required=True, help="Penalty, or auto:<alpha>[:relaxed].")
@click.option("--epsilon", type=float, default=None, help="Duality-gap target.")
@click.option("--solver", type=click.Choice([s.value for s in (SolverKind.BCD, SolverKind.NESTEROV)]), default="bcd")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--nesterov-a", type=float, default=None, help="Lower spectral bound override.")
@click.option("--nesterov-b", type=float, default=None, help="Upper spectral bound override.")
@click.option("--max-steps", type=int, default=None, help="Nesterov step cap.")
@click.pass_context
def estimate(
    ctx, input_path, kind, binary, impute, no_remap, n_samples, top_variance,
    lam_text, epsilon, solver, out_dir, nesterov_a, nesterov_b, max_steps,
):
    """
    Solves one penalized estimation problem and writes the results.
    """
    eps = epsilon or settings.DEFAULT_EPSILON
    out = out_dir or settings.OUTPUT_DIR
    service = EstimationService(
        nesterov_options=NesterovOptions(
            a=nesterov_a,
            b=nesterov_b,
            max_steps=max_steps,
            gap_check_every=settings.NESTEROV_GAP_CHECK_EVERY,
        )
    )
    data = load_input(input_path, kind, binary, impute, no_remap, n_samples, top_variance)
    if lam_text.startswith("auto"):
        require_sample_count(kind, n_samples)
    lam, choice = resolve_lambda(service, data, lam_text, binary)
    solver_kind = SolverKind(solver)

    failure = None
    if binary:
        prob = binary_problem(data, lam, eps)
    else:
        moment = second_moment(data) if isinstance(data, SampleMatrix) else data
        prob = service.problem(moment, lam, eps)
    try:
        est = service.solve(prob, solver_kind)
    except ConvergenceError as e:
        failure, est = e, e.estimate
        logger.error(f"{e.message} Writing the last iterate as a partial result.")
    result = binary_estimate(est, prob.moment.mu_bar) if binary else est

    certificate = service.build_certificate(result, prob)
    samples = data if isinstance(data, SampleMatrix) else None
    meta = RunMeta(
        command="estimate",
        input_path=str(input_path),
        input_kind=kind,
        data_kind=DataKind.BINARY if binary else DataKind.GAUSSIAN,
        solver=solver_kind,
        lam=lam,
        epsilon=eps,
        alpha=choice.alpha if choice else None,
        relaxed_bonferroni=choice.relaxed_bonferroni if choice else False,
        n=prob.moment.n,
        p=prob.p,
        variable_names=prob.moment.variable_names or default_names(prob.p),
        top_variance=top_variance,
        imputed_cells=samples.imputed_cells if samples else 0,
        imputation_value=impute,
        remapped_binary=samples.remapped_binary if samples else False,
        zero_threshold_rel=settings.ZERO_THRESHOLD_REL,
        partial=failure is not None,
        versions=experiments.versions(),
    )
    emit_estimate(result, out, certificate, meta, prob.moment.variable_names)
    click.echo(certificate.model_dump_json())
    if failure is not None:
        ctx.exit(EXIT_CONVERGENCE)


@cli.command()
@input_options
@click.option("--alpha", type=float, required=True)
@click.option("--relaxed", is_flag=True, help="Use alpha in place of alpha / 2p^2.")
def penalty(input_path, kind, binary, impute, no_remap, n_samples, top_variance, alpha, relaxed):
    """
    Prints the error-controlling penalty lambda(alpha) and its inputs.
    """
    require_sample_count(kind, n_samples)
    data = load_input(input_path, kind, binary, impute, no_remap, n_samples, top_variance)
    choice = EstimationService().choose_penalty(
        data, alpha, relaxed, DataKind.BINARY if binary else DataKind.GAUSSIAN
    )
    click.echo(choice.model_dump_json())


def parse_grid(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"--lambdas must be comma-separated numbers, got '{text}'.")


@cli.command()
@input_options
@click.option("--lambdas", required=True, help="Comma-separated increasing lambda grid.")
@click.option("--epsilon", type=float, default=None)
@click.option("--solver", type=click.Choice([s.value for s in (SolverKind.BCD, SolverKind.NESTEROV)]), default="bcd")
@click.option("--cold", is_flag=True, help="Disable warm starts.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_context
def path(
    ctx, input_path, kind, binary, impute, no_remap, n_samples, top_variance,
    lambdas, epsilon, solver, cold, out_dir,
):
    """
    Solves along a lambda grid and writes path.csv and path_entries.csv.
    """
    eps = epsilon or settings.DEFAULT_EPSILON
    out = Path(out_dir or settings.OUTPUT_DIR)
    data = load_input(input_path, kind, binary, impute, no_remap, n_samples, top_variance)
    service = EstimationService()
    if binary:
        moment = binary_problem(data, 1.0, eps).moment
        override = moment.S.diagonal() + SPIN_DIAGONAL_SHIFT
    else:
        moment = second_moment(data) if isinstance(data, SampleMatrix) else data
        override = None
    result = service.path(moment, parse_grid(lambdas), eps, SolverKind(solver), not cold, override)

    out.mkdir(parents=True, exist_ok=True)
    experiments.path_summary_table(result).to_csv(out / "path.csv", index=False, float_format="%.17g")
    rows, cols = np.triu_indices(moment.p, k=1)
    entries = [
        {"lam": pt.lam, "i": int(k), "j": int(j), "value": float(pt.X[k, j])}
        for pt in result.points
        for k, j in zip(rows, cols)
    ]
    pd.DataFrame(entries, columns=["lam", "i", "j", "value"]).to_csv(
        out / "path_entries.csv", index=False, float_format="%.17g"
    )
    unconverged = [pt.lam for pt in result.points if not pt.converged]
    click.echo(json.dumps({"points": len(result.points), "unconverged": unconverged}))
    if unconverged:
        ctx.exit(EXIT_CONVERGENCE)


@cli.command()
@click.option("--p", "p", type=int, required=True)
@click.option("--delta", type=float, required=True)
@click.option("--n", "n", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
def synth(p, delta, n, seed, out_dir):
    """
    Generates a sparse ground truth and Gaussian samples from it.
    """
    out = Path(out_dir or settings.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    truth = generate_ground_truth(p, delta, seed)
    samples = sample_gaussian(truth, n, seed, n)
    names = default_names(p)
    write_matrix_csv(out / "truth_precision.csv", truth.precision, names)
    write_matrix_csv(out / "truth_covariance.csv", truth.covariance, names)
    edge_table(truth.precision, names, rel=0.0).to_csv(out / "truth_edges.csv", index=False, float_format="%.17g")
    write_matrix_csv(out / "samples.csv", samples.data, names)
    write_json(
        out / "synth_meta.json",
        experiments.run_metadata("synth", seed, dict(p=p, delta=delta, n=n, shift=truth.shift)),
    )
    click.echo(json.dumps({"p": p, "n": n, "edges": len(truth.pattern.edges), "out": str(out)}))


BENCHMARKS = ["recovery", "path", "masking", "comparison", "scaling", "sorted"]


@cli.command()
@click.argument("name", type=click.Choice(BENCHMARKS))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--trials", type=int, default=None, help="Overrides the trial count.")
@click.option("--epsilon", type=float, default=None)
@click.option("--fast", is_flag=True, help="5 comparison trials instead of 30.")
@click.option("--large", is_flag=True, help="Scaling runs up to p=1000.")
@click.option(
    "--threshold", type=float, default=None,
    help="Cut for the thresholded S^-1 in the comparison; defaults to lambda(alpha).",
)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
def bench(name, seed, trials, epsilon, fast, large, threshold, out_dir):
    """
    Runs one synthetic experiment by name.
    """
    out = Path(out_dir or settings.OUTPUT_DIR) / name
    if name == "recovery":
        records = experiments.run_recovery_experiment(seed=seed, epsilon=epsilon, out_dir=out)
        summary = {"trials": len(records), "power": [r.report.power for r in records]}
    elif name == "path":
        report = experiments.run_path_following(seed=seed, epsilon=epsilon, out_dir=out)
        summary = {
            "terminal_lambda": report.terminal_lambda,
            "terminal_points_diagonal": report.terminal_points_diagonal,
            "exact_recovery_lambdas": report.exact_recovery_lambdas,
        }
    elif name == "masking":
        rows = experiments.run_noise_masking(trials=trials or 10, seed=seed, epsilon=epsilon, out_dir=out)
        summary = {"rows": [r.model_dump() for r in rows]}
    elif name == "comparison":
        count = trials or (5 if fast else 30)
        records = experiments.run_classifier_comparison(
            trials=count, seed=seed, threshold=threshold, epsilon=epsilon, out_dir=out
        )
        summary = {"records": len(records)}
    elif name == "scaling":
        p_list = (50, 100, 200, 500, 1000) if large else (50, 100, 200)
        report = experiments.run_scaling_bench(p_list, seed=seed, instances=trials or 3, epsilon=epsilon, out_dir=out)
        summary = report.model_dump()
    else:
        table = experiments.run_sorted_magnitudes(seed=seed, epsilon=epsilon, out_dir=out)
        summary = {"entries": len(table)}
    click.echo(json.dumps(summary, default=float))


@cli.command()
@input_options
@click.option("--covariance", "covariance_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--precision", "precision_path", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--certificate", "certificate_path", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--lambda", "lam", type=float, default=None)
@click.pass_context
def certify(
    ctx, input_path, kind, binary, impute, no_remap, n_samples, top_variance,
    covariance_path, precision_path, certificate_path, lam,
):
    """
    Recomputes the duality gap and KKT residual of a (W, X) pair from files.
    """
    recorded = read_certificate(certificate_path) if certificate_path else None
    if lam is None:
        if recorded is None:
            raise ParameterError("certify needs --lambda or --certificate.")
        lam = recorded.lam
    binary = binary or (recorded.binary if recorded else False)
    eps = recorded.epsilon if recorded else settings.DEFAULT_EPSILON

    data = load_input(input_path, kind, binary, impute, no_remap, n_samples, top_variance)
    if binary:
        prob = binary_problem(data, lam, eps)
    else:
        moment = second_moment(data) if isinstance(data, SampleMatrix) else data
        prob = EstimationService().problem(moment, lam, eps)

    W, _ = read_matrix_csv(covariance_path)
    X = read_matrix_csv(precision_path)[0] if precision_path else spd_inverse(W, "covariance")
    gap = duality_gap(W, prob)
    kkt = kkt_residual(X, prob)
    report = {"lam": lam, "gap": gap, "kkt_residual": kkt}

    consistent = True
    if recorded is not None:
        consistent = (
            abs(gap - recorded.gap) <= CERTIFY_TOLERANCE
            and abs(kkt - recorded.kkt_residual) <= CERTIFY_TOLERANCE
        )
        report.update(
            certificate_gap=recorded.gap,
            certificate_kkt_residual=recorded.kkt_residual,
            consistent=consistent,
        )
        if not consistent:
            logger.error("Recomputed gap/KKT residual disagree with the certificate")
    click.echo(json.dumps(report))
    if not consistent:
        ctx.exit(EXIT_CONVERGENCE)


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Runs the CLI and maps failures to exit codes: 2 for parse or configuration
    errors, 3 for convergence failures.
    """
    try:
        rv = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="precisionlab",
            standalone_mode=False,
        )
    except click.ClickException as e:
        e.show()
        return EXIT_CONFIG
    except click.exceptions.Abort:
        return EXIT_CONFIG
    except ConvergenceError as e:
        logger.error(e.message)
        return EXIT_CONVERGENCE
    except CovarianceException as e:
        logger.error(e.message)
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        raise
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(cli_main())
