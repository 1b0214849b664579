"""
Sparse ground-truth generation and sampling.

All randomness comes from numpy's counter-based Philox generator, keyed by
(seed, stream, index...) through SeedSequence spawn keys, so every draw is a
pure function of its key on any platform.
"""

import math

import numpy as np
from scipy import linalg

from src.bench.schemas import GroundTruth, Stream
from src.core.logger import get_logger
from src.covariance.exceptions import DomainError, GenerationError, ParameterError
from src.covariance.model import cholesky, spd_inverse
from src.covariance.schemas import DataKind, SampleMatrix, SecondMoment, SparsityPattern, symmetrize

logger = get_logger(__name__)

RNG_NAME = "numpy.random.Philox(SeedSequence(seed, spawn_key=(stream, *index)))"
DIAGONAL_RANGE = (0.5, 1.5)
OFFDIAGONAL_RANGE = (-1.0, 1.0)
MIN_EIGENVALUE = 1e-6
SHIFT_MARGIN = 0.1
MAX_NOISE_REDRAWS = 100


def generator_constants() -> dict:
    return {
        "rng": RNG_NAME,
        "diagonal_uniform": list(DIAGONAL_RANGE),
        "offdiagonal_uniform": list(OFFDIAGONAL_RANGE),
        "min_eigenvalue": MIN_EIGENVALUE,
        "shift_margin": SHIFT_MARGIN,
        "noise": "symmetric, entries uniform(-sigma, sigma)",
    }


def rng_for(seed: int, stream: Stream, *index: int) -> np.random.Generator:
    key = (int(stream),) + tuple(int(i) for i in index)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=key)))


def generate_ground_truth(p: int, delta: float, seed: int, index: int = 0) -> GroundTruth:
    if p < 2:
        raise ParameterError(f"Ground truth needs p >= 2, got {p}.")
    if not (0.0 <= delta <= 1.0):
        raise ParameterError(f"Density must lie in [0, 1], got {delta}.")
    pairs = p * (p - 1) // 2
    count = math.ceil(delta * pairs)
    if count > pairs:
        raise ParameterError(f"Density {delta} asks for {count} of {pairs} positions.")

    rng = rng_for(seed, Stream.TRUTH, index)
    precision = np.diag(rng.uniform(*DIAGONAL_RANGE, size=p))
    rows, cols = np.triu_indices(p, k=1)
    chosen = rng.choice(pairs, size=count, replace=False)
    values = rng.uniform(*OFFDIAGONAL_RANGE, size=count)
    precision[rows[chosen], cols[chosen]] = values
    precision[cols[chosen], rows[chosen]] = values

    lowest = float(linalg.eigvalsh(precision)[0])
    shift = 0.0
    if lowest <= MIN_EIGENVALUE:
        shift = MIN_EIGENVALUE - lowest + SHIFT_MARGIN
        precision[np.diag_indices(p)] += shift

    pattern = SparsityPattern(p=p, edges=zip(rows[chosen].tolist(), cols[chosen].tolist()))
    logger.debug(f"Ground truth p={p}, delta={delta}, edges={count}, shift={shift:.3g}")
    return GroundTruth(
        precision=precision,
        covariance=spd_inverse(precision, "ground-truth precision"),
        pattern=pattern,
        density=delta,
        seed=seed,
        shift=shift,
    )


def sample_gaussian(truth: GroundTruth, n: int, seed: int, *index: int) -> SampleMatrix:
    """
    n draws from N(0, truth.covariance) as standard normals times the lower
    Cholesky factor of the covariance.
    """
    if n < 2:
        raise ParameterError(f"Need at least 2 samples, got {n}.")
    lower = linalg.cholesky(truth.covariance, lower=True)
    rng = rng_for(seed, Stream.SAMPLES, *index)
    Z = rng.standard_normal((n, truth.p))
    return SampleMatrix(data=Z @ lower.T, kind=DataKind.GAUSSIAN)


def noise_masked_moment(
    truth: GroundTruth, sigma: float, rng: np.random.Generator, n: int = 1
) -> SecondMoment:
    """
    S = (Sigma^-1 + V)^-1 with V symmetric, entries uniform(-sigma, sigma);
    V is redrawn while Sigma^-1 + V is not positive definite.
    """
    if sigma < 0:
        raise ParameterError(f"Noise level must be nonnegative, got {sigma}.")
    p = truth.p
    for attempt in range(1, MAX_NOISE_REDRAWS + 1):
        upper = np.triu(rng.uniform(-sigma, sigma, size=(p, p)))
        V = upper + np.triu(upper, k=1).T
        try:
            cholesky(truth.precision + V, "masked precision")
        except DomainError:
            logger.debug(f"Noise draw {attempt} broke positive definiteness; redrawing")
            continue
        S = spd_inverse(symmetrize(truth.precision + V), "masked precision")
        return SecondMoment.from_matrix(S, n=n)
    raise GenerationError(
        f"Sigma^-1 + V was not positive definite in {MAX_NOISE_REDRAWS} draws (sigma={sigma})."
    )
