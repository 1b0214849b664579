import numpy as np
import pytest

from src.covariance.schemas import DataKind, Problem, SampleMatrix, SecondMoment


def make_problem(S, lam, epsilon=1e-8, n=100, diag_override=None) -> Problem:
    moment = SecondMoment.from_matrix(np.asarray(S, dtype=float), n=n)
    return Problem(moment=moment, lam=lam, epsilon=epsilon, diag_override=diag_override)


def random_moment(p: int, n: int, seed: int) -> SecondMoment:
    from src.covariance.model import second_moment

    rng = np.random.default_rng(seed)
    A = rng.normal(size=(p, p)) / np.sqrt(p)
    data = rng.normal(size=(n, p)) @ (np.eye(p) + 0.5 * A)
    return second_moment(SampleMatrix(data=data, kind=DataKind.GAUSSIAN))


def random_spd(p: int, seed: int, low: float = 0.5, high: float = 2.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    return (Q * rng.uniform(low, high, size=p)) @ Q.T


@pytest.fixture
def problem_factory():
    return make_problem


@pytest.fixture
def moment_factory():
    return random_moment
