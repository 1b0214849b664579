from enum import Enum
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg

from src.covariance.exceptions import DataError, DimensionError, ParameterError

PSD_TOLERANCE = 1e-10
SIGMA_TOLERANCE = 1e-10


class DataKind(str, Enum):
    GAUSSIAN = "gaussian"
    BINARY = "binary"


class SolverKind(str, Enum):
    BCD = "bcd"
    NESTEROV = "nesterov"
    ANALYTIC = "analytic"


class PenaltyFamily(str, Enum):
    GAUSSIAN_T = "gaussian_t"
    BINARY_CHI2 = "binary_chi2"


class EdgeRule(str, Enum):
    OR = "or"
    AND = "and"


def readonly(a: Any, ndim: int | None = None) -> np.ndarray:
    """
    Copies `a` into a float64 array and freezes it.
    """
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"Expected a {ndim}-dimensional array, got {arr.ndim}.")
    arr.flags.writeable = False
    return arr


def symmetrize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {a.shape}.")
    return (a + a.T) / 2.0


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class SampleMatrix(ArrayModel):
    data: np.ndarray
    kind: DataKind = DataKind.GAUSSIAN
    variable_names: Optional[List[str]] = None
    imputed_cells: int = 0
    remapped_binary: bool = False

    @field_validator("data", mode="before")
    @classmethod
    def _check_data(cls, v):
        data = np.array(v, dtype=float)
        if data.ndim != 2:
            raise DimensionError(f"Samples must be an n x p matrix, got shape {data.shape}.")
        n, p = data.shape
        if n < 2 or p < 1:
            raise DimensionError(f"Need at least 2 samples and 1 variable, got n={n}, p={p}.")
        if not np.all(np.isfinite(data)):
            row, col = np.argwhere(~np.isfinite(data))[0]
            raise DataError(f"Non-finite sample value at row {row}, column {col}.")
        data.flags.writeable = False
        return data

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind is DataKind.BINARY and not np.all(np.abs(self.data) == 1.0):
            row, col = np.argwhere(np.abs(self.data) != 1.0)[0]
            raise DataError(
                f"Binary samples must be -1/+1; found {self.data[row, col]} "
                f"at row {row}, column {col}."
            )
        if self.variable_names is not None and len(self.variable_names) != self.p:
            raise DimensionError(
                f"Got {len(self.variable_names)} variable names for {self.p} columns."
            )
        return self

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


class SecondMoment(ArrayModel):
    S: np.ndarray
    n: int = Field(ge=1)
    sigma_hat: np.ndarray
    mu_bar: np.ndarray
    variable_names: Optional[List[str]] = None

    @field_validator("S", mode="before")
    @classmethod
    def _check_psd(cls, v):
        S = symmetrize(v)
        if not np.all(np.isfinite(S)):
            raise DataError("Second moment matrix has non-finite entries.")
        eigvals, eigvecs = linalg.eigh(S)
        scale = max(float(np.max(np.abs(eigvals))), 0.0)
        if eigvals[0] < -PSD_TOLERANCE * scale:
            raise DataError(
                f"Second moment matrix is not positive semidefinite "
                f"(smallest eigenvalue {eigvals[0]:.3e})."
            )
        if eigvals[0] < 0:
            S = symmetrize((eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T)
        return readonly(S)

    @field_validator("sigma_hat", "mu_bar", mode="before")
    @classmethod
    def _vector(cls, v):
        return readonly(v, ndim=1)

    @model_validator(mode="after")
    def _check_sigma(self):
        p = self.S.shape[0]
        if self.sigma_hat.shape != (p,) or self.mu_bar.shape != (p,):
            raise DimensionError("sigma_hat and mu_bar must have length p.")
        diag = self.S.diagonal()
        atol = SIGMA_TOLERANCE * max(float(np.max(np.abs(diag))), 1e-300)
        if not np.allclose(self.sigma_hat**2, diag, rtol=SIGMA_TOLERANCE, atol=atol):
            raise DataError("sigma_hat does not match the diagonal of S.")
        return self

    @classmethod
    def from_matrix(cls, S, n: int, mu_bar=None, variable_names=None) -> "SecondMoment":
        """
        Wraps a precomputed second moment matrix (e.g. read from a file).
        """
        S = np.asarray(S, dtype=float)
        p = S.shape[0]
        S = symmetrize(S)
        return cls(
            S=S,
            n=n,
            sigma_hat=np.sqrt(np.maximum(S.diagonal(), 0.0)),
            mu_bar=np.zeros(p) if mu_bar is None else mu_bar,
            variable_names=variable_names,
        )

    @property
    def p(self) -> int:
        return self.S.shape[0]


class Problem(ArrayModel):
    moment: SecondMoment
    lam: float
    epsilon: float
    diag_override: Optional[np.ndarray] = None

    @field_validator("lam", "epsilon")
    @classmethod
    def _positive(cls, v, info):
        if not (v > 0 and np.isfinite(v)):
            raise ParameterError(f"{info.field_name} must be positive, got {v}.")
        return v

    @field_validator("diag_override", mode="before")
    @classmethod
    def _vector(cls, v):
        return None if v is None else readonly(v, ndim=1)

    @model_validator(mode="after")
    def _check_override(self):
        d = self.diag_override
        if d is None:
            return self
        if d.shape != (self.p,):
            raise DimensionError(f"diag_override must have length {self.p}.")
        if np.any(d <= 0) or np.any(d < self.S.diagonal()):
            raise ParameterError(
                "diag_override entries must be positive and at least the S diagonal."
            )
        return self

    @property
    def S(self) -> np.ndarray:
        return self.moment.S

    @property
    def p(self) -> int:
        return self.moment.p

    @property
    def fixed_diagonal(self) -> np.ndarray:
        """
        The diagonal every dual-feasible W carries: S_kk + lam, or the override.
        """
        if self.diag_override is not None:
            return self.diag_override
        return self.S.diagonal() + self.lam

    def with_lambda(self, lam: float) -> "Problem":
        return Problem(
            moment=self.moment,
            lam=lam,
            epsilon=self.epsilon,
            diag_override=self.diag_override,
        )


class Estimate(ArrayModel):
    W: np.ndarray
    X: np.ndarray
    gap: float
    iterations: int
    solver: SolverKind
    converged: bool = True
    gap_is_bound: bool = False

    @field_validator("W", "X", mode="before")
    @classmethod
    def _sym(cls, v):
        return readonly(symmetrize(v))

    @property
    def p(self) -> int:
        return self.W.shape[0]


class PathPoint(ArrayModel):
    lam: float
    gap: float
    iterations: int
    converged: bool
    X: np.ndarray


class PathResult(ArrayModel):
    points: List[PathPoint]

    @property
    def lambdas(self) -> List[float]:
        return [pt.lam for pt in self.points]


class Certificate(BaseModel):
    lam: float
    epsilon: float
    gap: float
    kkt_residual: float
    solver: SolverKind
    iterations: int
    converged: bool
    gap_is_bound: bool = False
    eigenvalue_lower: float
    eigenvalue_upper: float
    screened_columns: List[int]
    isolated_variables: int
    primal_objective: float
    dual_objective: float
    binary: bool = False


class PenaltyChoice(BaseModel):
    alpha: float = Field(gt=0, lt=1)
    lam: float = Field(gt=0)
    family: PenaltyFamily
    quantile_value: float
    tail_probability: float
    pair_statistic: float
    relaxed_bonferroni: bool
    n: int
    p: int
    degenerate_columns: List[int] = []


class LogisticParams(ArrayModel):
    theta_linear: np.ndarray
    theta_pair: np.ndarray

    @field_validator("theta_linear", mode="before")
    @classmethod
    def _vector(cls, v):
        return readonly(v, ndim=1)

    @field_validator("theta_pair", mode="before")
    @classmethod
    def _pair(cls, v):
        pair = symmetrize(v)
        np.fill_diagonal(pair, 0.0)
        return readonly(pair)

    @model_validator(mode="after")
    def _shapes(self):
        p = self.theta_linear.shape[0]
        if self.theta_pair.shape != (p, p):
            raise DimensionError("theta_pair must be p x p.")
        return self

    @property
    def p(self) -> int:
        return self.theta_linear.shape[0]


class BinaryEstimate(ArrayModel):
    gamma: np.ndarray
    params: LogisticParams
    mu_bar: np.ndarray
    gap: float
    estimate: Estimate


class SparsityPattern(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: int = Field(ge=1)
    edges: FrozenSet[Tuple[int, int]] = frozenset()

    @field_validator("edges", mode="before")
    @classmethod
    def _canonical(cls, v):
        return frozenset((min(k, j), max(k, j)) for k, j in v)

    @model_validator(mode="after")
    def _check_edges(self):
        for k, j in self.edges:
            if k == j:
                raise DataError(f"Self-loop ({k}, {k}) in sparsity pattern.")
            if not (0 <= k < self.p and 0 <= j < self.p):
                raise DimensionError(f"Edge ({k}, {j}) out of range for p={self.p}.")
        return self

    @property
    def density(self) -> float:
        pairs = self.p * (self.p - 1) / 2
        return len(self.edges) / pairs if pairs else 0.0

    def degrees(self) -> List[int]:
        deg = [0] * self.p
        for k, j in self.edges:
            deg[k] += 1
            deg[j] += 1
        return deg


class ClassificationReport(BaseModel):
    power: float = Field(ge=0, le=1)
    ppv: float = Field(ge=0, le=1)
    density: float = Field(ge=0, le=1)
    error_pct: float = Field(ge=0, le=1)
    false_positives: int
    false_negatives: int


class BcdOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_sweeps: int = Field(default=100, gt=0)
    qp_tol: float = Field(default=1e-10, gt=0)
    qp_max_iter: int = Field(default=10000, gt=0)
    check_every: int = Field(default=1, gt=0)


class ColumnWorkspace(BaseModel):
    """
    Data of one column update: the minor W_{-j,-j}, its Cholesky factor, the
    box centre S_j and radius lam, and the lasso warm start carried across sweeps.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    minor: np.ndarray
    minor_factor: Any
    rhs: np.ndarray
    radius: float
    warm_start: Optional[np.ndarray] = None


class NesterovOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: Optional[float] = Field(default=None, gt=0)
    b: Optional[float] = Field(default=None, gt=0)
    epsilon: Optional[float] = Field(default=None, gt=0)
    max_steps: Optional[int] = Field(default=None, gt=0)
    gap_check_every: int = Field(default=50, gt=0)

    @model_validator(mode="after")
    def _bracket(self):
        if self.a is not None and self.b is not None and not self.a < self.b:
            raise ParameterError(f"Need 0 < a < b, got a={self.a}, b={self.b}.")
        return self


class SmoothingConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu: float = Field(gt=0)
    L: float = Field(gt=0)
    L_printed: float = Field(gt=0)
    sigma1: float = Field(gt=0)
    sigma2: float = Field(gt=0)
    D1: float = Field(gt=0)
    D2: float = Field(gt=0)
    M: float = Field(gt=0)
    A_norm: float = Field(gt=0)


class ThresholdReport(BaseModel):
    """
    Pattern of the thresholded inverse second moment together with the largest
    threshold that keeps the thresholded matrix positive definite.
    """

    pattern: SparsityPattern
    threshold: float
    pd_bound: float
    preserves_pd: bool


class RunMeta(BaseModel):
    command: str
    input_path: Optional[str] = None
    input_kind: Optional[str] = None
    data_kind: DataKind = DataKind.GAUSSIAN
    solver: Optional[SolverKind] = None
    lam: Optional[float] = None
    epsilon: Optional[float] = None
    alpha: Optional[float] = None
    relaxed_bonferroni: bool = False
    n: Optional[int] = None
    p: Optional[int] = None
    variable_names: List[str] = []
    top_variance: Optional[int] = None
    imputed_cells: int = 0
    imputation_value: Optional[float] = None
    remapped_binary: bool = False
    zero_threshold_rel: float
    partial: bool = False
    versions: Dict[str, str] = {}
