from enum import Enum, IntEnum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.covariance.exceptions import DataError
from src.covariance.schemas import (
    ArrayModel,
    ClassificationReport,
    PathResult,
    SparsityPattern,
    readonly,
    symmetrize,
)


class Stream(IntEnum):
    """
    Independent random streams spawned from one root seed.
    """

    TRUTH = 0
    SAMPLES = 1
    NOISE = 2


class Method(str, Enum):
    SML = "SML"
    LASSO_OR = "LassoOR"
    LASSO_AND = "LassoAND"
    THRESHOLD = "Threshold"


class GroundTruth(ArrayModel):
    precision: np.ndarray
    covariance: np.ndarray
    pattern: SparsityPattern
    density: float = Field(ge=0, le=1)
    seed: int
    shift: float = 0.0

    @field_validator("precision", "covariance", mode="before")
    @classmethod
    def _sym(cls, v):
        return readonly(symmetrize(v))

    @model_validator(mode="after")
    def _support(self):
        p = self.precision.shape[0]
        if self.pattern.p != p:
            raise DataError("Ground-truth pattern dimension does not match the precision matrix.")
        off = self.precision.copy()
        np.fill_diagonal(off, 0.0)
        support = {(int(k), int(j)) for k, j in zip(*np.nonzero(np.triu(off != 0.0, k=1)))}
        if support != set(self.pattern.edges):
            raise DataError("Ground-truth pattern does not match the precision support.")
        return self

    @property
    def p(self) -> int:
        return self.precision.shape[0]


class TrialRecord(BaseModel):
    trial_id: int
    n: Optional[int] = None
    p: int
    delta: float
    lam: float
    method: Method
    report: ClassificationReport
    wall_time: float
    gap: Optional[float] = None
    seed: int

    def row(self) -> Dict[str, Any]:
        """
        Flat table row; wall time is kept out so that tables are reproducible.
        """
        data = self.model_dump(exclude={"report", "wall_time"})
        data["method"] = self.method.value
        data.update(self.report.model_dump())
        return data


class NoiseMaskingRow(BaseModel):
    lam: float
    log_ratio: float
    mean_error_pct: float
    std_error_pct: float
    trials: int


class ScalingRow(BaseModel):
    p: int
    n: int
    instances: int
    mean_wall_time: float
    max_gap: Optional[float] = None
    censored: int = 0


class ScalingReport(BaseModel):
    rows: List[ScalingRow]
    loglog_slope: Optional[float] = None


class PathFollowingReport(ArrayModel):
    path: PathResult
    truth: GroundTruth
    terminal_lambda: float
    exact_recovery_lambdas: List[float]
    terminal_points_diagonal: bool


class RunMetadata(BaseModel):
    experiment: str
    seed: int
    rng: str
    parameters: Dict[str, Any]
    constants: Dict[str, Any]
    versions: Dict[str, str]
