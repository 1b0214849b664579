class CovarianceException(Exception):
    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class DimensionError(CovarianceException):
    pass


class DataError(CovarianceException):
    pass


class DomainError(CovarianceException):
    def __init__(self, what: str = "matrix"):
        super().__init__(f"The {what} is not positive definite.")


class ParameterError(CovarianceException):
    pass


class SingularMatrixError(CovarianceException):
    def __init__(self, what: str = "second moment matrix"):
        super().__init__(f"The {what} is singular.")


class DegenerateVarianceError(CovarianceException):
    def __init__(self, column: int, name: str | None = None):
        self.column = column
        label = f"'{name}' (index {column})" if name else f"index {column}"
        super().__init__(f"Column {label} has zero empirical variance.")


class SizeError(CovarianceException):
    pass


class NumericError(CovarianceException):
    pass


class GenerationError(CovarianceException):
    pass


class ParseError(CovarianceException):
    def __init__(self, detail: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" at line {line}"
            if column is not None:
                where += f", column {column}"
        super().__init__(f"Parse error{where}: {detail}")


class ConvergenceError(CovarianceException):
    """
    Raised when a solver exhausts its iteration budget. The last iterate is kept
    so that callers can still use it.
    """

    def __init__(self, solver: str, gap: float, epsilon: float, estimate=None):
        self.solver = solver
        self.gap = gap
        self.epsilon = epsilon
        self.estimate = estimate
        super().__init__(
            f"{solver} did not reach the duality gap target {epsilon:.3e} "
            f"(achieved {gap:.3e})."
        )


class InnerConvergenceError(CovarianceException):
    def __init__(self, max_iter: int, change: float):
        self.max_iter = max_iter
        self.change = change
        super().__init__(
            f"Lasso coordinate descent did not converge in {max_iter} iterations "
            f"(last coordinate change {change:.3e})."
        )


class InsufficientSamplesError(CovarianceException):
    def __init__(self, n: int, required: int):
        self.n = n
        super().__init__(f"Need at least {required} samples, got {n}.")
