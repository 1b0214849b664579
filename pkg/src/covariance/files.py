"""
CSV ingestion of sample and moment matrices and emission of estimation results.

Matrices are plain comma-separated tables without an index column and with an
optional header row of variable names; floats are written with 17 significant
digits so that a re-parsed file reproduces the in-memory values bitwise.
"""

import json
import re
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.core.logger import get_logger
from src.covariance.exceptions import DataError, DimensionError, ParseError
from src.covariance.model import zero_threshold
from src.covariance.schemas import (
    BinaryEstimate,
    Certificate,
    DataKind,
    Estimate,
    RunMeta,
    SampleMatrix,
    SecondMoment,
    SparsityPattern,
)

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"
_PANDAS_LINE = re.compile(r"line (\d+)")


def default_names(p: int) -> List[str]:
    return [f"x{k + 1}" for k in range(p)]


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _read_cells(path: Path) -> Tuple[pd.DataFrame, Optional[List[str]], int]:
    """
    Raw string cells, the header names if the first row is not numeric, and
    the file line number of the first data row.
    """
    try:
        frame = pd.read_csv(
            path,
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
        )
    except FileNotFoundError:
        raise ParseError(f"file '{path}' not found")
    except pd.errors.EmptyDataError:
        raise ParseError(f"file '{path}' is empty")
    except pd.errors.ParserError as e:
        match = _PANDAS_LINE.search(str(e))
        raise ParseError(f"ragged row ({e})", line=int(match.group(1)) if match else None)

    # short rows come back as NaN rather than ""
    ragged = frame.isna().any(axis=1).to_numpy()
    if ragged.any():
        raise ParseError("ragged row", line=int(np.argmax(ragged)) + 1)

    first = [cell.strip() for cell in frame.iloc[0]]
    if all(cell == "" or _is_number(cell) for cell in first):
        return frame, None, 1
    return frame.iloc[1:].reset_index(drop=True), first, 2


def _to_numbers(frame: pd.DataFrame, first_line: int, allow_missing: bool) -> np.ndarray:
    cells = frame.apply(lambda col: col.str.strip())
    blank = cells.eq("").to_numpy()
    values = cells.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)

    bad = ~np.isfinite(values) & ~blank
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ParseError(
            f"non-numeric cell '{cells.iat[row, col]}'",
            line=int(row) + first_line,
            column=int(col) + 1,
        )
    if blank.any() and not allow_missing:
        row, col = np.argwhere(blank)[0]
        raise ParseError(
            "missing cell (imputation is only available for binary data)",
            line=int(row) + first_line,
            column=int(col) + 1,
        )
    values[blank] = np.nan
    return values


def parse_samples_csv(
    path: Union[str, Path],
    kind: DataKind = DataKind.GAUSSIAN,
    impute: Optional[float] = None,
    remap_binary: bool = True,
) -> SampleMatrix:
    path = Path(path)
    frame, names, first_line = _read_cells(path)
    binary = kind is DataKind.BINARY
    data = _to_numbers(frame, first_line, allow_missing=binary)

    missing = np.isnan(data)
    if missing.any() and impute is None:
        row, col = np.argwhere(missing)[0]
        raise ParseError(
            "missing cell and no imputation value configured",
            line=int(row) + first_line,
            column=int(col) + 1,
        )

    remapped = False
    if binary:
        observed = np.unique(data[~missing])
        if observed.size and 0.0 in observed and set(observed.tolist()) <= {0.0, 1.0}:
            if not remap_binary:
                raise DataError("Binary samples are coded 0/1 and remapping is disabled.")
            logger.warning(f"Binary file {path.name} is coded 0/1; remapping 0 to -1")
            data[~missing] = 2.0 * data[~missing] - 1.0
            remapped = True

    imputed = int(missing.sum())
    if imputed:
        logger.warning(f"Imputed {imputed} missing cells with {impute}")
        data[missing] = impute

    logger.info(f"Read {data.shape[0]} samples of {data.shape[1]} variables from {path}")
    return SampleMatrix(
        data=data,
        kind=kind,
        variable_names=names,
        imputed_cells=imputed,
        remapped_binary=remapped,
    )


def read_matrix_csv(path: Union[str, Path]) -> Tuple[np.ndarray, Optional[List[str]]]:
    path = Path(path)
    frame, names, first_line = _read_cells(path)
    values = _to_numbers(frame, first_line, allow_missing=False)
    if values.shape[0] != values.shape[1]:
        raise ParseError(f"matrix in '{path}' is {values.shape[0]} x {values.shape[1]}, not square")
    return values, names


def parse_moment_csv(
    path: Union[str, Path], n: int, mu_bar: Optional[np.ndarray] = None
) -> SecondMoment:
    S, names = read_matrix_csv(path)
    return SecondMoment.from_matrix(S, n=n, mu_bar=mu_bar, variable_names=names)


def write_matrix_csv(path: Path, M: np.ndarray, names: Sequence[str]) -> Path:
    pd.DataFrame(np.asarray(M), columns=list(names)).to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )
    return path


def edge_table(
    X: np.ndarray,
    names: Sequence[str],
    values: Optional[np.ndarray] = None,
    rel: Optional[float] = None,
) -> pd.DataFrame:
    """
    One row per off-diagonal entry of X above the zero threshold. `values`
    supplies the reported weight (defaults to X itself).
    """
    thr = zero_threshold(X, rel)
    rows, cols = np.nonzero(np.triu(np.abs(X) > thr, k=1))
    weights = X if values is None else values
    return pd.DataFrame(
        {
            "i": rows,
            "j": cols,
            "name_i": [names[k] for k in rows],
            "name_j": [names[k] for k in cols],
            "value": weights[rows, cols],
        },
        columns=["i", "j", "name_i", "name_j", "value"],
    )


def node_table(edges: pd.DataFrame, names: Sequence[str]) -> pd.DataFrame:
    pattern = SparsityPattern(p=len(names), edges=zip(edges["i"].tolist(), edges["j"].tolist()))
    return pd.DataFrame({"name": list(names), "degree": pattern.degrees()})


def write_json(path: Path, document) -> Path:
    if hasattr(document, "model_dump_json"):
        path.write_text(document.model_dump_json(indent=2) + "\n")
    else:
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    return path


def emit_estimate(
    result: Union[Estimate, BinaryEstimate],
    out_dir: Union[str, Path],
    certificate: Certificate,
    meta: RunMeta,
    variable_names: Optional[Sequence[str]] = None,
    rel: Optional[float] = None,
) -> List[Path]:
    """
    Writes precision.csv, covariance.csv, edges.csv, nodes.csv, certificate.json
    and run_meta.json (plus theta_linear.csv for binary estimates).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Cannot create output directory {out}: {e}")
        raise

    est = result.estimate if isinstance(result, BinaryEstimate) else result
    names = list(variable_names) if variable_names else default_names(est.p)
    if len(names) != est.p:
        raise DimensionError(f"Got {len(names)} names for a {est.p}-variable estimate.")

    written = [
        write_matrix_csv(out / "precision.csv", est.X, names),
        write_matrix_csv(out / "covariance.csv", est.W, names),
    ]

    if isinstance(result, BinaryEstimate):
        edges = edge_table(est.X, names, values=result.params.theta_pair, rel=rel)
        theta = pd.DataFrame({"name": names, "theta": result.params.theta_linear})
        theta.to_csv(out / "theta_linear.csv", index=False, float_format=FLOAT_FORMAT)
        written.append(out / "theta_linear.csv")
    else:
        edges = edge_table(est.X, names, rel=rel)

    edges.to_csv(out / "edges.csv", index=False, float_format=FLOAT_FORMAT)
    node_table(edges, names).to_csv(out / "nodes.csv", index=False)
    written += [out / "edges.csv", out / "nodes.csv"]
    written.append(write_json(out / "certificate.json", certificate))
    written.append(write_json(out / "run_meta.json", meta))

    logger.info(f"Wrote {len(edges)} edges and {len(written)} files to {out}")
    return written


def read_certificate(path: Union[str, Path]) -> Certificate:
    try:
        return Certificate.model_validate_json(Path(path).read_text())
    except FileNotFoundError:
        raise ParseError(f"certificate '{path}' not found")
    except ValueError as e:
        raise ParseError(f"invalid certificate '{path}': {e}")
