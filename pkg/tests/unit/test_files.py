import json

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from src.covariance.binary import solve_binary
from src.covariance.exceptions import DataError, ParseError
from src.covariance.files import (
    edge_table,
    emit_estimate,
    parse_moment_csv,
    parse_samples_csv,
    read_certificate,
    read_matrix_csv,
    write_matrix_csv,
)
from src.covariance.schemas import DataKind, RunMeta
from src.covariance.service import EstimationService
from tests.conftest import make_problem


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_header_is_detected(tmp_path):
    path = write(tmp_path, "s.csv", "a,b,c\n1,2,3\n4,5,6.5\n")
    samples = parse_samples_csv(path)
    assert samples.variable_names == ["a", "b", "c"]
    assert_allclose(samples.data, [[1, 2, 3], [4, 5, 6.5]])


def test_headerless_file(tmp_path):
    samples = parse_samples_csv(write(tmp_path, "s.csv", "1,2\n3,4\n"))
    assert samples.variable_names is None
    assert samples.n == 2


def test_binary_blanks_are_imputed(tmp_path):
    path = write(tmp_path, "b.csv", "1,-1\n,1\n-1,\n1,1\n")
    samples = parse_samples_csv(path, DataKind.BINARY, impute=-1.0)
    assert samples.imputed_cells == 2
    assert_allclose(samples.data, [[1, -1], [-1, 1], [-1, -1], [1, 1]])


def test_gaussian_blank_is_rejected(tmp_path):
    with pytest.raises(ParseError) as info:
        parse_samples_csv(write(tmp_path, "s.csv", "x,y\n1,2\n3,\n"), impute=-1.0)
    assert (info.value.line, info.value.column) == (3, 2)


def test_ragged_row_names_its_line(tmp_path):
    rows = ["a,b,c"] + ["1,2,3"] * 5 + ["1,2,3,4"]
    with pytest.raises(ParseError) as info:
        parse_samples_csv(write(tmp_path, "s.csv", "\n".join(rows) + "\n"))
    assert info.value.line == 7


def test_non_numeric_cell(tmp_path):
    with pytest.raises(ParseError) as info:
        parse_samples_csv(write(tmp_path, "s.csv", "a,b\n1,2\n3,oops\n"))
    assert "oops" in info.value.message


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        parse_samples_csv(tmp_path / "absent.csv")


def test_zero_one_binary_is_remapped(tmp_path):
    path = write(tmp_path, "b.csv", "1,0\n0,1\n1,1\n")
    samples = parse_samples_csv(path, DataKind.BINARY)
    assert samples.remapped_binary
    assert_allclose(samples.data, [[1, -1], [-1, 1], [1, 1]])

    with pytest.raises(DataError):
        parse_samples_csv(path, DataKind.BINARY, remap_binary=False)


def test_moment_must_be_square(tmp_path):
    with pytest.raises(ParseError):
        read_matrix_csv(write(tmp_path, "m.csv", "1,0,0\n0,1,0\n"))


def test_moment_file_with_names(tmp_path):
    moment = parse_moment_csv(write(tmp_path, "m.csv", "u,v\n2,0.5\n0.5,1\n"), n=30)
    assert moment.variable_names == ["u", "v"]
    assert moment.n == 30


def test_matrix_round_trip_is_bitwise(tmp_path):
    M = np.random.default_rng(0).normal(size=(4, 4)) / 3.0
    M = M + M.T
    path = write_matrix_csv(tmp_path / "m.csv", M, ["a", "b", "c", "d"])
    values, names = read_matrix_csv(path)
    assert names == ["a", "b", "c", "d"]
    assert np.array_equal(values, M)


def test_edge_table_lists_upper_triangle():
    X = np.array([[1.0, 0.0, -0.2], [0.0, 1.0, 0.3], [-0.2, 0.3, 1.0]])
    edges = edge_table(X, ["a", "b", "c"])
    assert edges[["i", "j"]].values.tolist() == [[0, 2], [1, 2]]
    assert edges["name_j"].tolist() == ["c", "c"]
    assert_allclose(edges["value"], [-0.2, 0.3])


def test_diagonal_estimate_writes_header_only(tmp_path):
    service = EstimationService()
    prob = make_problem(np.diag([1.0, 2.0, 3.0]), 0.1)
    est = service.solve(prob)
    emit_estimate(est, tmp_path, service.build_certificate(est, prob), RunMeta(command="estimate", zero_threshold_rel=1e-8))

    assert (tmp_path / "edges.csv").read_text().strip() == "i,j,name_i,name_j,value"
    nodes = pd.read_csv(tmp_path / "nodes.csv")
    assert nodes["degree"].tolist() == [0, 0, 0]
    assert nodes["name"].tolist() == ["x1", "x2", "x3"]


def test_emitted_certificate_round_trips(tmp_path):
    service = EstimationService()
    S = np.array([[1.0, 0.6], [0.6, 1.0]])
    prob = make_problem(S, 0.2)
    est = service.solve(prob)
    cert = service.build_certificate(est, prob)
    emit_estimate(est, tmp_path, cert, RunMeta(command="estimate", lam=0.2, zero_threshold_rel=1e-8), ["u", "v"])

    assert read_certificate(tmp_path / "certificate.json") == cert
    X, names = read_matrix_csv(tmp_path / "precision.csv")
    assert names == ["u", "v"]
    assert np.array_equal(X, est.X)
    meta = json.loads((tmp_path / "run_meta.json").read_text())
    assert meta["lam"] == 0.2


def test_binary_edges_report_couplings(tmp_path):
    rows = [[1, 1]] * 3 + [[-1, -1]] * 3 + [[1, -1], [-1, 1]]
    path = write(tmp_path, "b.csv", "\n".join(",".join(map(str, r)) for r in rows) + "\n")
    samples = parse_samples_csv(path, DataKind.BINARY)
    service = EstimationService()
    result = solve_binary(samples, 0.2, 1e-10)
    cert = service.build_certificate(result, service.binary_problem(samples, 0.2, 1e-10))
    emit_estimate(result, tmp_path / "out", cert, RunMeta(command="estimate", zero_threshold_rel=1e-8))

    edges = pd.read_csv(tmp_path / "out" / "edges.csv")
    assert edges["value"].tolist() == pytest.approx([result.params.theta_pair[0, 1]])
    theta = pd.read_csv(tmp_path / "out" / "theta_linear.csv")
    assert_allclose(theta["theta"], result.params.theta_linear)


def test_unreadable_certificate(tmp_path):
    with pytest.raises(ParseError):
        read_certificate(write(tmp_path, "c.json", "{not json"))
