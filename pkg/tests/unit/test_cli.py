import json
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from src.covariance.files import read_certificate, write_matrix_csv
from src.covariance.penalty import gaussian_lambda
from src.covariance.schemas import SecondMoment
from src.main import cli, cli_main


def last_json(output):
    return json.loads(output.strip().splitlines()[-1])


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def samples_csv(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.normal(size=(60, 4)) @ np.array(
        [[1.0, 0.5, 0.0, 0.0], [0.0, 1.0, 0.4, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    )
    path = tmp_path / "samples.csv"
    write_matrix_csv(path, data, ["a", "b", "c", "d"])
    return path


@pytest.fixture
def moment_csv(tmp_path):
    S = np.array([[1.0, 0.6, 0.1], [0.6, 1.0, 0.2], [0.1, 0.2, 1.0]])
    path = tmp_path / "moment.csv"
    write_matrix_csv(path, S, ["u", "v", "w"])
    return path, S


def test_estimate_on_moment_file(runner, tmp_path, moment_csv):
    path, _ = moment_csv
    out = tmp_path / "out"
    result = runner.invoke(
        cli,
        ["estimate", "--input", str(path), "--kind", "moment", "--n-samples", "40",
         "--lambda", "0.1", "--epsilon", "1e-8", "--out", str(out)],
    )

    assert result.exit_code == 0, result.output
    cert = last_json(result.output)
    assert cert["converged"] and cert["gap"] <= 1e-8
    for name in ("precision.csv", "covariance.csv", "edges.csv", "nodes.csv", "certificate.json", "run_meta.json"):
        assert (out / name).exists()
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["n"] == 40
    assert meta["variable_names"] == ["u", "v", "w"]
    assert not meta["partial"]


def test_certify_round_trip(runner, tmp_path, samples_csv):
    out = tmp_path / "out"
    runner.invoke(cli, ["estimate", "--input", str(samples_csv), "--lambda", "0.1", "--out", str(out)])

    args = ["certify", "--input", str(samples_csv), "--covariance", str(out / "covariance.csv"),
            "--precision", str(out / "precision.csv"), "--certificate", str(out / "certificate.json")]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert last_json(result.output)["consistent"]

    cert = read_certificate(out / "certificate.json")
    (out / "certificate.json").write_text(cert.model_copy(update={"gap": cert.gap + 1.0}).model_dump_json())
    tampered = runner.invoke(cli, args)
    assert tampered.exit_code == 3
    assert not last_json(tampered.output)["consistent"]


def test_penalty_matches_library(runner, moment_csv):
    path, S = moment_csv
    result = runner.invoke(
        cli, ["penalty", "--input", str(path), "--kind", "moment", "--n-samples", "50", "--alpha", "0.05"]
    )
    assert result.exit_code == 0, result.output
    expected = gaussian_lambda(SecondMoment.from_matrix(S, n=50), 0.05)
    assert last_json(result.output)["lam"] == pytest.approx(expected.lam, rel=1e-12)


def test_binary_auto_lambda(runner, tmp_path):
    rng = np.random.default_rng(1)
    first = rng.choice([-1, 1], size=200)
    data = np.column_stack([first, np.where(rng.random(200) < 0.2, -first, first), rng.choice([-1, 1], size=200)])
    path = tmp_path / "spins.csv"
    pd.DataFrame(data).to_csv(path, index=False, header=False)
    out = tmp_path / "out"

    result = runner.invoke(
        cli, ["estimate", "--input", str(path), "--binary", "--lambda", "auto:0.05", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert last_json(result.output)["binary"]
    assert (out / "theta_linear.csv").exists()
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["alpha"] == 0.05
    assert meta["data_kind"] == "binary"


def test_binary_moment_file_is_rejected(moment_csv):
    path, _ = moment_csv
    assert cli_main(["estimate", "--input", str(path), "--kind", "moment", "--binary", "--lambda", "0.1"]) == 2


def test_step_cap_writes_partial_result(runner, tmp_path, samples_csv):
    out = tmp_path / "out"
    result = runner.invoke(
        cli,
        ["estimate", "--input", str(samples_csv), "--lambda", "0.05", "--solver", "nesterov",
         "--max-steps", "1", "--epsilon", "1e-10", "--out", str(out)],
    )
    assert result.exit_code == 3
    assert not last_json(result.output)["converged"]
    assert json.loads((out / "run_meta.json").read_text())["partial"]
    assert (out / "precision.csv").exists()


def test_missing_input_exits_with_config_code(tmp_path):
    assert cli_main(["estimate", "--input", str(tmp_path / "absent.csv"), "--lambda", "0.1"]) == 2


def test_bad_lambda_exits_with_config_code(samples_csv):
    assert cli_main(["estimate", "--input", str(samples_csv), "--lambda", "auto:2"]) == 2
    assert cli_main(["estimate", "--input", str(samples_csv), "--lambda", "big"]) == 2


def test_unknown_option_exits_with_config_code():
    assert cli_main(["estimate", "--no-such-flag"]) == 2


def test_top_variance_keeps_highest_columns(runner, tmp_path):
    rng = np.random.default_rng(2)
    data = rng.normal(size=(50, 4)) * [1.0, 3.0, 0.5, 2.0]
    path = tmp_path / "s.csv"
    write_matrix_csv(path, data, ["a", "b", "c", "d"])
    out = tmp_path / "out"

    result = runner.invoke(
        cli, ["estimate", "--input", str(path), "--lambda", "0.1", "--top-variance", "2", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert json.loads((out / "run_meta.json").read_text())["variable_names"] == ["b", "d"]


def test_path_command(runner, tmp_path, samples_csv):
    out = tmp_path / "path"
    result = runner.invoke(
        cli, ["path", "--input", str(samples_csv), "--lambdas", "0.05,0.1,0.5", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert last_json(result.output) == {"points": 3, "unconverged": []}
    entries = pd.read_csv(out / "path_entries.csv")
    assert len(entries) == 3 * 6


def test_path_rejects_decreasing_grid(samples_csv):
    assert cli_main(["path", "--input", str(samples_csv), "--lambdas", "0.2,0.1"]) == 2


def test_synth(runner, tmp_path):
    out = tmp_path / "synth"
    result = runner.invoke(cli, ["synth", "--p", "6", "--delta", "0.2", "--n", "30", "--seed", "3", "--out", str(out)])

    assert result.exit_code == 0, result.output
    summary = last_json(result.output)
    assert summary["edges"] == 3
    edges = pd.read_csv(out / "truth_edges.csv")
    assert len(edges) == 3
    assert pd.read_csv(out / "samples.csv").shape == (30, 6)


@pytest.mark.slow
def test_bench_path(runner, tmp_path):
    result = runner.invoke(cli, ["bench", "path", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert last_json(result.output)["terminal_points_diagonal"]
    assert (tmp_path / "path" / "path.csv").exists()


def test_unexpected_errors_propagate(moment_csv):
    path, _ = moment_csv
    with patch("src.main.EstimationService.choose_penalty", side_effect=RuntimeError("boom")):
        with pytest.raises(RuntimeError):
            cli_main(["penalty", "--input", str(path), "--kind", "moment", "--n-samples", "20", "--alpha", "0.05"])


def test_auto_lambda_on_moment_file_needs_sample_count(moment_csv):
    path, _ = moment_csv
    assert cli_main(["penalty", "--input", str(path), "--kind", "moment", "--alpha", "0.05"]) == 2
    assert cli_main(["estimate", "--input", str(path), "--kind", "moment", "--lambda", "auto:0.05"]) == 2


def test_fixed_lambda_on_moment_file_without_sample_count(runner, tmp_path, moment_csv):
    path, _ = moment_csv
    out = tmp_path / "out"
    result = runner.invoke(
        cli, ["estimate", "--input", str(path), "--kind", "moment", "--lambda", "0.1", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert json.loads((out / "run_meta.json").read_text())["n"] == 1
