"""Tests for the dmlwb command-line interface."""
import json
from pathlib import Path

import pytest
from click.testing import CliRunner, Result

from src.cli import EXIT_ESTIMATION, EXIT_SIMULATION, EXIT_VALIDATION, cli


def invoke(*args: str) -> Result:
    return CliRunner().invoke(cli, ["--log-level", "ERROR", *args])


@pytest.fixture
def late_csv(tmp_path: Path) -> Path:
    path = tmp_path / "late.csv"
    result = invoke("gen-data", "--design", "late", "--n", "103", "--seed", "2", "--out", str(path))
    assert result.exit_code == 0, result.output
    return path


class TestEstimate:
    def test_json_payload(self, tmp_path: Path, late_csv: Path) -> None:
        out = tmp_path / "est.json"
        result = invoke(
            "estimate", str(late_csv), "--model", "LATE", "--k", "5", "--c", "0.53", "--oracle",
            "--out", str(out),
        )
        assert result.exit_code == 0, result.output

        payload = json.loads(out.read_text())
        assert payload["config"]["fold_sizes"] == [21, 21, 21, 20, 20]
        assert payload["dataset"]["n_rows"] == 103
        assert [r["method"] for r in payload["records"]] == ["DML1", "DML2", "ORACLE1", "ORACLE2"]
        for record in payload["records"]:
            assert record["ci_lower"] <= record["theta_hat"] <= record["ci_upper"]

    def test_explicit_roles(self, tmp_path: Path, selection_csv: Path) -> None:
        out = tmp_path / "est.json"
        result = invoke(
            "estimate", str(selection_csv), "--model", "ate", "--method", "dml2",
            "--role", "outcome=outcome", "--role", "treatment=treatment",
            "--role", "covariate_1=covariate_1", "--c", "0.5", "--out", str(out),
        )
        assert result.exit_code == 0, result.output
        records = json.loads(out.read_text())["records"]
        assert [r["method"] for r in records] == ["DML2"]
        assert abs(records[0]["theta_hat"] - 1.5) < 5 * records[0]["se"]

    def test_export_eta(self, tmp_path: Path, late_csv: Path) -> None:
        eta = tmp_path / "eta.csv"
        result = invoke(
            "estimate", str(late_csv), "--model", "LATE", "--c", "0.53",
            "--export-eta", str(eta), "--out", str(tmp_path / "est.json"),
        )
        assert result.exit_code == 0, result.output
        header = eta.read_text().splitlines()[0]
        assert header == "eta_1,eta_2,eta_3,eta_4,eta_5,eta_6,fold_id"

    def test_list_models(self) -> None:
        result = CliRunner().invoke(cli, ["estimate", "--list-models"])
        assert result.exit_code == 0
        ids = [entry["id"] for entry in json.loads(result.output)]
        assert ids == ["ATE", "ATT_DID", "LATE", "WATE", "ATT", "PLM", "PLM_IV"]

    def test_missing_model_is_usage_error(self, late_csv: Path) -> None:
        result = invoke("estimate", str(late_csv))
        assert result.exit_code == 2
        assert "--model" in result.output

    @pytest.mark.parametrize(
        "extra",
        [
            ["--model", "ITT"],
            ["--model", "LATE", "--role", "outcome=nope"],
            ["--model", "LATE", "--k", "500"],
            ["--model", "LATE", "--alpha", "1.5"],
        ],
    )
    def test_validation_errors(self, late_csv: Path, extra: list[str]) -> None:
        result = invoke("estimate", str(late_csv), *extra)
        assert result.exit_code == EXIT_VALIDATION
        assert "Error" in result.output

    def test_oracle_without_truth(self, tmp_path: Path) -> None:
        path = tmp_path / "plain.csv"
        path.write_text("outcome,treatment,covariate_1\n1,1,0.1\n2,0,0.2\n3,1,0.3\n4,0,0.4\n")
        result = invoke("estimate", str(path), "--model", "ATE", "--k", "2", "--oracle")
        assert result.exit_code == EXIT_VALIDATION
        assert "truth_eta" in result.output

    def test_empty_neighborhood_is_estimation_error(self, late_csv: Path) -> None:
        result = invoke("estimate", str(late_csv), "--model", "LATE", "--c", "1e-6")
        assert result.exit_code == EXIT_ESTIMATION
        assert "fold" in result.output

    def test_config_round_trip(self, tmp_path: Path, late_csv: Path) -> None:
        dumped = tmp_path / "estimate.env"
        first = tmp_path / "first.json"
        second = tmp_path / "second.json"
        result = invoke(
            "estimate", str(late_csv), "--model", "LATE", "--k", "4", "--c", "0.6", "--seed", "9",
            "--dump-config", str(dumped), "--out", str(first),
        )
        assert result.exit_code == 0, result.output
        text = dumped.read_text()
        assert "k=4" in text.splitlines()
        assert "model=LATE" in text.splitlines()

        result = invoke("estimate", str(late_csv), "--config", str(dumped), "--out", str(second))
        assert result.exit_code == 0, result.output
        assert json.loads(first.read_text())["records"] == json.loads(second.read_text())["records"]

    def test_flags_beat_config_file(self, tmp_path: Path, late_csv: Path) -> None:
        config = tmp_path / "opts.env"
        config.write_text("model=LATE\nk=4\n")
        out = tmp_path / "est.json"
        result = invoke("estimate", str(late_csv), "--config", str(config), "--k", "3", "--out", str(out))
        assert result.exit_code == 0, result.output
        assert json.loads(out.read_text())["config"]["K"] == 3

    def test_unknown_config_key(self, tmp_path: Path, late_csv: Path) -> None:
        config = tmp_path / "opts.env"
        config.write_text("bandwidth=0.3\n")
        result = invoke("estimate", str(late_csv), "--config", str(config))
        assert result.exit_code == 2
        assert "bandwidth" in result.output


class TestCurves:
    def test_ho_bias_rows(self, tmp_path: Path) -> None:
        out = tmp_path / "curve.csv"
        result = invoke(
            "curves", "--what", "ho-bias", "--f-delta", "1", "--phi", "0.4", "--k-grid", "2,10",
            "--out", str(out),
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[0] == "# dmlworkbench curves"
        assert lines[1].startswith("# config: ")
        assert lines[2] == "K,value"
        rows = {int(k): float(v) for k, v in (line.split(",") for line in lines[3:])}
        assert list(rows) == [2, 10, 1000]
        assert rows[2] == pytest.approx(0.219178, abs=1e-6)
        assert rows[10] == pytest.approx(0.136963, abs=1e-6)
        assert rows[1000] == pytest.approx(0.125993, abs=1e-6)

    def test_so_mse_from_bandwidth(self, tmp_path: Path) -> None:
        out = tmp_path / "curve.csv"
        result = invoke(
            "curves", "--what", "so-mse", "--g-b", "1", "--phi0", "0.2", "--s", "2", "--dx", "1",
            "--k-grid", "2", "--out", str(out),
        )
        assert result.exit_code == 0, result.output
        first = out.read_text().splitlines()[3]
        assert first.startswith("2,")
        assert float(first.split(",")[1]) == pytest.approx(1.154992, abs=1e-6)

    def test_out_of_range_rates(self) -> None:
        result = invoke("curves", "--what", "ho-bias", "--phi", "0.7")
        assert result.exit_code == EXIT_VALIDATION

    def test_missing_rates(self) -> None:
        result = invoke("curves", "--what", "ho-var", "--g-b", "1")
        assert result.exit_code == EXIT_VALIDATION
        assert "phi1" in result.output


class TestAdviseK:
    def test_table(self) -> None:
        result = invoke("advise-k", "--n", "1000", "--phi", "0.25")
        assert result.exit_code == 0, result.output
        assert "5.3565%" in result.output
        assert "Recommended K: 20" in result.output

    def test_phi_range(self) -> None:
        result = invoke("advise-k", "--n", "1000", "--k-candidates", "10")
        assert result.exit_code == 0, result.output
        assert "5.3565% - 11.0000%" in result.output

    def test_csv_output(self, tmp_path: Path) -> None:
        out = tmp_path / "advice.csv"
        result = invoke(
            "advise-k", "--n", "1000", "--phi", "0.5", "--k-candidates", "2,10", "--upsilon", "1",
            "--out", str(out),
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[2] == "K,bias_loss_low,bias_loss_high,mse_bound_low,mse_bound_high,mse_loss"
        k10 = lines[4].split(",")
        assert k10[0] == "10"
        assert float(k10[1]) == pytest.approx(0.11)
        assert k10[5] != ""

    def test_partial_rate_flags(self) -> None:
        result = invoke("advise-k", "--n", "1000", "--dx", "1")
        assert result.exit_code == EXIT_VALIDATION
        assert "together" in result.output

    def test_candidate_above_n(self) -> None:
        result = invoke("advise-k", "--n", "10", "--k-candidates", "2,20")
        assert result.exit_code == EXIT_VALIDATION


class TestGenData:
    def test_written_csv_estimates_without_roles(self, tmp_path: Path) -> None:
        data = tmp_path / "att.csv"
        result = invoke("gen-data", "--design", "att-did", "--n", "300", "--out", str(data))
        assert result.exit_code == 0, result.output
        assert "300 rows of ATT_DID" in result.output

        header = data.read_text().splitlines()[0].split(",")
        assert {"outcome", "outcome_pre", "treatment", "truth_eta_1", "truth_eta_2"} <= set(header)

        out = tmp_path / "est.json"
        result = invoke(
            "estimate", str(data), "--model", "ATT_DID", "--kernel-order", "6", "--c", "0.62",
            "--phi0", "0.0625", "--k", "2", "--out", str(out),
        )
        assert result.exit_code == 0, result.output
        assert json.loads(out.read_text())["dataset"]["d_x"] == 4

    def test_same_seed_same_bytes(self, tmp_path: Path) -> None:
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            invoke("gen-data", "--design", "late", "--n", "50", "--seed", "3", "--out", str(path))
        assert a.read_bytes() == b.read_bytes()


class TestSimulate:
    def test_small_run(self, tmp_path: Path) -> None:
        out = tmp_path / "mc.csv"
        json_out = tmp_path / "mc.json"
        result = invoke(
            "simulate", "--design", "late", "--n", "120", "--reps", "3", "--k-grid", "2,4",
            "--methods", "dml1,dml2", "--seed", "5", "--out", str(out), "--json-out", str(json_out),
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[0] == "# dmlworkbench Monte Carlo summary"
        assert lines[2] == "design,method,K,c,metric,value,mc_se,flag_rate"
        assert len(lines) == 3 + 4 * 7
        assert len(json.loads(json_out.read_text())["cells"]) == 4

    def test_threads_from_environment(self, tmp_path: Path) -> None:
        out_env = tmp_path / "env.csv"
        out_flag = tmp_path / "flag.csv"
        args = ["simulate", "--design", "late", "--n", "80", "--reps", "2", "--k-grid", "2",
                "--methods", "DML2"]
        runner = CliRunner()
        result = runner.invoke(
            cli, ["--log-level", "ERROR", *args, "--out", str(out_env)], env={"DMLWB_THREADS": "2"}
        )
        assert result.exit_code == 0, result.output
        assert invoke(*args, "--threads", "1", "--out", str(out_flag)).exit_code == 0
        assert out_env.read_bytes() == out_flag.read_bytes()

    def test_default_output_goes_to_results_dir(
        self, monkeypatch: pytest.MonkeyPatch, tmp_path: Path
    ) -> None:
        monkeypatch.setenv("DMLWB_RESULTS_DIR", str(tmp_path / "runs"))
        result = invoke(
            "simulate", "--design", "late", "--n", "80", "--reps", "2", "--k-grid", "2",
            "--methods", "DML2", "--seed", "4",
        )
        assert result.exit_code == 0, result.output
        written = tmp_path / "runs" / "late_n80_seed4.csv"
        lines = written.read_text().splitlines()
        assert lines[2] == "design,method,K,c,metric,value,mc_se,flag_rate"
        assert len(lines) == 3 + 7

    def test_strict_failure(self) -> None:
        result = invoke(
            "simulate", "--design", "late", "--n", "50", "--reps", "2", "--k-grid", "2",
            "--c-grid", "0.0001", "--methods", "DML2", "--strict",
        )
        assert result.exit_code == EXIT_SIMULATION
        assert "method=DML2" in result.output

    @pytest.mark.parametrize(
        "extra",
        [["--k-grid", "2,500"], ["--methods", "DML3"], ["--reps", "1"], ["--k-grid", "two"]],
    )
    def test_validation_errors(self, extra: list[str]) -> None:
        result = invoke("simulate", "--design", "late", "--n", "100", *extra)
        assert result.exit_code == EXIT_VALIDATION


class TestConfigCommand:
    def test_shows_settings(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("DMLWB_TRUTH_DRAWS", "50000")
        result = CliRunner().invoke(cli, ["config"])
        assert result.exit_code == 0
        assert "Truth Draws" in result.output
        assert "50000" in result.output

    def test_version(self) -> None:
        result = CliRunner().invoke(cli, ["--version"])
        assert "0.1.0" in result.output
