# test/test_cli.py
"""End-to-end runs of the attnspec command line through main()."""
import json
import math

import numpy as np
import pytest

import pandas as pd

from domain.models import SpikeReport
from main import main
from utils.io_utils import write_matrix, write_weights


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestTheoryCommands:
    def test_causal_weights(self, capsys):
        code, out, _ = run(capsys, "causal-weights", "--T", "3")
        assert code == 0
        values = [float(v) for v in out.split()]
        np.testing.assert_allclose(values, [5 / 6, 1 / 6, 0.0], atol=1e-15)

    def test_edge(self, capsys):
        code, out, _ = run(capsys, "edge", "--delta", "1", "--gamma", "1")
        assert code == 0
        lines = dict(line.split() for line in out.strip().splitlines())
        assert float(lines["lambda_plus"]) == pytest.approx(6.75, rel=1e-10)
        assert {"x_0", "x_1", "x_2", "lambda_minus"} <= set(lines)

    def test_spike_report(self, capsys):
        code, out, _ = run(
            capsys, "spike", "--delta", "0.625", "--gamma", "0.5", "--T", "10", "--L", "3",
            "--strategy", "causal", "--mu-norm", "2.5",
        )
        assert code == 0
        report = json.loads(out)
        assert report["regime"] == "supercritical"
        assert report["lambda_out"] == pytest.approx(3.53, abs=0.01)
        assert 0 < report["total_alignment"] < 1
        assert set(report) == set(SpikeReport.model_fields) | {"scalars"}
        assert report["scalars"]["kappa"] == pytest.approx(0.2182896825396825, rel=1e-12)

    def test_spike_with_weights_file(self, capsys, tmp_path):
        path = write_weights(tmp_path / "w.csv", np.full(10, 0.1))
        common = ("spike", "--delta", "0.625", "--gamma", "0.5", "--T", "10", "--L", "3", "--mu-norm", "2.5")
        code, out, _ = run(capsys, *common, "--strategy", "custom", "--w-file", str(path))
        _, reference, _ = run(capsys, *common, "--strategy", "mean")
        assert code == 0
        assert json.loads(out)["lambda_out"] == pytest.approx(json.loads(reference)["lambda_out"], rel=1e-12)

    def test_thresholds_from_config_file(self, capsys, tmp_path):
        config = tmp_path / "thresholds.json"
        config.write_text(json.dumps({
            "R": {"kind": "prefix", "T": 10, "L": 3}, "strategy": "mean", "delta": 0.625, "gamma": 0.5,
        }))
        code, out, _ = run(capsys, "thresholds", "--config", str(config))
        assert code == 0
        result = json.loads(out)
        assert result["mu_pop"] <= result["mu_samp"]
        assert result["snr"] == pytest.approx(1.6)

    def test_flags_override_config_file(self, capsys, tmp_path):
        config = tmp_path / "edge.json"
        config.write_text(json.dumps({"delta": 0.5, "gamma": 0.5, "kappa": 3.0}))
        _, out, _ = run(capsys, "edge", "--config", str(config), "--kappa", "1")
        _, reference, _ = run(capsys, "edge", "--delta", "0.5", "--gamma", "0.5")
        assert out == reference

    def test_density_writes_table(self, capsys, tmp_path):
        code, out, _ = run(capsys, "density", "--delta", "0.5", "--gamma", "0.25", "--points", "400",
                           "--out", str(tmp_path))
        assert code == 0
        result = json.loads(out)
        assert result["atom_at_zero"] == 0.0
        assert (tmp_path / "density" / "table.csv").exists()
        assert (tmp_path / "density" / "manifest.json").exists()
        lines = (tmp_path / "density" / "table.csv").read_text().splitlines()
        header = dict(line[2:].split("=") for line in lines if line.startswith("#"))
        assert list(header) == ["delta", "gamma", "kappa", "eta", "lambda_plus"]
        assert float(header["gamma"]) == 0.25
        assert float(header["lambda_plus"]) == pytest.approx(result["edge_right"], rel=1e-12)
        table = pd.read_csv(tmp_path / "density" / "table.csv", comment="#")
        assert list(table.columns[:2]) == ["x", "rho"] and len(table) == 400

    def test_optimal_weights_spiked(self, capsys):
        code, out, _ = run(capsys, "optimal-weights", "--T", "20", "--theta-R", "10", "--support", "5")
        assert code == 0
        result = json.loads(out)
        assert math.fsum(result["w"]) == pytest.approx(1.0)
        assert result["snr"] == pytest.approx(result["lambda_max"], rel=1e-10)


class TestErrors:
    def test_unknown_config_key(self, capsys, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"delta": 0.5, "gamma": 0.5, "kapa": 2.0}))
        code, _, err = run(capsys, "edge", "--config", str(config))
        assert code == 2
        assert "kapa" in err

    def test_out_of_range_value(self, capsys):
        code, _, err = run(capsys, "edge", "--delta", "0.5", "--gamma", "-1")
        assert code == 2
        assert "gamma" in err

    def test_missing_config_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "edge", "--config", str(tmp_path / "missing.json"))
        assert code == 2

    def test_unattainable_optimum(self, capsys, tmp_path):
        u = np.array([1.0, -1.0]) / np.sqrt(2)
        path = write_matrix(tmp_path / "R.csv", np.eye(2) + 2.0 * np.outer(u, u))
        code, out, err = run(capsys, "optimal-weights", "--R-file", str(path))
        assert code == 1
        assert out == ""
        assert "supremum" in err

    def test_negative_threads(self, capsys):
        code, _, _ = run(capsys, "causal-weights", "--T", "3", "--threads", "0")
        assert code == 2

    def test_non_realizable_signs(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "simulate", "--d", "20", "--V", "40", "--N", "30", "--T", "6", "--mu-norm", "1",
            "--theta-R", "4", "--support", "3", "--out", str(tmp_path),
        )
        assert code == 2
        assert "gaussian_factor" in err


class TestMonteCarloCommands:
    def test_simulate(self, capsys, tmp_path):
        code, out, _ = run(
            capsys, "simulate", "--d", "30", "--V", "60", "--N", "90", "--T", "5", "--L", "2",
            "--mu-norm", "3", "--trials", "2", "--seed", "4", "--dump", "--out", str(tmp_path),
        )
        assert code == 0
        result = json.loads(out)
        assert result["lambda1_mean"] > 0
        assert 0 <= result["outlier_trials"] <= 2
        assert (tmp_path / "simulate" / "table.csv").exists()
        assert (tmp_path / "simulate" / "dataset" / "trial_1" / "C.csv").exists()

    def test_simulate_is_reproducible(self, capsys, tmp_path):
        argv = ["simulate", "--d", "20", "--V", "40", "--N", "50", "--T", "4", "--L", "2",
                "--mu-norm", "2", "--trials", "3", "--seed", "8"]
        run(capsys, *argv, "--threads", "1", "--out", str(tmp_path / "a"))
        run(capsys, *argv, "--threads", "3", "--out", str(tmp_path / "b"))
        a = (tmp_path / "a" / "simulate" / "table.csv").read_bytes()
        b = (tmp_path / "b" / "simulate" / "table.csv").read_bytes()
        assert a == b

    def test_classify(self, capsys):
        code, out, _ = run(
            capsys, "classify", "--d", "30", "--V", "60", "--N", "200", "--T", "5", "--L", "2",
            "--mu-norm", "4", "--strategy", "optimal", "--trials", "2",
        )
        assert code == 0
        result = json.loads(out)
        assert result["n_trials"] == 2
        assert result["test_acc"] > 0.8

    def test_experiment(self, capsys, tmp_path):
        code, out, _ = run(capsys, "experiment", "thresholds", "--out", str(tmp_path))
        assert code == 0
        result = json.loads(out)
        assert result["rows"] == 20
        assert (tmp_path / "thresholds" / "table.csv").exists()
        manifest = json.loads((tmp_path / "thresholds" / "manifest.json").read_text())
        assert manifest["spec"]["name"] == "thresholds"

    def test_experiment_theory_only_classification_rejected(self, capsys, tmp_path):
        code, _, _ = run(capsys, "experiment", "classify", "--theory-only", "--out", str(tmp_path))
        assert code == 2
