# test/test_experiments.py
import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from core.errors import ConfigError
from services.experiments import REGISTRY, default_spec, resolve_spec, run_experiment

SMALL_DIMS = {"d": 40, "V": 60, "N": 80}


def small(name, tmp_path, **extra):
    override = {"outputs": str(tmp_path), "base": {"dims": dict(SMALL_DIMS), "trials": 2, "seed": 3}}
    override.update(extra)
    return resolve_spec(name, override)


class TestResolveSpec:
    def test_every_registered_experiment_has_defaults(self):
        for name in REGISTRY:
            spec = default_spec(name)
            assert spec.name == name

    def test_unknown_name(self):
        with pytest.raises(ConfigError, match="unknown experiment"):
            resolve_spec("nonexistent")

    def test_mismatched_name_in_file(self):
        with pytest.raises(ConfigError):
            resolve_spec("bulk", {"name": "align"})

    def test_later_overrides_win(self):
        spec = resolve_spec("align", {"base": {"seed": 1, "trials": 4}}, {"base": {"seed": 9}})
        assert spec.base.seed == 9
        assert spec.base.trials == 4
        assert spec.base.dims.d == 500

    def test_dimension_override_rederives_ratios(self):
        spec = resolve_spec("align", {"base": {"dims": {"V": 1000}}})
        assert spec.base.dims.delta == pytest.approx(0.5)
        assert spec.base.dims.gamma == pytest.approx(0.5)

    def test_correlation_is_replaced_whole(self):
        spec = resolve_spec("align", {"base": {"R": {"kind": "prefix", "T": 10, "L": 5}}})
        assert spec.base.R.L == 5

    def test_invalid_field_is_a_validation_error(self):
        with pytest.raises(ValidationError):
            resolve_spec("align", {"base": {"trials": 0}})

    def test_learned_only_for_classification(self):
        with pytest.raises(ValidationError):
            resolve_spec("align", {"strategies": ["mean", "learned"]})


class TestTheoryTables:
    def test_thresholds_table(self, tmp_path):
        table = run_experiment(resolve_spec("thresholds", {"outputs": str(tmp_path)}), threads=1)
        frame = table.frame
        assert list(frame.columns) == ["L", "strategy", "snr", "kappa", "mu_pop_theory", "mu_samp_theory"]
        assert len(frame) == 20
        assert (frame["mu_samp_theory"] >= frame["mu_pop_theory"]).all()
        mean = frame[frame.strategy == "mean"]
        np.testing.assert_allclose(mean["snr"], (mean["L"] ** 2 + 10 - mean["L"]) / 10, rtol=1e-12)

    def test_snr_table(self, tmp_path):
        spec = resolve_spec("snr", {"outputs": str(tmp_path), "sweep": {"parameter": "T", "values": [2.0, 4.0, 10.0, 40.0]}})
        frame = run_experiment(spec, threads=1).frame
        # T = 2 is shorter than the prefix and is skipped
        assert sorted(set(frame["T"])) == [4, 10, 40]
        causal = frame[frame.strategy == "causal"].set_index("T")
        mean = frame[frame.strategy == "mean"].set_index("T")
        assert (causal["snr"] <= causal["lambda_max_R"] + 1e-12).all()
        assert causal.loc[10, "snr"] > mean.loc[10, "snr"]

    def test_reruns_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_experiment(resolve_spec("thresholds", {"outputs": str(out)}), threads=1)
        assert (a / "thresholds" / "table.csv").read_bytes() == (b / "thresholds" / "table.csv").read_bytes()
        manifest = json.loads((a / "thresholds" / "manifest.json").read_text())
        assert {"spec", "seed", "version", "wall_time_s"} <= set(manifest)

    def test_phase_diagram(self, tmp_path):
        spec = resolve_spec("phase_diagram", {
            "outputs": str(tmp_path),
            "sweep": {"parameter": "mu_norm", "values": [0.2, 0.6, 1.0, 2.0, 3.0, 5.0]},
            "secondary": {"parameter": "delta", "values": [0.1, 0.5, 1.0, 2.0]},
        })
        frame = run_experiment(spec, threads=2).frame
        assert len(frame) == 6 * 4 * 2
        below = frame["mu_norm"] < 0.99 * frame["mu_samp_theory"]
        above = frame["mu_norm"] > 1.01 * frame["mu_samp_theory"]
        assert (frame.loc[below, "alignment_theory"] == 0.0).all()
        assert (frame.loc[above, "alignment_theory"] > 0.0).all()
        boundary = frame.groupby(["delta", "strategy"])["mu_samp_theory"].first().unstack()
        assert (boundary["optimal"] < boundary["mean"]).all()

    def test_phase_diagram_needs_delta_axis(self, tmp_path):
        spec = resolve_spec("phase_diagram", {"outputs": str(tmp_path)})
        spec = spec.model_copy(update={"secondary": None})
        with pytest.raises(ConfigError):
            run_experiment(spec, write=False)


class TestMonteCarloTables:
    def test_bulk(self, tmp_path):
        table = run_experiment(small("bulk", tmp_path), threads=1)
        frame = table.frame
        assert set(frame["strategy"]) == {"mean", "causal"}
        assert {"density_mc", "density_se", "density_theory", "density_mp", "width"} <= set(frame.columns)
        for _, part in frame.groupby("strategy"):
            assert (part["density_mc"] * part["width"]).sum() == pytest.approx(1.0, abs=1e-9)
        summary = table.metadata["summary"]["causal@2.5"]
        assert summary["lambda1_mc"] > 0

    def test_alignment_threads_invariant(self, tmp_path):
        extra = {"sweep": {"parameter": "mu_norm", "values": [0.0, 2.0, 4.0]}}
        serial = run_experiment(small("align", tmp_path / "a", **extra), threads=1).frame
        pooled = run_experiment(small("align", tmp_path / "b", **extra), threads=4).frame
        pd.testing.assert_frame_equal(serial, pooled)
        assert ((serial["alignment_mc"] >= 0) & (serial["alignment_mc"] <= 1)).all()
        assert serial["n_trials"].eq(2).all()

    def test_classification(self, tmp_path):
        spec = small("classify", tmp_path, strategies=["mean", "optimal"],
                     sweep={"parameter": "mu_norm", "values": [0.0, 3.0]})
        frame = run_experiment(spec, threads=2).frame
        assert len(frame) == 4
        assert frame["test_acc_mc"].between(0, 1).all()

    def test_classification_rejects_theory_only(self, tmp_path):
        spec = small("classify", tmp_path, theory_only=True)
        with pytest.raises(ConfigError):
            run_experiment(spec, write=False)

    def test_attention_concentration(self, tmp_path):
        spec = small(
            "attn_concentration", tmp_path,
            sweep={"parameter": "d", "values": [20.0, 40.0]}, n_sequences=20, vocab_factor=4,
        )
        table = run_experiment(spec, threads=1)
        assert table.frame["d"].tolist() == [20, 40]
        assert table.metadata["expected_slope"] == -0.5
        assert (tmp_path / "attn_concentration" / "table.csv").exists()
