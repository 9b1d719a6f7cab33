# test/test_sim.py
import math

import numpy as np
import pytest

from core.errors import ConfigError
from domain.models import BulkParams, CorrelationModel, EmpiricalSpectrum, ModelDims, SimConfig
from services.bulk import bulk_edge, density
from services.pooling import causal_weights, mean_weights, pool_scalars, weights_for
from services.sim import (
    embedded_sequences,
    empirical_spectrum,
    generate,
    has_outlier,
    labels,
    repooled,
    sample_gaussian_factors,
    sample_signs,
)
from services.spike import analyze
from utils.rng_utils import substream
from test import config as cfg


def small_config(**overrides) -> SimConfig:
    dims = dict(d=40, V=60, N=80, T=6, mu_norm=1.5)
    dims.update(overrides.pop("dims", {}))
    R = overrides.pop("R", None) or CorrelationModel.prefix(2, dims["T"])
    return SimConfig(dims=ModelDims(**dims), R=R, seed=11, **overrides)


class TestSigns:
    """Positional sign samplers reproduce the target correlation."""

    def test_prefix_block_shares_one_sign(self):
        xi = sample_signs(CorrelationModel.prefix(3, 7), 500, substream(1))
        assert set(np.unique(xi)) == {-1.0, 1.0}
        assert np.all(xi[:, :3] == xi[:, [0]])

    def test_prefix_empirical_correlation(self):
        N = 20000
        R = CorrelationModel.prefix(3, 6)
        xi = sample_signs(R, N, substream(2))
        np.testing.assert_allclose(xi.T @ xi / N, R.array, atol=5 / math.sqrt(N))

    def test_copula_equicorrelation(self):
        N, T = 20000, 4
        R = CorrelationModel.custom(0.5 * np.eye(T) + 0.5 * np.ones((T, T)))
        xi = sample_signs(R, N, substream(3))
        np.testing.assert_allclose(xi.T @ xi / N, R.array, atol=5 / math.sqrt(N))

    def test_spiked_model_not_realizable(self):
        R = CorrelationModel.spiked(cfg.SPIKED_THETA, T=cfg.SPIKED_T, support=cfg.SPIKED_SUPPORT)
        with pytest.raises(ConfigError, match="gaussian_factor"):
            sample_signs(R, 10, substream(4))

    def test_gaussian_factors_covariance(self):
        N = 20000
        R = CorrelationModel.spiked(2.0, T=5, support=3)
        g = sample_gaussian_factors(R, N, substream(5))
        np.testing.assert_allclose(g.T @ g / N, R.array, atol=8 * 3 / math.sqrt(N))

    def test_label_ties_go_positive(self):
        xi = np.array([[1.0, -1.0, 1.0], [-1.0, -1.0, 1.0]])
        np.testing.assert_array_equal(labels(xi, 2), [1.0, -1.0])


class TestGenerate:
    def test_deterministic_per_trial(self):
        config = small_config()
        a, b = generate(config, trial=3), generate(config, trial=3)
        np.testing.assert_array_equal(a.C, b.C)
        assert not np.array_equal(a.C, generate(config, trial=4).C)

    def test_balanced_signs_and_token_halves(self):
        data = generate(small_config())
        assert data.signs.sum() == 0
        np.testing.assert_array_equal(data.signs[data.tokens], data.xi)

    def test_embedding_carries_signal_on_first_axis(self):
        data = generate(small_config())
        assert data.mu[0] == 1.5 and not np.any(data.mu[1:])

    def test_pooled_columns(self):
        data = generate(small_config())
        w = data.weights
        n = 5
        expected = sum(w[t] * data.E[:, data.tokens[n, t]] for t in range(w.size))
        np.testing.assert_allclose(data.C[:, n], expected, atol=1e-12)

    def test_labels_follow_prefix(self):
        data = generate(small_config())
        np.testing.assert_array_equal(data.y, labels(data.xi, 2))

    def test_single_position_reduces_to_token_embedding(self):
        config = small_config(dims={"T": 1}, R=CorrelationModel.prefix(1, 1), pooling="mean")
        data = generate(config)
        np.testing.assert_array_equal(data.C, data.E[:, data.tokens[:, 0]])

    def test_repooled_matches_fresh_draw(self):
        causal = generate(small_config(pooling="causal"))
        mean = generate(small_config(pooling="mean"))
        again = repooled(causal, mean_weights(6))
        np.testing.assert_allclose(again.C, mean.C, atol=1e-12)

    def test_repooled_rejects_wrong_length(self):
        with pytest.raises(ConfigError):
            repooled(generate(small_config()), mean_weights(4))

    def test_gaussian_factor_mode(self):
        R = CorrelationModel.spiked(3.0, T=6, support=3)
        data = generate(small_config(R=R, xi_mode="gaussian_factor", pooling="optimal"))
        X = embedded_sequences(data)
        np.testing.assert_allclose(data.C, np.einsum("ntj,t->jn", X, data.weights), atol=1e-10)
        # signal coordinate is mu * <w, xi> on top of the noise
        noise = np.einsum("ntj,t->jn", X - data.xi[..., None] * data.mu, data.weights)
        np.testing.assert_allclose(data.C[0] - noise[0], 1.5 * data.xi @ data.weights, atol=1e-10)

    def test_attention_pooling(self):
        data = generate(small_config(pooling="attention"))
        assert data.weights.shape == (80, 6)
        np.testing.assert_allclose(data.weights.sum(axis=1), 1.0, atol=1e-12)
        X = embedded_sequences(data)
        np.testing.assert_allclose(data.C[:, 0], data.weights[0] @ X[0], atol=1e-12)


class TestSpectrum:
    def test_descending_and_alignment_bounds(self):
        spectrum = empirical_spectrum(generate(small_config()))
        assert np.all(np.diff(spectrum.eigenvalues) <= 1e-12)
        assert 0.0 <= spectrum.top_vector_alignment <= 1.0
        assert spectrum.top_gap >= 0.0

    def test_no_signal_means_no_alignment(self):
        config = small_config(dims={"d": 200, "V": 400, "N": 800, "mu_norm": 0.0})
        spectrum = empirical_spectrum(generate(config))
        assert spectrum.top_vector_alignment < 25 / 200

    def test_has_outlier_buffer(self):
        spectrum = EmpiricalSpectrum(
            eigenvalues=np.array([1.2, 1.0]), top_vector=np.array([1.0, 0.0]),
            top_vector_alignment=1.0, top_gap=0.2,
        )
        assert has_outlier(spectrum, 1.0, 10**6)
        assert not has_outlier(spectrum, 1.0, 10)

    def test_diagonal_of_sample_covariance(self):
        mu = 2.0
        config = small_config(dims={"d": 200, "V": 400, "N": 2000, "T": 6, "mu_norm": mu}, pooling="causal")
        data = generate(config)
        S = data.C @ data.C.T / data.N
        scalars = pool_scalars(causal_weights(6), config.R)
        assert np.diag(S)[1:].mean() == pytest.approx(scalars.kappa, rel=0.05)
        assert S[0, 0] == pytest.approx(scalars.kappa + scalars.alpha * mu**2, rel=0.1)



def reference_config(pooling="mean", **updates) -> SimConfig:
    dims = dict(d=cfg.REF_D, V=cfg.REF_V, N=cfg.REF_N, T=cfg.REF_T, mu_norm=cfg.REF_MU)
    dims.update(updates.pop("dims", {}))
    R = updates.pop("R", None) or CorrelationModel.prefix(cfg.REF_L, dims["T"])
    return SimConfig(dims=ModelDims(**dims), R=R, pooling=pooling, **updates)


def bulk_l1(eigs: np.ndarray, edges: np.ndarray, reference: np.ndarray) -> float:
    """L1 distance between an eigenvalue histogram and density values at the bin centers."""
    counts, _ = np.histogram(eigs, bins=edges)
    widths = np.diff(edges)
    return float(np.sum(np.abs(counts / (eigs.size * widths) - reference) * widths))


@pytest.mark.slow
class TestReferenceOutliers:
    """Finite-size top eigenvalue against the limiting outlier location."""

    @pytest.mark.parametrize("pooling,expected", [
        ("mean", cfg.REF_LAMBDA_OUT_MEAN),
        ("causal", cfg.REF_LAMBDA_OUT_CAUSAL),
    ])
    def test_top_eigenvalue(self, pooling, expected):
        config = reference_config(pooling, seed=2024)
        tops = [empirical_spectrum(generate(config, t)).eigenvalues[0] for t in range(5)]
        assert np.mean(tops) == pytest.approx(expected, rel=0.03)

    def test_raw_table_adds_an_outlier_without_signal(self):
        # class means of a raw table act as a spike of strength ~ delta / kappa
        edge, _ = bulk_edge(BulkParams(delta=cfg.REF_DELTA, gamma=cfg.REF_GAMMA,
                                       kappa=cfg.KAPPA_CAUSAL_T10))
        tops = {}
        for table in ("centered", "raw"):
            config = reference_config("causal", dims={"mu_norm": 0.0}, table=table, seed=5)
            tops[table] = np.mean([empirical_spectrum(generate(config, t)).eigenvalues[0] for t in range(3)])
        assert tops["centered"] == pytest.approx(edge, rel=0.03)
        assert tops["raw"] > edge * 1.04

    def test_alignment_matches_theory(self):
        config = reference_config("causal", dims={"mu_norm": 4.0}, seed=7)
        theory = analyze(causal_weights(cfg.REF_T), config.R, 4.0, cfg.REF_DELTA, cfg.REF_GAMMA)
        values = [empirical_spectrum(generate(config, t)).top_vector_alignment for t in range(5)]
        assert np.mean(values) == pytest.approx(theory.total_alignment, abs=0.05)


@pytest.mark.slow
class TestAlignmentCurves:
    """Monte Carlo alignment per strategy against the limiting total alignment."""

    TRIALS = 20

    @pytest.mark.parametrize("model,mus", [
        ("prefix", [0.5, 2.5, 4.0]),
        ("spiked", [0.3, 3.0, 5.0]),
    ])
    def test_strategies_track_theory(self, model, mus):
        if model == "prefix":
            R, T, extra = CorrelationModel.prefix(cfg.REF_L, cfg.REF_T), cfg.REF_T, {}
        else:
            T = cfg.SPIKED_T
            R = CorrelationModel.spiked(cfg.SPIKED_THETA, T=T, support=cfg.SPIKED_SUPPORT)
            extra = {"xi_mode": "gaussian_factor"}
        for mu in mus:
            config = reference_config("mean", dims={"T": T, "mu_norm": mu}, R=R, seed=31, **extra)
            draws = [generate(config, t) for t in range(self.TRIALS)]
            for strategy in ("mean", "causal", "optimal"):
                w = weights_for(strategy, R)
                theory = analyze(w, R, mu, cfg.REF_DELTA, cfg.REF_GAMMA).total_alignment
                values = np.array([empirical_spectrum(repooled(data, w)).top_vector_alignment for data in draws])
                se = values.std(ddof=1) / math.sqrt(values.size)
                assert abs(values.mean() - theory) <= 0.03 + 2 * se, (model, mu, strategy)


@pytest.mark.slow
class TestBulkHistogram:
    """Eigenvalue histograms at d = 500 against the limiting density."""

    BINS = 30

    def _eigenvalues(self, pooling, trials=5, **updates):
        config = reference_config(pooling, seed=99, **updates)
        return np.concatenate([empirical_spectrum(generate(config, t)).eigenvalues for t in range(trials)])

    @pytest.mark.parametrize("pooling,kappa", [
        ("mean", 1.0 / cfg.REF_T),
        ("causal", cfg.KAPPA_CAUSAL_T10),
    ])
    def test_histogram_matches_density(self, pooling, kappa):
        params = BulkParams(delta=cfg.REF_DELTA, gamma=cfg.REF_GAMMA, kappa=kappa)
        edge, _ = bulk_edge(params)
        edges = np.linspace(0.0, 1.2 * edge, self.BINS + 1)
        centers = (edges[:-1] + edges[1:]) / 2
        eigs = self._eigenvalues(pooling)
        assert bulk_l1(eigs, edges, density(params, centers).density) <= 0.05

    def test_rademacher_noise_gives_the_same_bulk(self):
        params = BulkParams(delta=cfg.REF_DELTA, gamma=cfg.REF_GAMMA, kappa=cfg.KAPPA_CAUSAL_T10)
        edge, _ = bulk_edge(params)
        edges = np.linspace(0.0, 1.2 * edge, self.BINS + 1)
        gaussian = self._eigenvalues("causal")
        rademacher = self._eigenvalues("causal", noise_kind="rademacher")
        counts, _ = np.histogram(rademacher, bins=edges)
        reference = counts / (rademacher.size * np.diff(edges))
        assert bulk_l1(gaussian, edges, reference) <= 0.03
