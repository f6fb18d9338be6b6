import numpy as np
import pytest

from wbcov.channel import (
    ArrayConfig,
    ChannelParams,
    beta_coeffs,
    channel_covariance,
    draw_params,
    make_dictionary,
    make_rng,
    observe,
    synth_blocks,
)
from wbcov.chest import (
    ChannelEstimate,
    delay_estimate,
    delay_objective,
    dg_estimate,
    gain_mmse,
    lmmse_estimate,
    lmmse_estimate_lowrank,
    path_gains_lsq,
)
from wbcov.errors import DegenerateObservation, DimensionMismatch, RankDeficient, Singular
from wbcov.ident import IdentResult
from wbcov.rulers import Ruler, best_ruler, training_matrix


def lmmse_oracle(phi, X, C, nv):
    """Dense formula with an explicit inverse."""
    T = X.shape[0]
    W = C @ X.conj().T @ np.linalg.inv(X @ C @ X.conj().T + nv * np.eye(T))
    return W @ phi


@pytest.fixture
def dg_setup():
    cfg = ArrayConfig(M=32, N_c=16, N=8)
    ruler = best_ruler(12, cfg.M - 1)
    X = training_matrix(ruler, cfg.M).entries
    dictionary = make_dictionary(64, cfg)
    return cfg, X, dictionary


def true_ident(params, cfg):
    order = np.argsort(params.dict_indices)
    gains = (params.gain_vars[:, None] * np.abs(beta_coeffs(params.delays, cfg)) ** 2)[order].T
    return IdentResult(params.dict_indices[order], gains, "genie"), order


class TestLMMSE:
    def test_identity_covariance(self):
        X = np.eye(2)
        phi = np.array([[[1.0, 2.0]]])
        est = lmmse_estimate(phi, X, np.eye(2), 1.0)
        np.testing.assert_allclose(est.h, [[[0.5, 1.0]]])

    def test_matches_oracle(self, rng):
        X = training_matrix(Ruler((0, 1, 4, 6)), 8).entries
        A = rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8))
        C = A @ np.conj(np.swapaxes(A, -1, -2))
        phi = rng.standard_normal((5, 3, 4)) + 1j * rng.standard_normal((5, 3, 4))
        est = lmmse_estimate(phi, X, C, 0.3)
        for k in range(5):
            for ell in range(3):
                np.testing.assert_allclose(est.h[k, ell], lmmse_oracle(phi[k, ell], X, C[ell], 0.3), atol=1e-10)

    def test_zero_covariance(self):
        X = np.eye(3)
        est = lmmse_estimate(np.ones((1, 3)), X, np.zeros((3, 3)), 0.0)
        np.testing.assert_array_equal(est.h, np.zeros((1, 3)))

    def test_singular(self):
        X = np.eye(3)
        C = np.diag([1.0, 1.0, 0.0])
        with pytest.raises(Singular):
            lmmse_estimate(np.ones((1, 3)), X, C, 0.0)

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            lmmse_estimate(np.ones((1, 4)), np.eye(3), np.eye(3), 1.0)

    def test_low_rank_needs_noise_term(self, dg_setup):
        cfg, X, dictionary = dg_setup
        p = draw_params(cfg, 3, make_rng(0), dictionary, min_separation=4)
        h, _ = synth_blocks(p, cfg, 4, make_rng(1))
        phi = observe(X, h, 0.0, 0)
        C = channel_covariance(p, cfg)
        with pytest.raises(Singular):
            lmmse_estimate(phi, X, C, 0.0)
        est = lmmse_estimate(phi, X, C, 1e-12)
        assert np.linalg.norm(est.h - h) / np.linalg.norm(h) < 1e-6

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ChannelEstimate(np.array([np.nan]), "x")


class TestLowRank:
    @pytest.mark.parametrize("seed", range(5))
    def test_equals_dense(self, dg_setup, seed):
        cfg, X, dictionary = dg_setup
        p = draw_params(cfg, 4, make_rng(seed), dictionary, min_separation=2)
        ident, _ = true_ident(p, cfg)
        h, _ = synth_blocks(p, cfg, 3, make_rng(seed + 100))
        phi = observe(X, h, 0.1, make_rng(seed + 200))
        dense = lmmse_estimate(phi, X, channel_covariance(p, cfg), 0.1).h
        low = lmmse_estimate_lowrank(phi, X, ident.support, ident.gains, dictionary, cfg, 0.1).h
        assert np.linalg.norm(dense - low) / np.linalg.norm(dense) < 1e-10

    def test_zero_gain_dropped(self, dg_setup):
        cfg, X, dictionary = dg_setup
        rng = np.random.default_rng(0)
        support = np.array([5, 20, 40])
        gains = np.tile([1.0, 0.0, 0.5], (cfg.N_c, 1))
        phi = rng.standard_normal((2, cfg.N_c, X.shape[0])) + 0j
        full = lmmse_estimate_lowrank(phi, X, support, gains, dictionary, cfg, 0.2).h
        sub = lmmse_estimate_lowrank(phi, X, support[[0, 2]], gains[:, [0, 2]], dictionary, cfg, 0.2).h
        np.testing.assert_allclose(full, sub, atol=1e-12)

    def test_all_zero_gains(self, dg_setup):
        cfg, X, dictionary = dg_setup
        h = lmmse_estimate_lowrank(np.ones((cfg.N_c, X.shape[0])), X, [1], np.zeros((cfg.N_c, 1)), dictionary, cfg, 1.0).h
        np.testing.assert_array_equal(h, 0)


class TestGainMMSE:
    def test_scalar_shrinkage(self):
        psi = np.ones((1, 1, 1), complex)
        z = gain_mmse(np.array([[2.0]]), psi, np.array([[1.0]]), 1.0)
        np.testing.assert_allclose(z, [[1.0]])

    def test_noiseless_exact(self, rng):
        psi = rng.standard_normal((2, 6, 3)) + 1j * rng.standard_normal((2, 6, 3))
        g = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        phi = np.einsum("lts,ls->lt", psi, g)
        z = gain_mmse(phi, psi, np.ones((2, 3)), 0.0)
        np.testing.assert_allclose(z, g, atol=1e-10)

    def test_shrinks_toward_zero(self, rng):
        psi = rng.standard_normal((1, 6, 2)) + 0j
        phi = rng.standard_normal((1, 6)) + 0j
        small = gain_mmse(phi, psi, np.ones((1, 2)), 10.0)
        big = gain_mmse(phi, psi, np.ones((1, 2)), 0.01)
        assert np.linalg.norm(small) < np.linalg.norm(big)

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            gain_mmse(np.ones((1, 3)), np.ones((1, 4, 2)), np.ones((1, 2)), 1.0)


class TestDelay:
    @pytest.mark.parametrize("tau_frac", [0.0, 0.13, 0.5, 0.77, 1.0])
    def test_exact(self, tau_frac):
        cfg = ArrayConfig(N_c=16, N=8)
        tau = tau_frac * cfg.max_delay
        g = np.array([1.0, -0.5j, 2.0 + 1j])
        zeta = g[:, None] * beta_coeffs(tau, cfg)[None, :]
        est, info = delay_estimate(zeta, cfg)
        assert abs(est - tau) < 1e-3 * cfg.T_s
        assert info["objective"] == pytest.approx(3.0, abs=1e-6)

    def test_objective_bounded(self, rng):
        cfg = ArrayConfig(N_c=16, N=8)
        z = rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8))
        vals = delay_objective(np.linspace(0, cfg.max_delay, 50), z, cfg)
        assert np.all(vals <= 4 + 1e-12) and np.all(vals >= 0)

    def test_degenerate(self):
        with pytest.raises(DegenerateObservation):
            delay_estimate(np.zeros((2, 16)), ArrayConfig(N_c=16, N=8))

    def test_needs_enough_subcarriers(self):
        with pytest.raises(ValueError):
            delay_estimate(np.ones(4), ArrayConfig(N_c=4, N=8))

    def test_fast_matches_full(self):
        cfg = ArrayConfig(N_c=16, N=8)
        tau = 2.4 * cfg.T_s
        zeta = beta_coeffs(tau, cfg)[None, :]
        assert abs(delay_estimate(zeta, cfg, fast=True)[0] - tau) < 1e-3 * cfg.T_s

    def test_error_shrinks_with_blocks(self):
        cfg = ArrayConfig(N_c=16, N=8)
        rng = np.random.default_rng(5)
        err = {}
        for K in (1, 50):
            e = []
            for _ in range(40):
                tau = rng.uniform(0, cfg.max_delay)
                g = (rng.standard_normal(K) + 1j * rng.standard_normal(K)) / np.sqrt(2)
                noise = 0.5 * (rng.standard_normal((K, 16)) + 1j * rng.standard_normal((K, 16)))
                zeta = g[:, None] * beta_coeffs(tau, cfg)[None, :] + noise
                e.append(abs(delay_estimate(zeta, cfg, grid_size=80)[0] - tau))
            err[K] = np.mean(e)
        assert err[50] < 0.5 * err[1]


class TestPathGains:
    def test_matches_pinv(self, rng):
        theta = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        zeta = rng.standard_normal((4, 6, 3)) + 1j * rng.standard_normal((4, 6, 3))
        big = np.zeros((18, 3), complex)
        for ell in range(6):
            big[3 * ell : 3 * ell + 3] = np.diag(theta[ell])
        expected = np.stack([np.linalg.pinv(big) @ zeta[k].reshape(-1) for k in range(4)])
        np.testing.assert_allclose(path_gains_lsq(zeta, theta), expected, atol=1e-12)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficient):
            path_gains_lsq(np.ones((2, 2)), np.array([[1.0, 0.0], [1.0, 0.0]]))


class TestDG:
    def test_noiseless_exact(self, dg_setup):
        cfg, X, dictionary = dg_setup
        p = draw_params(cfg, 3, make_rng(4), dictionary, min_separation=4)
        ident, order = true_ident(p, cfg)
        h, _ = synth_blocks(p, cfg, 5, make_rng(6))
        phi = observe(X, h, 0.0, 0)
        est = dg_estimate(phi, X, ident, dictionary, cfg, 0.0)
        assert np.linalg.norm(est.h - h) / np.linalg.norm(h) < 1e-6
        np.testing.assert_allclose(est.model.delays, p.delays[order], atol=1e-3 * cfg.T_s)

    def test_single_block_shape(self, dg_setup):
        cfg, X, dictionary = dg_setup
        p = draw_params(cfg, 2, make_rng(1), dictionary, min_separation=4)
        ident, _ = true_ident(p, cfg)
        h, _ = synth_blocks(p, cfg, 1, make_rng(2))
        est = dg_estimate(observe(X, h[0], 0.01, make_rng(3)), X, ident, dictionary, cfg, 0.01)
        assert est.h.shape == (cfg.N_c, cfg.M)

    def test_empty_support(self, dg_setup):
        cfg, X, dictionary = dg_setup
        with pytest.raises(ValueError):
            dg_estimate(np.ones((cfg.N_c, X.shape[0])), X, IdentResult([], np.zeros((cfg.N_c, 0)), "x"), dictionary, cfg, 1.0)

    def test_pooling_beats_lmmse_at_low_snr(self, dg_setup):
        # DG pools all blocks for the delays; per-subcarrier LMMSE cannot
        cfg, X, dictionary = dg_setup
        err_dg, err_lm = [], []
        for seed in range(10):
            p = draw_params(cfg, 3, make_rng(seed), dictionary, min_separation=4)
            ident, _ = true_ident(p, cfg)
            h, _ = synth_blocks(p, cfg, 100, make_rng(seed + 50))
            phi = observe(X, h, 1.0, make_rng(seed + 99))
            dg = dg_estimate(phi, X, ident, dictionary, cfg, 1.0).h
            lm = lmmse_estimate(phi, X, channel_covariance(p, cfg), 1.0).h
            err_dg.append(np.linalg.norm(dg - h) ** 2)
            err_lm.append(np.linalg.norm(lm - h) ** 2)
        assert np.mean(err_dg) < np.mean(err_lm)

    def test_point_source_channel(self):
        cfg = ArrayConfig(M=16, N_c=16, N=8)
        dictionary = make_dictionary(32, cfg)
        p = ChannelParams([dictionary.angles[10]], [1.0], [0.0], dict_indices=[10])
        X = training_matrix(best_ruler(8, 15), 16).entries
        ident, _ = true_ident(p, cfg)
        h, _ = synth_blocks(p, cfg, 3, make_rng(0))
        est = dg_estimate(observe(X, h, 0.0, 0), X, ident, dictionary, cfg, 0.0)
        assert np.linalg.norm(est.h - h) / np.linalg.norm(h) < 1e-6
