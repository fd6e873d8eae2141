"""Stage-1 frame protocol, LS channel inversion, and 2D-MUSIC."""

import numpy as np
import pytest

from damsec.angle_sensing import (ConditioningError, FrameConfig,
                                  default_angle_grid, fir_taps,
                                  frame_covariance, ls_channel_estimate,
                                  make_precoder_schedule, make_probing_matrix,
                                  manifold_vector, music_estimate,
                                  simulate_frame_covariance, simulate_subframe,
                                  time_space_matrix, vectorize_estimate)
from damsec.channel import array_response
from damsec.delay_sensing import pulse_vector

from helpers import make_array, manual_channel


def _frame(num_taps, n_ant, power=1.0, q=10, seed=0):
    rng = np.random.default_rng(seed)
    return FrameConfig(num_taps=num_taps, num_subframes=q,
                       probing=make_probing_matrix(num_taps, rng),
                       precoder_schedule=make_precoder_schedule(n_ant, power))


class TestProbing:
    def test_toeplitz_unimodular(self):
        s_a = make_probing_matrix(8, np.random.default_rng(0))
        np.testing.assert_allclose(np.abs(s_a), 1.0)
        for i in range(7):
            np.testing.assert_allclose(s_a[i, :-1], s_a[i + 1, 1:])

    def test_well_conditioned(self):
        for seed in range(20):
            s_a = make_probing_matrix(16, np.random.default_rng(seed))
            assert np.linalg.cond(s_a) < 1e6

    def test_frame_config_rejects_singular(self):
        bad = np.ones((4, 4), dtype=complex)
        with pytest.raises(ConditioningError):
            FrameConfig(num_taps=4, num_subframes=2, probing=bad,
                        precoder_schedule=make_precoder_schedule(4, 1.0))


class TestSchedule:
    def test_column_power(self):
        f_s = make_precoder_schedule(8, 3.0)
        np.testing.assert_allclose(np.sum(np.abs(f_s) ** 2, axis=0),
                                   np.full(8, 3.0 / 8))

    def test_unimodular_entries(self):
        f_s = make_precoder_schedule(8, 2.0)
        np.testing.assert_allclose(np.abs(f_s), np.sqrt(2.0 / 8) / np.sqrt(8))

    def test_orthogonal_columns(self):
        f_s = make_precoder_schedule(6, 1.0)
        gram = f_s.conj().T @ f_s
        np.testing.assert_allclose(gram, np.diag(np.diag(gram)), atol=1e-12)


class TestFirTaps:
    def test_single_path_coefficient(self):
        cfg = make_array(4)
        g = 0.7 - 0.2j
        ch = manual_channel(cfg, [(g, 0.3, 2)])
        f = np.random.default_rng(0).standard_normal(4) + 0j
        h = fir_taps(ch, f, 6, cfg)
        expect = np.conj(g) * np.vdot(array_response(0.3, cfg), f)
        assert h[2] == pytest.approx(expect)
        assert np.all(h[[0, 1, 3, 4, 5]] == 0)

    def test_taps_too_small_rejected(self):
        cfg = make_array(4)
        ch = manual_channel(cfg, [(1.0, 0.0, 0), (0.5, 0.2, 5)])
        with pytest.raises(ValueError):
            fir_taps(ch, np.ones(4, complex), 5, cfg)


class TestTimeSpaceMatrix:
    def test_columns_hold_path_vectors(self):
        cfg = make_array(5)
        g1, g2 = 1.0 + 0.5j, -0.3
        ch = manual_channel(cfg, [(g1, 0.1, 0), (g2, -0.4, 3)])
        h = time_space_matrix(ch, 4, cfg)
        np.testing.assert_allclose(h[:, 0], g1 * array_response(0.1, cfg))
        np.testing.assert_allclose(h[:, 3], g2 * array_response(-0.4, cfg))
        np.testing.assert_allclose(h[:, [1, 2]], 0.0)

    def test_fir_consistency(self):
        # h[m] from fir_taps equals column m of H_s^H applied to f_s
        cfg = make_array(6)
        rng = np.random.default_rng(1)
        ch = manual_channel(cfg, [(1.0, 0.0, 0), (0.4j, 0.5, 2), (0.2, -0.7, 4)])
        f = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        h_mat = time_space_matrix(ch, 5, cfg)
        np.testing.assert_allclose(fir_taps(ch, f, 5, cfg),
                                   h_mat.conj().T @ f, atol=1e-14)


class TestVectorization:
    def test_khatri_rao_identity(self):
        # vec(H_s) = sum_l beta_l p(n_l) kron a(phi_l) on integer taps
        cfg = make_array(4)
        entries = [(1.0 + 0.2j, 0.1, 0), (0.5, -0.3, 2), (0.3j, 0.6, 3)]
        ch = manual_channel(cfg, entries)
        m = 5
        vec = vectorize_estimate(time_space_matrix(ch, m, cfg).conj().T)
        expect = np.zeros(m * 4, dtype=complex)
        for g, a, n in entries:
            expect += g * manifold_vector(a, n / cfg.bandwidth, 0.0, m, cfg)
        np.testing.assert_allclose(vec, expect, atol=1e-12)

    def test_manifold_is_kron(self):
        cfg = make_array(4)
        tau = 2.0 / cfg.bandwidth
        u = manifold_vector(0.3, tau, 0.0, 6, cfg)
        np.testing.assert_allclose(
            u, np.kron(pulse_vector(tau, 0.0, cfg.bandwidth, 6),
                       array_response(0.3, cfg)))
        assert np.linalg.norm(u) == pytest.approx(1.0)


class TestLsEstimate:
    def test_noiseless_exact(self):
        cfg = make_array(8)
        ch = manual_channel(cfg, [(1.0, 0.1, 0), (0.5j, -0.2, 2), (0.3, 0.4, 5)])
        frame = _frame(8, 8)
        y = simulate_subframe(ch, frame, 0.0, cfg, np.random.default_rng(0))
        h_hat = ls_channel_estimate(y, frame)
        np.testing.assert_allclose(h_hat, time_space_matrix(ch, 8, cfg).conj().T,
                                   atol=1e-10)

    def test_noise_energy_propagation(self):
        # E||H_hat - H||_F^2 = sigma^2 tr((S S^H)^-1) tr((F F^H)^-1)
        cfg = make_array(6)
        ch = manual_channel(cfg, [(1.0, 0.0, 0)])
        frame = _frame(4, 6, power=2.0, seed=3)
        s_a, f_s = frame.probing, frame.precoder_schedule
        sigma2 = 0.01
        expect = sigma2 * np.trace(np.linalg.inv(s_a @ s_a.conj().T)).real \
            * np.trace(np.linalg.inv(f_s @ f_s.conj().T)).real
        truth = time_space_matrix(ch, 4, cfg).conj().T
        rng = np.random.default_rng(4)
        err = np.mean([
            np.linalg.norm(ls_channel_estimate(
                simulate_subframe(ch, frame, sigma2, cfg, rng), frame) - truth) ** 2
            for _ in range(4000)])
        assert err == pytest.approx(expect, rel=0.05)


class TestCovariance:
    def test_sample_covariance_formula(self):
        rng = np.random.default_rng(5)
        vecs = [rng.standard_normal(6) + 1j * rng.standard_normal(6)
                for _ in range(3)]
        cov = frame_covariance(vecs)
        expect = sum(np.outer(v, v.conj()) for v in vecs) / 3
        np.testing.assert_allclose(cov, expect, atol=1e-14)
        np.testing.assert_allclose(cov, cov.conj().T, atol=1e-14)

    def test_noise_subspace_orthogonality(self):
        # noiseless covariance column space = span of the path manifolds
        cfg = make_array(8)
        entries = [(1.0, 0.15, 0), (0.6, -0.35, 3), (0.4, 0.55, 6)]
        ch = manual_channel(cfg, entries)
        frame = _frame(8, 8, q=16, seed=6)
        cov = simulate_frame_covariance(ch, frame, 0.0, cfg,
                                        np.random.default_rng(6))
        evals, evecs = np.linalg.eigh(cov)
        noise = evecs[:, :-3]
        for g, a, n in entries:
            u = manifold_vector(a, n / cfg.bandwidth, 0.0, 8, cfg)
            assert np.linalg.norm(noise.conj().T @ u) < 1e-8


class TestMusic:
    def _on_grid_channel(self, cfg, grid):
        # angles on exact grid cells, integer taps
        picks = [(1.0, grid[300], 0), (0.6, grid[520], 3), (0.5, grid[130], 6)]
        return manual_channel(cfg, picks), picks

    def test_exact_on_grid_noiseless(self):
        cfg = make_array(10)
        grid = default_angle_grid()
        ch, picks = self._on_grid_channel(cfg, grid)
        frame = _frame(8, 10, q=16, seed=7)
        cov = simulate_frame_covariance(ch, frame, 0.0, cfg,
                                        np.random.default_rng(7))
        res = music_estimate(cov, 3, cfg, 8, angle_grid=grid)
        assert res.success
        found = sorted(res.peaks, key=lambda p: p[1])
        truth = sorted([(a, float(n)) for _, a, n in picks], key=lambda p: p[1])
        for (a_hat, n_hat), (a, n) in zip(found, truth):
            assert abs(a_hat - a) < 1e-9
            assert abs(n_hat - n) < 1e-9

    def test_flat_spectrum_fails(self):
        cfg = make_array(4)
        res = music_estimate(np.eye(4 * 4, dtype=complex), 2, cfg, 4)
        assert not res.success

    def test_guard_suppression_separates_close_peaks(self):
        # two paths in the same tap but different angles must both be found
        cfg = make_array(12)
        grid = default_angle_grid()
        ch = manual_channel(cfg, [(1.0, grid[300], 0), (0.8, grid[500], 2)])
        frame = _frame(6, 12, q=12, seed=8)
        cov = simulate_frame_covariance(ch, frame, 0.0, cfg,
                                        np.random.default_rng(8))
        res = music_estimate(cov, 2, cfg, 6, angle_grid=grid)
        assert res.success
        taps = sorted(round(p[1]) for p in res.peaks)
        assert taps == [0, 2]

    def test_dimension_mismatch_rejected(self):
        cfg = make_array(4)
        with pytest.raises(ValueError):
            music_estimate(np.eye(10, dtype=complex), 2, cfg, 4)
