"""Transmit synthesis, DAM pre-delays, and the time-domain receive oracle."""

import numpy as np
import pytest

from damsec.channel import ArrayConfig, array_response
from damsec.waveform import (PrecoderSet, dam_pre_delays, qpsk_stream,
                             receive_oracle, strongest_path_reference,
                             synthesize_transmit)

from helpers import make_array, manual_channel


def _single_ue_precoders(cfg, f_rows, kappas, reference, f_s=None):
    n = cfg.num_antennas
    if f_s is None:
        f_s = np.zeros(n, dtype=complex)
    return PrecoderSet(sensing=f_s, comm=[np.atleast_2d(f_rows)],
                       pre_delays=[np.asarray(kappas)], references=[reference])


class TestSymbols:
    def test_unit_modulus(self):
        s = qpsk_stream(1000, np.random.default_rng(0))
        np.testing.assert_allclose(np.abs(s), 1.0)

    def test_zero_mean_unit_power(self):
        s = qpsk_stream(20_000, np.random.default_rng(1))
        assert abs(np.mean(s)) < 0.02
        assert np.mean(np.abs(s) ** 2) == pytest.approx(1.0, rel=0.02)


class TestStrongestPathReference:
    def test_single_path(self):
        cfg = make_array(4)
        ch = manual_channel(cfg, [(1.0, 0.1, 0)])
        assert strongest_path_reference(ch) == 0

    def test_argmax_of_magnitude(self):
        cfg = make_array(4)
        ch = manual_channel(cfg, [(1.0, 0.0, 0), (3.0, 0.2, 4), (2.0, 0.4, 7)])
        assert strongest_path_reference(ch) == 4

    def test_tie_breaks_to_smallest_tap(self):
        cfg = make_array(4)
        ch = manual_channel(cfg, [(1.0, 0.0, 2), (1.0, 0.2, 5)])
        assert strongest_path_reference(ch) == 2


class TestPreDelays:
    def test_kappa_definition(self):
        cfg = make_array(4)
        ch = manual_channel(cfg, [(1.0, 0.0, 0), (0.5, 0.2, 3), (0.2, 0.4, 5)])
        np.testing.assert_array_equal(dam_pre_delays(ch, 5), [5, 2, 0])

    def test_negative_kappa_rejected(self):
        cfg = make_array(4)
        ch = manual_channel(cfg, [(1.0, 0.0, 0), (0.5, 0.2, 3)])
        with pytest.raises(ValueError):
            dam_pre_delays(ch, 2)


class TestSynthesize:
    def test_sensing_only(self):
        cfg = make_array(4)
        rng = np.random.default_rng(0)
        f_s = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        pre = PrecoderSet(sensing=f_s, comm=[], pre_delays=[], references=[])
        s_d = qpsk_stream(50, rng)
        x = synthesize_transmit(pre, s_d, [], 50)
        np.testing.assert_allclose(x, np.outer(f_s, s_d))

    def test_single_path_no_delay(self):
        cfg = make_array(4)
        rng = np.random.default_rng(1)
        f_s = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        f_c = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        pre = _single_ue_precoders(cfg, f_c, [0], 0, f_s)
        s_d = qpsk_stream(40, rng)
        s_c = qpsk_stream(40, rng)
        x = synthesize_transmit(pre, s_d, [s_c], 40)
        np.testing.assert_allclose(x, np.outer(f_s, s_d) + np.outer(f_c, s_c))

    def test_pre_delay_shifts_stream(self):
        cfg = make_array(2)
        f_c = np.array([1.0 + 0j, 0.0])
        pre = _single_ue_precoders(cfg, f_c, [3], 3)
        s_c = qpsk_stream(30, np.random.default_rng(2))
        x = synthesize_transmit(pre, np.zeros(30, complex), [s_c], 30)
        np.testing.assert_allclose(x[0, 3:], s_c[:27])
        np.testing.assert_allclose(x[0, :3], 0.0)

    def test_empirical_power_accounting(self):
        cfg = make_array(6)
        rng = np.random.default_rng(3)
        f_s = 0.3 * (rng.standard_normal(6) + 1j * rng.standard_normal(6))
        rows = 0.2 * (rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6)))
        pre = _single_ue_precoders(cfg, rows, [2, 0], 2, f_s)
        horizon = 100_000
        s_d = qpsk_stream(horizon, rng)
        s_c = qpsk_stream(horizon, rng)
        x = synthesize_transmit(pre, s_d, [s_c], horizon)
        measured = np.mean(np.sum(np.abs(x[:, 10:]) ** 2, axis=0))
        assert measured == pytest.approx(pre.total_power(), rel=0.03)


class TestReceiveOracle:
    def test_identity_single_path(self):
        cfg = make_array(4)
        ch = manual_channel(cfg, [(1.0, 0.0, 0)])
        s = qpsk_stream(64, np.random.default_rng(4))
        x = np.outer(array_response(0.0, cfg), s)
        y = receive_oracle(ch, x, 0.0, cfg)
        np.testing.assert_allclose(y, s, atol=1e-12)

    def test_zero_input_noise_variance(self):
        cfg = make_array(4)
        ch = manual_channel(cfg, [(1.0, 0.0, 0)])
        x = np.zeros((4, 200_000), dtype=complex)
        y = receive_oracle(ch, x, 2.5, cfg, np.random.default_rng(5))
        assert np.mean(np.abs(y) ** 2) == pytest.approx(2.5, rel=0.05)

    def test_two_path_hand_expansion(self):
        cfg = make_array(3)
        rng = np.random.default_rng(6)
        g1, g2 = (rng.standard_normal(2) + 1j * rng.standard_normal(2))
        ch = manual_channel(cfg, [(g1, 0.2, 0), (g2, -0.4, 2)])
        x = rng.standard_normal((3, 10)) + 1j * rng.standard_normal((3, 10))
        y = receive_oracle(ch, x, 0.0, cfg)
        h1 = g1 * array_response(0.2, cfg)
        h2 = g2 * array_response(-0.4, cfg)
        expect = np.zeros(10, dtype=complex)
        for n in range(10):
            expect[n] = np.vdot(h1, x[:, n])
            if n >= 2:
                expect[n] += np.vdot(h2, x[:, n - 2])
        np.testing.assert_allclose(y, expect, atol=1e-12)

    def test_linearity(self):
        cfg = make_array(4)
        rng = np.random.default_rng(7)
        ch = manual_channel(cfg, [(1.2, 0.1, 0), (0.4j, -0.3, 1)])
        x1 = rng.standard_normal((4, 20)) + 1j * rng.standard_normal((4, 20))
        x2 = rng.standard_normal((4, 20)) + 1j * rng.standard_normal((4, 20))
        np.testing.assert_allclose(
            receive_oracle(ch, x1 + x2, 0.0, cfg),
            receive_oracle(ch, x1, 0.0, cfg) + receive_oracle(ch, x2, 0.0, cfg),
            atol=1e-12)

    def test_dam_aligned_desired_power(self):
        # after pre-compensation the aligned coefficient is sum_l h_l^H f_l
        cfg = make_array(6)
        rng = np.random.default_rng(8)
        ch = manual_channel(cfg, [(1.0 + 0.3j, 0.2, 0), (0.6, -0.5, 3)])
        rows = 0.5 * (rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6)))
        pre = _single_ue_precoders(cfg, rows, dam_pre_delays(ch, 3), 3)
        horizon = 100_000
        s_c = qpsk_stream(horizon, rng)
        x = synthesize_transmit(pre, np.zeros(horizon, complex), [s_c], horizon)
        y = receive_oracle(ch, x, 0.0, cfg)
        h = np.stack([g * array_response(a, cfg)
                      for g, a in zip(ch.gains, ch.angles)])
        coef_expect = sum(np.vdot(h[l], rows[l]) for l in range(2))
        coef = np.mean(y[10:] * np.conj(s_c[10 - 3:horizon - 3]))
        assert abs(coef) ** 2 == pytest.approx(abs(coef_expect) ** 2, rel=0.02)
