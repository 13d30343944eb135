import json

import numpy as np
import pytest

from blindoac.channel import (
    RoundMeasurement,
    calibrate_noise,
    draw_channel,
    precode,
    transmit_round,
)
from blindoac.errors import CalibrationError, PrecodeError
from blindoac.spectral import SampleGrid

GRID17 = SampleGrid.from_length(17)


class TestDrawChannel:
    def test_unit_sphere_default(self):
        ch = draw_channel(8, seed=1)
        assert np.allclose(np.abs(ch.h), 1.0)
        assert np.allclose(ch.p, 1.0)
        assert np.all((ch.tau >= 0) & (ch.tau < 1))

    def test_rayleigh_power_inversion(self):
        ch = draw_channel(10, seed=2, rayleigh=True)
        assert not np.allclose(np.abs(ch.h), 1.0)
        assert np.allclose(ch.p, np.abs(ch.h) ** -2)
        assert np.allclose(np.abs(ch.composite_gain()), 1.0)

    def test_composite_gain_is_exactly_one_phase_free(self):
        ch = draw_channel(5, seed=3)
        assert np.abs(ch.composite_gain() - 1.0).max() < 1e-12


class TestPrecode:
    def test_negative_after_shift_rejected(self):
        ch = draw_channel(2, seed=0)
        grads = np.array([[-2.0, 0.5]])
        with pytest.raises(PrecodeError) as err:
            precode(grads, 1.0, ch)
        assert err.value.index == (0, 0)

    def test_shift_applied(self):
        ch = draw_channel(2, seed=0)
        pg = precode(np.array([[-0.5, 0.5]]), 1.0, ch)
        assert np.allclose(pg.shifted, [[0.5, 1.5]])


class TestCalibrateNoise:
    def test_exact_snr(self):
        rng = np.random.default_rng(0)
        for t in range(100):
            gx = rng.normal(size=17) + 1j * rng.normal(size=17)
            z, sigma = calibrate_noise(gx, 12.0, seed=t)
            realized = 20 * np.log10(np.linalg.norm(gx) / np.linalg.norm(z))
            assert abs(realized - 12.0) < 1e-9
            assert np.isclose(sigma, np.linalg.norm(z) / np.sqrt(17))

    def test_infinite_target_gives_zero(self):
        z, sigma = calibrate_noise(np.ones(17), np.inf, seed=0)
        assert np.all(z == 0) and sigma == 0.0

    def test_known_norm_arithmetic(self):
        gx = np.zeros(4)
        gx[0] = 10.0
        z, _ = calibrate_noise(gx, 20.0, seed=1)
        assert np.isclose(np.linalg.norm(z), 1.0)

    def test_zero_signal_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_noise(np.zeros(17), 10.0, seed=0)


class TestTransmitRound:
    def _round(self, snr=np.inf, seed=7, K=4, N=3, **kw):
        ch = draw_channel(K, seed=11)
        rng = np.random.default_rng(5)
        grads = rng.uniform(0.5, 1.5, size=(N, K))
        pg = precode(grads, 0.0, ch)
        return grads, ch, transmit_round(pg, ch, GRID17, snr, seed=seed, **kw)

    def test_noiseless_entry_sum_identity(self):
        grads, _, meas = self._round()
        sums = meas.V.sum(axis=1)
        assert np.abs(sums - grads.sum(axis=1)).max() < 1e-8
        assert np.abs(sums.imag).max() < 1e-8

    def test_single_on_grid_device(self):
        ch = draw_channel(1, seed=3)
        ch = type(ch)(h=ch.h, tau=np.zeros(1), p=ch.p, seed=ch.seed)
        pg = precode(np.array([[1.7]]), 0.0, ch)
        meas = transmit_round(pg, ch, GRID17, np.inf, seed=5)
        e0 = np.zeros(17)
        e0[0] = 1.7
        assert np.abs(meas.V[0] - e0).max() < 1e-8

    def test_noiseless_independent_of_fading(self):
        ch1 = draw_channel(4, seed=11)
        ch2 = draw_channel(4, seed=99)
        ch2 = type(ch2)(h=ch2.h, tau=ch1.tau, p=ch2.p, seed=ch2.seed)
        grads = np.random.default_rng(5).uniform(0.5, 1.5, size=(3, 4))
        m1 = transmit_round(precode(grads, 0.0, ch1), ch1, GRID17, np.inf, seed=7)
        m2 = transmit_round(precode(grads, 0.0, ch2), ch2, GRID17, np.inf, seed=7)
        assert np.abs(m1.V - m2.V).max() < 1e-10

    def test_deterministic(self):
        _, _, m1 = self._round(snr=10.0)
        _, _, m2 = self._round(snr=10.0)
        assert np.array_equal(m1.V, m2.V)
        assert np.array_equal(m1.sigma_v, m2.sigma_v)

    def test_white_mode_sigma_consistency(self):
        grads, _, meas = self._round(snr=10.0, white_noise_after_inversion=True)
        assert np.array_equal(meas.sigma_z, meas.sigma_v)
        assert np.all(meas.sigma_v > 0)

    def test_fresh_waveform_per_element(self):
        _, _, meas = self._round(N=5)
        assert len(set(meas.waveform_seeds.tolist())) == 5

    def test_json_roundtrip(self):
        _, _, meas = self._round(snr=15.0)
        blob = json.dumps(meas.to_dict())
        back = RoundMeasurement.from_dict(json.loads(blob))
        assert np.allclose(back.V, meas.V)
        assert back.snr_db == meas.snr_db

    def test_dimension_mismatch_rejected(self):
        ch = draw_channel(3, seed=0)
        pg = precode(np.ones((2, 3)), 0.0, ch)
        other = draw_channel(4, seed=1)
        with pytest.raises(ValueError):
            transmit_round(pg, other, GRID17, np.inf, seed=0)
