import numpy as np
import pytest

from blindoac.errors import ConditioningError, WaveformGenerationError
from blindoac.spectral import SampleGrid
from blindoac.waveform import (
    WaveformSpec,
    apply_inverse_waveform,
    generate_waveform_matrix,
    waveform_matrix_from_samples,
)

GRID17 = SampleGrid.from_length(17)


def test_dense_matrix_matches_definition():
    wf = generate_waveform_matrix(WaveformSpec(L=17, M=8, seed=42), GRID17)
    G = wf.G
    E = np.exp(2j * np.pi * np.outer(np.arange(17), np.arange(17)) / 17)
    assert np.abs(G - wf.g_samples[:, None] * E).max() < 1e-12


def test_apply_matches_dense_matmul():
    wf = generate_waveform_matrix(WaveformSpec(L=17, M=8, seed=7), GRID17)
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=17) + 1j * rng.normal(size=17)
        assert np.abs(wf.apply(x) - wf.G @ x).max() < 1e-8


def test_round_trip_inverse():
    wf = generate_waveform_matrix(WaveformSpec(L=17, M=8, seed=42), GRID17)
    rng = np.random.default_rng(5)
    for _ in range(100):
        x = rng.normal(size=17) + 1j * rng.normal(size=17)
        assert np.abs(wf.solve(wf.apply(x)) - x).max() < 1e-8 * max(1, np.abs(x).max())


def test_invertibility_via_dense_inverse():
    wf = generate_waveform_matrix(WaveformSpec(L=17, M=8, seed=42), GRID17, max_condition=1e6)
    G = wf.G
    assert np.abs(G @ np.linalg.inv(G) - np.eye(17)).max() <= 1e-8


def test_condition_number_matches_svd():
    wf = generate_waveform_matrix(WaveformSpec(L=17, M=8, seed=11), GRID17)
    s = np.linalg.svd(wf.G, compute_uv=False)
    assert np.isclose(wf.condition_number, s[0] / s[-1], rtol=1e-8)


def test_constant_samples_give_scaled_dft_structure():
    wf = waveform_matrix_from_samples(np.ones(17, dtype=complex), seed=0)
    E = np.exp(2j * np.pi * np.outer(np.arange(17), np.arange(17)) / 17)
    assert np.abs(wf.G - E).max() < 1e-12
    assert np.isclose(wf.condition_number, 1.0)


def test_zero_sample_rejected():
    g = np.ones(17, dtype=complex)
    g[3] = 0.0
    with pytest.raises((ValueError, ConditioningError)):
        wf = waveform_matrix_from_samples(g, seed=0)
        apply_inverse_waveform(wf, np.ones(17, dtype=complex))


def test_retry_budget_exhaustion_reports_best():
    with pytest.raises(WaveformGenerationError) as err:
        generate_waveform_matrix(WaveformSpec(L=17, M=8, seed=0), GRID17, max_condition=1.0001)
    assert err.value.best_condition > 1.0001


def test_deterministic_generation():
    a = generate_waveform_matrix(WaveformSpec(L=33, M=16, seed=9), SampleGrid.from_length(33))
    b = generate_waveform_matrix(WaveformSpec(L=33, M=16, seed=9), SampleGrid.from_length(33))
    assert np.array_equal(a.g_samples, b.g_samples)
    assert a.seed == b.seed


def test_retry_advances_seed_until_bound_met():
    grid = SampleGrid.from_length(9)
    wf = generate_waveform_matrix(WaveformSpec(L=9, M=4, seed=0), grid, max_condition=20.0)
    assert wf.condition_number <= 20.0
    assert wf.seed >= 0
