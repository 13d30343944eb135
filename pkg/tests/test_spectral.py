import numpy as np
import pytest

from blindoac.errors import DecompositionError, FullRankError
from blindoac.spectral import (
    SampleGrid,
    atom_matrix,
    delay_signature,
    dirichlet_atom,
    generator_from_components,
    synthesize_mixture,
    toeplitz_from_generator,
    vandermonde_decompose,
)


class TestSampleGrid:
    def test_from_length(self):
        g = SampleGrid.from_length(17)
        assert g.L == 17 and g.M == 8

    def test_from_length_rejects_even(self):
        with pytest.raises(ValueError):
            SampleGrid.from_length(16)

    def test_from_nominal_maps_even_to_odd(self):
        assert SampleGrid.from_nominal(8).L == 9
        assert SampleGrid.from_nominal(128).L == 129
        assert SampleGrid.from_nominal(17).L == 17


class TestAtomIdentities:
    @pytest.mark.parametrize("L", [5, 9, 17, 33, 129])
    def test_partition_of_unity(self, L):
        grid = SampleGrid.from_length(L)
        taus = np.random.default_rng(L).uniform(size=200)
        A = atom_matrix(taus, grid)
        assert np.abs(A.sum(axis=0) - 1.0).max() < 1e-12

    @pytest.mark.parametrize("L", [5, 9, 17])
    def test_atoms_are_real(self, L):
        grid = SampleGrid.from_length(L)
        taus = np.random.default_rng(L + 1).uniform(size=50)
        A = atom_matrix(taus, grid)
        assert np.abs(A.imag).max() < 1e-12

    @pytest.mark.parametrize("L", [5, 9, 17, 33])
    def test_on_grid_collapse(self, L):
        grid = SampleGrid.from_length(L)
        for q in range(L):
            a = dirichlet_atom(q / L, grid).values
            e = np.zeros(L)
            e[q] = 1.0
            assert np.abs(a - e).max() < 1e-12

    def test_matches_brute_force_sum(self):
        # independent oracle: evaluate the defining double sum directly
        grid = SampleGrid.from_length(9)
        tau = 0.3173
        a = dirichlet_atom(tau, grid).values
        M = grid.M
        brute = np.empty(9, dtype=complex)
        for idx, q in enumerate(range(9)):
            qs = q if q <= M else q - 9  # storage order -> symmetric order
            brute[idx] = sum(
                np.exp(2j * np.pi * (qs - 9 * tau) * r / 9) for r in range(-M, M + 1)
            ) / 9
        assert np.abs(a - brute).max() < 1e-12


class TestSynthesis:
    def test_mixture_entry_sum_is_amplitude_sum(self):
        grid = SampleGrid.from_length(17)
        comps = [(0.11, 1.5), (0.52, 0.7), (0.93, 2.2)]
        mix = synthesize_mixture(comps, grid)
        assert abs(mix.values.sum() - 4.4) < 1e-12

    def test_mixture_matches_atom_matrix(self):
        grid = SampleGrid.from_length(9)
        comps = [(0.2, 1.0), (0.7, 3.0)]
        mix = synthesize_mixture(comps, grid)
        A = atom_matrix(np.array([0.2, 0.7]), grid)
        assert np.abs(mix.values - A @ np.array([1.0, 3.0])).max() < 1e-12


class TestToeplitz:
    def test_generator_gives_hermitian_psd(self):
        gen = generator_from_components([(0.23, 1.0), (0.61, 2.0)], 9)
        T = toeplitz_from_generator(gen)
        assert np.abs(T - T.conj().T).max() < 1e-12
        assert np.linalg.eigvalsh(T).min() > -1e-10

    def test_toeplitz_matches_signature_outer_products(self):
        L, comps = 9, [(0.23, 1.0), (0.61, 2.0)]
        gen = generator_from_components(comps, L)
        T = toeplitz_from_generator(gen)
        ref = np.zeros((L, L), dtype=complex)
        for tau, amp in comps:
            d = delay_signature(tau, L)
            ref += amp * np.outer(d, d.conj())
        assert np.abs(T - ref).max() < 1e-10


class TestVandermondeDecompose:
    @pytest.mark.parametrize("L,comps", [
        (9, [(0.2, 1.0)]),
        (17, [(0.13, 0.5), (0.44, 2.0), (0.81, 1.1)]),
        (33, [(0.101, 1.0), (0.115, 1.0), (0.7, 0.3)]),  # clustered pair
    ])
    def test_roundtrip(self, L, comps):
        gen = generator_from_components(comps, L)
        rec = vandermonde_decompose(gen)
        assert len(rec) == len(comps)
        for (t0, a0), (t1, a1) in zip(sorted(comps), rec):
            assert abs(t0 - t1) < 1e-7
            assert abs(a0 - a1) < 1e-6

    def test_zero_generator_gives_empty_support(self):
        gen = generator_from_components([], 9)
        assert vandermonde_decompose(gen) == []

    def test_indefinite_generator_rejected(self):
        gen = generator_from_components([(0.2, 1.0)], 9)
        bad = type(gen)(u=gen.u - np.eye(1, 9, 0)[0] * 5.0)
        with pytest.raises(DecompositionError):
            vandermonde_decompose(bad)

    def test_full_rank_rejected(self):
        rng = np.random.default_rng(0)
        taus = rng.uniform(size=9)
        gen = generator_from_components(list(zip(taus, np.ones(9))), 9)
        with pytest.raises(FullRankError):
            vandermonde_decompose(gen)

    def test_wraparound_duplicates_merged(self):
        gen = generator_from_components([(1e-12, 1.0), (1.0 - 1e-12, 1.0)], 9)
        rec = vandermonde_decompose(gen)
        assert len(rec) == 1
        assert abs(rec[0][1] - 2.0) < 1e-6
