"""Asynchronous over-the-air uplink: precoding, fading, delays and noise.

One communication round transmits all N gradient elements at once, each
over its own frequency band with its own random waveform; the device
delays and fading coefficients are shared across bands within a round.
Everything is simulated at the sampled frequency-domain level: the
continuous waveform enters only through the factored matrix G per band.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, PrecodeError
from .spectral import atom_matrix
from .waveform import WaveformSpec, generate_waveform_matrix


@dataclass(frozen=True)
class ChannelRealization:
    """Per-round device state: fading h, delays tau, power control p."""

    h: np.ndarray
    tau: np.ndarray
    p: np.ndarray
    seed: int

    @property
    def K(self):
        return len(self.h)

    def composite_gain(self):
        """Per-device channel x precode scalar h_k (h_k*/|h_k|) sqrt(p_k)."""
        return self.h * np.conj(self.h) / np.abs(self.h) * np.sqrt(self.p)


def draw_channel(K, seed, rayleigh=False):
    """Draw fading and delays for one round; p_k = |h_k|^-2 (full inversion)."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    rng = np.random.default_rng(seed)
    if rayleigh:
        h = (rng.normal(size=K) + 1j * rng.normal(size=K)) / np.sqrt(2.0)
        # resample near-zero fades; full inversion would explode
        while np.any(np.abs(h) < 1e-3):
            bad = np.abs(h) < 1e-3
            h[bad] = (rng.normal(size=bad.sum()) + 1j * rng.normal(size=bad.sum())) / np.sqrt(2.0)
    else:
        # unit-sphere scalars: pure phases
        h = np.exp(2j * np.pi * rng.uniform(size=K))
    tau = rng.uniform(0.0, 1.0, size=K)
    p = np.abs(h) ** -2.0
    return ChannelRealization(h=h, tau=tau, p=p, seed=int(seed))


@dataclass(frozen=True)
class PrecodedGradient:
    """Positivity-shifted gradients ready for analog transmission."""

    shifted: np.ndarray  # (N, K), all entries >= 0
    gamma: float
    device_scale: np.ndarray  # (K,) complex precode factor h*/|h| sqrt(p)

    @property
    def N(self):
        return self.shifted.shape[0]

    @property
    def K(self):
        return self.shifted.shape[1]


def precode(gradients, gamma, realization):
    """Shift gradients by gamma and attach the per-device precoding scalar."""
    gradients = np.atleast_2d(np.asarray(gradients, dtype=float))
    if gradients.shape[1] != realization.K:
        raise ValueError(
            f"gradient columns ({gradients.shape[1]}) must match K ({realization.K})"
        )
    shifted = gradients + gamma
    if np.any(shifted < 0):
        i, k = np.unravel_index(np.argmin(shifted), shifted.shape)
        raise PrecodeError(
            f"shifted gradient negative at element i={i}, device k={k}: "
            f"{gradients[i, k]} + {gamma} < 0",
            index=(int(i), int(k)),
        )
    scale = np.conj(realization.h) / np.abs(realization.h) * np.sqrt(realization.p)
    return PrecodedGradient(shifted=shifted, gamma=float(gamma), device_scale=scale)


@dataclass(frozen=True)
class RoundMeasurement:
    """Receiver-side observations V_i = G_i^{-1} Y_i for every element."""

    V: np.ndarray            # (N, L) complex
    sigma_z: np.ndarray      # (N,) per-band noise std (pre-inversion, per entry)
    sigma_v: np.ndarray      # (N,) per-band noise std seen on V (post-inversion)
    snr_db: float
    waveform_seeds: np.ndarray
    seed: int

    @property
    def N(self):
        return self.V.shape[0]

    @property
    def L(self):
        return self.V.shape[1]

    def to_dict(self):
        return {
            "V": {"re": self.V.real.tolist(), "im": self.V.imag.tolist()},
            "sigma_z": self.sigma_z.tolist(),
            "sigma_v": self.sigma_v.tolist(),
            "snr_db": self.snr_db,
            "waveform_seeds": self.waveform_seeds.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            V=np.array(d["V"]["re"]) + 1j * np.array(d["V"]["im"]),
            sigma_z=np.array(d["sigma_z"]),
            sigma_v=np.array(d["sigma_v"]),
            snr_db=d["snr_db"],
            waveform_seeds=np.array(d["waveform_seeds"]),
            seed=d["seed"],
        )


def calibrate_noise(GX, target_snr_db, seed):
    """Draw circular Gaussian noise rescaled so the realized SNR is exact.

    SNR = 20 log10(||GX|| / ||Z||); target may be np.inf for noiseless.
    """
    GX = np.asarray(GX)
    L = GX.shape[-1]
    if np.isinf(target_snr_db):
        return np.zeros(L, dtype=np.complex128), 0.0
    energy = np.linalg.norm(GX)
    if energy == 0.0:
        raise CalibrationError("cannot set a finite SNR against a zero-energy signal")
    rng = np.random.default_rng(seed)
    Z = (rng.normal(size=L) + 1j * rng.normal(size=L)) / np.sqrt(2.0)
    Z *= energy / (np.linalg.norm(Z) * 10.0 ** (target_snr_db / 20.0))
    return Z, float(np.linalg.norm(Z) / np.sqrt(L))


def transmit_round(pg, realization, grid, target_snr_db, seed,
                   max_condition=1e6, white_noise_after_inversion=False):
    """Simulate one uplink round; returns the matrix of measurements V.

    Per element i: X_i = sum_k shifted[i,k] * gain_k * a(tau_k), a fresh
    random waveform G_i, exact-SNR noise Z_i, and V_i = G_i^{-1}(G_i X_i + Z_i).
    With white_noise_after_inversion the noise is instead added directly
    to X_i (calibrated against ||X_i||), bypassing the G^{-1} coloring.
    """
    if pg.K != realization.K:
        raise ValueError(f"precoded K ({pg.K}) != channel K ({realization.K})")
    N, K = pg.shifted.shape
    L = grid.L

    gain = realization.composite_gain()
    if np.abs(gain.imag).max() > 1e-9:
        # power control other than full inversion would leave a complex gain
        amps = pg.shifted * gain[None, :]
    else:
        amps = pg.shifted * gain.real[None, :]
    A = atom_matrix(realization.tau, grid)  # (L, K)
    X = amps @ A.T  # (N, L)

    ss = np.random.SeedSequence(seed)
    wf_states = ss.generate_state(2 * N + 1, dtype=np.uint64)
    wf_seeds = np.empty(N, dtype=np.uint64)
    V = np.empty((N, L), dtype=np.complex128)
    sigma_z = np.empty(N)
    sigma_v = np.empty(N)

    for i in range(N):
        wf = generate_waveform_matrix(
            WaveformSpec(L=L, M=grid.M, seed=int(wf_states[2 * i])),
            grid, max_condition=max_condition,
        )
        wf_seeds[i] = wf.seed
        if white_noise_after_inversion:
            Zh, sig = calibrate_noise(X[i], target_snr_db, int(wf_states[2 * i + 1]))
            V[i] = X[i] + Zh
            sigma_z[i] = sig
            sigma_v[i] = sig
        else:
            GX = wf.apply(X[i])
            Z, sig = calibrate_noise(GX, target_snr_db, int(wf_states[2 * i + 1]))
            V[i] = wf.solve(GX + Z)
            sigma_z[i] = sig
            sigma_v[i] = float(np.linalg.norm(wf.solve(Z)) / np.sqrt(L))

    return RoundMeasurement(
        V=V, sigma_z=sigma_z, sigma_v=sigma_v,
        snr_db=float(target_snr_db), waveform_seeds=wf_seeds, seed=int(seed),
    )
