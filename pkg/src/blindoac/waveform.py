"""Random matched-filter waveforms and the resulting frequency-domain matrix.

Each transmitted pulse is a random sinc expansion r(t) = sum_l a_l sinc(tB - l)
with a_l ~ N(0, 1/L).  After the matched filter the receiver sees the
autocorrelation g, sampled at t = l/B and wrapped circularly onto the
L-sample window.  The measurement matrix factors as

    G = Diag(g) @ E,   E[l, q] = e^{j 2 pi l q / L},

so the singular values of G are sqrt(L) |g_l|: the condition number is
max|g| / min|g| and both G X and G^{-1} Y reduce to FFTs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, WaveformGenerationError


@dataclass(frozen=True)
class WaveformSpec:
    """Seeded recipe for one random band's waveform."""

    L: int
    M: int
    seed: int

    def coefficients(self):
        """Sinc-expansion coefficients a_l, l = -(L+M)..(L+M), i.i.d. N(0, 1/L)."""
        rng = np.random.default_rng(self.seed)
        n = 2 * (self.L + self.M) + 1
        return rng.normal(0.0, np.sqrt(1.0 / self.L), size=n)


def _periodized_autocorrelation(coeffs, L):
    """Autocorrelation lags of the sinc expansion, wrapped circularly mod L.

    Sinc kernels are orthonormal under the matched-filter convolution, so
    g(m/B) = sum_l a_l a_{l+m}; periodization folds every lag onto its
    residue class mod L.
    """
    full = np.correlate(coeffs, coeffs, mode="full")  # lags -(n-1)..(n-1)
    lags = np.arange(-(len(coeffs) - 1), len(coeffs))
    g = np.zeros(L)
    np.add.at(g, np.mod(lags, L), full)
    return g


@dataclass(frozen=True)
class WaveformMatrix:
    """Factored waveform matrix G = Diag(g) E for one frequency band."""

    g_samples: np.ndarray
    condition_number: float
    seed: int

    @property
    def L(self):
        return len(self.g_samples)

    @property
    def G(self):
        """Dense L x L matrix [G]_{l,q} = g(l/B) e^{j 2 pi l q / L}."""
        L = self.L
        l, q = np.indices((L, L))
        return self.g_samples[:, None] * np.exp(2j * np.pi * l * q / L)

    def apply(self, X):
        """G @ X along the last axis, via the FFT factorization."""
        X = np.asarray(X, dtype=np.complex128)
        return self.g_samples * (self.L * np.fft.ifft(X, axis=-1))

    def solve(self, Y):
        """G^{-1} @ Y along the last axis."""
        Y = np.asarray(Y, dtype=np.complex128)
        return np.fft.fft(Y / self.g_samples, axis=-1) / self.L


def waveform_matrix_from_samples(g_samples, max_condition=1e6, seed=-1):
    """Build a WaveformMatrix from explicit autocorrelation samples."""
    g = np.asarray(g_samples)
    if np.iscomplexobj(g):
        if np.abs(g.imag).max() > 1e-12 * max(1.0, np.abs(g).max()):
            raise ValueError("autocorrelation samples must be real")
        g = g.real.copy()
    g = g.astype(float)
    gmin = np.abs(g).min()
    if gmin == 0.0:
        raise ConditioningError("waveform autocorrelation has a zero sample; G is singular")
    cond = float(np.abs(g).max() / gmin)
    if cond > max_condition:
        raise ConditioningError(f"condition number {cond:.3e} exceeds bound {max_condition:.3e}")
    return WaveformMatrix(g_samples=g, condition_number=cond, seed=seed)


def generate_waveform_matrix(spec, grid, max_condition=1e6, max_retries=32):
    """Draw the random waveform, retrying with incremented seeds if badly conditioned."""
    if max_condition <= 1.0:
        raise ValueError("max_condition must exceed 1")
    best = np.inf
    for attempt in range(max_retries):
        seed = spec.seed + attempt
        coeffs = WaveformSpec(L=spec.L, M=spec.M, seed=seed).coefficients()
        g = _periodized_autocorrelation(coeffs, grid.L)
        gmin = np.abs(g).min()
        cond = np.inf if gmin == 0.0 else float(np.abs(g).max() / gmin)
        best = min(best, cond)
        if cond <= max_condition:
            return WaveformMatrix(g_samples=g, condition_number=cond, seed=seed)
    raise WaveformGenerationError(
        f"no waveform met condition bound {max_condition:.3e} in {max_retries} draws "
        f"(best {best:.3e})",
        best_condition=best,
    )


def apply_inverse_waveform(wf, Y):
    """V = G^{-1} Y; raises if G is too ill-conditioned to trust the inverse."""
    if not np.isfinite(wf.condition_number) or np.abs(wf.g_samples).min() == 0.0:
        raise ConditioningError("waveform matrix is singular")
    return wf.solve(Y)
