"""Dirichlet atoms, Toeplitz structure and Vandermonde decomposition.

Everything downstream (channel simulation, SDP solver, delay recovery)
is built from the objects in this module.  Vectors of length L use
"storage order" q = 0..L-1; the physical index is the symmetric one
q' in {-M..M} with q' = q for q <= M and q' = q - L otherwise.  All
kernels here are L-periodic, so storage order and symmetric order agree
entrywise and only the *labeling* differs.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .errors import DecompositionError, FullRankError


@dataclass(frozen=True)
class SampleGrid:
    """Frequency sampling grid with L = 2M + 1 samples."""

    L: int
    M: int

    def __post_init__(self):
        if self.L != 2 * self.M + 1:
            raise ValueError(f"L must equal 2M+1, got L={self.L}, M={self.M}")
        if self.L < 3:
            raise ValueError(f"need L >= 3, got {self.L}")

    @classmethod
    def from_length(cls, L):
        if L < 3 or L % 2 == 0:
            raise ValueError(f"L must be odd and >= 3, got {L}")
        return cls(L=L, M=(L - 1) // 2)

    @classmethod
    def from_nominal(cls, n):
        """Nearest odd grid size >= a nominal (possibly even) sample count."""
        L = n if n % 2 == 1 else n + 1
        return cls.from_length(max(L, 3))

    def storage_to_symmetric(self, q):
        q = np.asarray(q)
        return np.where(q <= self.M, q, q - self.L)

    def symmetric_to_storage(self, q):
        q = np.asarray(q)
        return np.mod(q, self.L)

    def symmetric_indices(self):
        """Symmetric index of every storage slot, shape (L,)."""
        return self.storage_to_symmetric(np.arange(self.L))


def _dirichlet(x, L):
    """Periodic Dirichlet kernel (1/L) sum_{r=-M}^{M} e^{j2pi x r / L}, real-valued."""
    x = np.asarray(x, dtype=float)
    num = np.sin(np.pi * x)
    den = L * np.sin(np.pi * x / L)
    on_grid = np.isclose(np.abs(den), 0.0, atol=1e-12)
    safe = np.where(on_grid, 1.0, den)
    # at x = n*L every term of the sum is 1, so the kernel equals 1 exactly
    return np.where(on_grid, 1.0, num / safe)


@dataclass(frozen=True)
class Atom:
    """Sampled delay signature a(tau), a real Dirichlet pulse centred at L*tau."""

    tau: float
    values: np.ndarray

    @property
    def L(self):
        return len(self.values)


def dirichlet_atom(tau, grid):
    """Atom vector [a(tau)]_q = (1/L) sum_r e^{j 2 pi (q - L tau) r / L} in storage order."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    q = np.arange(grid.L)
    vals = _dirichlet(q - grid.L * tau, grid.L).astype(np.complex128)
    return Atom(tau=float(tau), values=vals)


def atom_matrix(taus, grid):
    """Stack atoms as columns, shape (L, K)."""
    taus = np.asarray(taus, dtype=float)
    if taus.size and (taus.min() < 0.0 or taus.max() >= 1.0):
        raise ValueError("all delays must lie in [0, 1)")
    q = np.arange(grid.L)[:, None]
    return _dirichlet(q - grid.L * taus[None, :], grid.L).astype(np.complex128)


@dataclass(frozen=True)
class SpectralMixture:
    """Nonnegative combination of atoms; the unknown of the recovery problem."""

    values: np.ndarray
    ground_truth: tuple = None

    @property
    def L(self):
        return len(self.values)

    def amplitude_sum(self):
        if self.ground_truth is None:
            raise ValueError("mixture has no recorded ground truth")
        return float(sum(a for _, a in self.ground_truth))


def synthesize_mixture(components, grid):
    """X = sum_k amplitude_k a(tau_k) with the components recorded as ground truth."""
    components = list(components)
    for tau, amp in components:
        if amp < 0:
            raise ValueError(f"amplitude must be nonnegative, got {amp} at tau={tau}")
        if not 0.0 <= tau < 1.0:
            raise ValueError(f"tau must lie in [0, 1), got {tau}")
    values = np.zeros(grid.L, dtype=np.complex128)
    if components:
        taus = np.array([t for t, _ in components])
        amps = np.array([a for _, a in components])
        values = atom_matrix(taus, grid) @ amps.astype(np.complex128)
    return SpectralMixture(values=values, ground_truth=tuple((float(t), float(a)) for t, a in components))


# ---------------------------------------------------------------------------
# Toeplitz generator and Vandermonde decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToeplitzGenerator:
    """First row u of a Hermitian Toeplitz matrix; Im(u[0]) is ignored."""

    u: np.ndarray

    @property
    def L(self):
        return len(self.u)


def toeplitz_from_generator(gen):
    """Materialize Toep(u) as an L x L Hermitian matrix.

    The first entry's imaginary part is zeroed and the result is
    symmetrized, absorbing solver round-off.
    """
    u = np.asarray(gen.u if isinstance(gen, ToeplitzGenerator) else gen, dtype=np.complex128).copy()
    u[0] = u[0].real
    L = len(u)
    j, k = np.indices((L, L))
    T = np.where(k >= j, u[np.abs(k - j)], np.conj(u[np.abs(k - j)]))
    return 0.5 * (T + T.conj().T)


def delay_signature(tau, L):
    """Unit-modulus geometric vector d(tau)_m = e^{-j 2 pi tau m}, m = 0..L-1.

    Toep(u) produced by the SDP decomposes as sum_k amp_k d(tau_k) d(tau_k)^H;
    this is the Toeplitz-domain counterpart of the Dirichlet atom a(tau).
    """
    m = np.arange(L)
    return np.exp(-2j * np.pi * tau * m)


def generator_from_components(components, L):
    """Compose the generator u with Toep(u) = sum_k amp_k d(tau_k) d(tau_k)^H."""
    m = np.arange(L)
    u = np.zeros(L, dtype=np.complex128)
    for tau, amp in components:
        u += amp * np.exp(2j * np.pi * tau * m)
    return ToeplitzGenerator(u=u)


def _merge_close(taus, amps, tol=1e-9):
    """Merge components whose delays coincide up to wrap-around within tol."""
    order = np.argsort(taus)
    taus, amps = taus[order], amps[order]
    out_t, out_a = [], []
    for t, a in zip(taus, amps):
        if out_t and min(abs(t - out_t[-1]), 1.0 - abs(t - out_t[-1])) <= tol:
            w = out_a[-1] + a
            out_t[-1] = (out_a[-1] * out_t[-1] + a * t) / w if w > 0 else out_t[-1]
            out_a[-1] = w
        else:
            out_t.append(t)
            out_a.append(a)
    # wrap-around pair (first vs last)
    if len(out_t) > 1 and min(abs(out_t[0] - out_t[-1]), 1.0 - abs(out_t[0] - out_t[-1])) <= tol:
        out_a[0] += out_a.pop()
        out_t.pop()
    return np.array(out_t), np.array(out_a)


def vandermonde_decompose(gen, rank_tol=1e-6):
    """Extract delays and nonnegative powers from a PSD Toeplitz generator.

    Rotational-invariance (matrix pencil) estimation on the rank-truncated
    eigenbasis of Toep(u), followed by a nonnegative least-squares fit of
    the matrix itself on the recovered signatures.  Returns a list of
    (tau, amplitude) pairs sorted by tau.
    """
    T = toeplitz_from_generator(gen)
    L = T.shape[0]
    evals, evecs = np.linalg.eigh(T)
    lam_max = float(evals[-1])
    if lam_max <= 0:
        if lam_max < -rank_tol:
            raise DecompositionError(f"Toeplitz matrix is negative (lambda_max={lam_max:.3e})")
        return []
    if evals[0] < -10 * rank_tol * lam_max:
        raise DecompositionError(
            f"Toeplitz matrix indefinite beyond tolerance (lambda_min={evals[0]:.3e})"
        )
    r = int(np.sum(evals > rank_tol * lam_max))
    if r >= L:
        raise FullRankError("Toeplitz matrix has full effective rank; no sparse delay structure")
    if r == 0:
        return []

    Us = evecs[:, -r:]
    phi, *_ = np.linalg.lstsq(Us[:-1], Us[1:], rcond=None)
    z = np.linalg.eigvals(phi)
    z = z / np.abs(z)
    taus = np.mod(-np.angle(z) / (2 * np.pi), 1.0)

    # nonnegative amplitude fit against the full matrix
    sigs = np.stack([delay_signature(t, L) for t in taus], axis=1)  # (L, r)
    outer = sigs[:, None, :] * sigs.conj()[None, :, :]              # (L, L, r)
    A = np.concatenate([outer.real.reshape(-1, r), outer.imag.reshape(-1, r)])
    b = np.concatenate([T.real.ravel(), T.imag.ravel()])
    amps, _ = nnls(A, b)

    keep = amps > 0
    taus, amps = _merge_close(taus[keep], amps[keep])
    keep = amps > 0
    return sorted(zip(taus[keep].tolist(), amps[keep].tolist()))
