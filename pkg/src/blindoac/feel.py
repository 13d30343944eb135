"""Federated edge learning loop with over-the-air aggregation.

A small numpy MLP (input -> tanh hidden -> softmax) is trained by
synchronous gradient descent.  Each round, devices compute local
gradients; the server aggregates them either exactly (IdealSync),
through the blind atomic-norm recovery (BlindFull / BlindDelayReuse),
or by the naive zero-delay read-off (NoRecovery), then applies
w <- w - eta * estimate.  Downlink broadcast is ideal.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import draw_channel, precode, transmit_round
from .denoise import SolverConfig, atomic_denoise_batch, select_lambda
from .errors import GradientError
from .spectral import SampleGrid, atom_matrix, vandermonde_decompose

MODE_IDEAL = "IdealSync"
MODE_BLIND_FULL = "BlindFull"
MODE_BLIND_REUSE = "BlindDelayReuse"
MODE_NO_RECOVERY = "NoRecovery"
MODES = (MODE_IDEAL, MODE_BLIND_FULL, MODE_BLIND_REUSE, MODE_NO_RECOVERY)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus the layer shape that interprets it."""

    w: np.ndarray
    n_in: int
    n_hidden: int
    n_out: int

    def __post_init__(self):
        if len(self.w) != self.size(self.n_in, self.n_hidden, self.n_out):
            raise ValueError("parameter vector does not match layer shape")
        if not np.all(np.isfinite(self.w)):
            raise ValueError("non-finite parameters")

    @staticmethod
    def size(n_in, n_hidden, n_out):
        return n_in * n_hidden + n_hidden + n_hidden * n_out + n_out

    @property
    def N(self):
        return len(self.w)

    def unpack(self):
        i = 0
        W1 = self.w[i:i + self.n_in * self.n_hidden].reshape(self.n_hidden, self.n_in)
        i += W1.size
        b1 = self.w[i:i + self.n_hidden]
        i += self.n_hidden
        W2 = self.w[i:i + self.n_hidden * self.n_out].reshape(self.n_out, self.n_hidden)
        i += W2.size
        b2 = self.w[i:]
        return W1, b1, W2, b2


def init_model(n_in, n_hidden, n_out, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    w = np.concatenate([
        rng.normal(0, scale / np.sqrt(n_in), n_in * n_hidden),
        np.zeros(n_hidden),
        rng.normal(0, scale / np.sqrt(n_hidden), n_hidden * n_out),
        np.zeros(n_out),
    ])
    return ModelParams(w=w, n_in=n_in, n_hidden=n_hidden, n_out=n_out)


def _forward(model, X):
    W1, b1, W2, b2 = model.unpack()
    H = np.tanh(X @ W1.T + b1)
    logits = H @ W2.T + b2
    logits -= logits.max(axis=1, keepdims=True)
    expz = np.exp(logits)
    probs = expz / expz.sum(axis=1, keepdims=True)
    return H, probs


def local_gradient(model, data, batch_size=None, seed=None):
    """Average cross-entropy gradient over the device's (mini-)batch."""
    X, y = data.features, data.labels
    if batch_size is not None and batch_size < len(X):
        idx = np.random.default_rng(seed).choice(len(X), batch_size, replace=False)
        X, y = X[idx], y[idx]
    n = len(X)
    W1, b1, W2, b2 = model.unpack()
    H, probs = _forward(model, X)
    loss = -np.mean(np.log(probs[np.arange(n), y] + 1e-300))
    if not np.isfinite(loss):
        raise GradientError(f"non-finite loss {loss}")
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gW2 = delta.T @ H
    gb2 = delta.sum(axis=0)
    dH = (delta @ W2) * (1.0 - H**2)
    gW1 = dH.T @ X
    gb1 = dH.sum(axis=0)
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def evaluate(model, data):
    """Top-1 accuracy and mean cross-entropy loss."""
    if len(data) == 0:
        raise ValueError("empty test set")
    _, probs = _forward(model, data.features)
    pred = probs.argmax(axis=1)
    loss = -np.mean(np.log(probs[np.arange(len(data)), data.labels] + 1e-300))
    return float(np.mean(pred == data.labels)), float(loss)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def aggregate_ideal(gradients):
    """Exact mean over devices; gradients has shape (N, K)."""
    gradients = np.atleast_2d(gradients)
    return gradients.mean(axis=1)


def choose_gamma(gradients, margin=0.05):
    """Per-round positivity shift: just enough, plus a margin relative to the
    gradient spread (keeping the shift small keeps the transmit energy, and
    with it the absolute noise level, proportional to the gradient scale)."""
    spread = float(np.max(gradients) - np.min(gradients))
    return float(max(0.0, -np.min(gradients)) + margin * spread + 1e-12)


def aggregate_no_recovery(measurement, gamma, K):
    """Zero-delay read-off baseline.

    The receiver samples as if all devices were synchronized (tau_k = 0),
    in which case V_i would equal (sum_k amp) e_0; it therefore reads the
    storage-index-0 entry of V_i, divides by K and removes gamma.
    """
    return measurement.V[:, 0].real / K - gamma


def _cluster_delays(pairs, max_centers, tol):
    """Greedy wrap-around clustering of (tau, weight) pairs; returns centers."""
    if not pairs:
        return []
    pairs = sorted(pairs)
    clusters = []  # [tau_center, weight]
    for tau, wgt in pairs:
        if clusters and min(abs(tau - clusters[-1][0]), 1 - abs(tau - clusters[-1][0])) <= tol:
            c = clusters[-1]
            c[0] = (c[0] * c[1] + tau * wgt) / (c[1] + wgt)
            c[1] += wgt
        else:
            clusters.append([tau, wgt])
    if len(clusters) > 1:
        d = min(abs(clusters[0][0] - clusters[-1][0]), 1 - abs(clusters[0][0] - clusters[-1][0]))
        if d <= tol:
            a, b = clusters[0], clusters.pop()
            a[1] += b[1]
    clusters.sort(key=lambda c: -c[1])
    return sorted(c[0] for c in clusters[:max_centers])


def _solver_chunk(L):
    # bound the memory of the stacked (L+1)^2 consensus matrices
    return max(4, int(2.5e6 / (L * L)))


def aggregate_blind(gradients, realization, grid, target_snr_db, seed,
                    mode=MODE_BLIND_FULL, gamma=None, gamma_margin=0.05,
                    solver_config=None, scale_c=None, reuse_subset=8,
                    rank_tol=1e-6, lambda_max=None, white_noise=False):
    """Transmit one round over the air and blindly recover the gradient mean.

    Returns (estimate vector of length N, diagnostics dict).
    """
    from .denoise import DEFAULT_LAMBDA_MAX, DEFAULT_SCALE_C

    if mode not in (MODE_BLIND_FULL, MODE_BLIND_REUSE):
        raise ValueError(f"unsupported blind mode {mode!r}")
    scale_c = DEFAULT_SCALE_C if scale_c is None else scale_c
    lambda_max = DEFAULT_LAMBDA_MAX if lambda_max is None else lambda_max
    solver_config = solver_config or SolverConfig()
    gradients = np.atleast_2d(gradients)
    N, K = gradients.shape
    if gamma is None:
        gamma = choose_gamma(gradients, gamma_margin)

    pg = precode(gradients, gamma, realization)
    meas = transmit_round(pg, realization, grid, target_snr_db, seed,
                          white_noise_after_inversion=white_noise)
    lambdas = np.array([
        select_lambda(sig, grid, scale_c=scale_c, lambda_max=lambda_max)
        for sig in meas.sigma_v
    ])

    diagnostics = {"mode": mode, "gamma": gamma, "lambda_mean": float(lambdas.mean()),
                   "n_elements": N, "solver_failures": 0, "warnings": []}

    if mode == MODE_BLIND_FULL or N == 1:
        subset = np.arange(N)
    else:
        subset = np.unique(np.linspace(0, N - 1, min(reuse_subset, N)).astype(int))

    solutions = []
    chunk = _solver_chunk(grid.L)
    for lo in range(0, len(subset), chunk):
        idx = subset[lo:lo + chunk]
        solutions.extend(atomic_denoise_batch(meas.V[idx], lambdas[idx], grid, solver_config))
    failures = sum(not s.converged for s in solutions)
    diagnostics["solver_failures"] = failures
    if failures > 0.1 * len(solutions):
        diagnostics["warnings"].append(
            f"solver failed to converge on {failures}/{len(solutions)} elements"
        )

    if mode == MODE_BLIND_FULL or N == 1:
        estimate = np.array([s.atomic_norm_value for s in solutions]) / K - gamma
        return estimate, diagnostics

    # delay reuse: pool supports from the subset, then NNLS on fixed atoms
    pooled = []
    for s in solutions:
        try:
            pooled.extend(vandermonde_decompose(s.u, rank_tol=rank_tol))
        except Exception as exc:
            diagnostics["warnings"].append(f"support extraction: {exc}")
    centers = _cluster_delays(pooled, max_centers=K, tol=0.5 / grid.L)
    if not centers:
        diagnostics["warnings"].append("no delay support recovered; falling back to entry sums")
        return meas.V.sum(axis=1).real / K - gamma, diagnostics
    diagnostics["delay_centers"] = centers

    from scipy.optimize import nnls
    A = atom_matrix(np.array(centers), grid).real
    estimate = np.empty(N)
    for i in range(N):
        beta, _ = nnls(A, meas.V[i].real)
        estimate[i] = beta.sum() / K - gamma
    # reuse the SDP answer where it converged; keep the NNLS fit otherwise
    for j, i in enumerate(subset):
        if solutions[j].converged:
            estimate[i] = solutions[j].atomic_norm_value / K - gamma
    return estimate, diagnostics


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingConfig:
    K: int = 10
    rounds: int = 60
    eta: float = 0.5
    mode: str = MODE_IDEAL
    L: int = 129
    snr_db: float = 5.0
    gamma_margin: float = 0.05
    scale_c: float = None
    reuse_subset: int = 8
    batch_size: int = None
    seed: int = 0
    n_hidden: int = 32
    solver: SolverConfig = field(default_factory=SolverConfig)
    divergence_loss: float = 1e6
    noise_mode: str = "white"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.noise_mode not in ("white", "correlated"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        if self.eta < 0 or self.rounds < 1:
            raise ValueError("need eta >= 0 and rounds >= 1")


@dataclass(frozen=True)
class RoundLog:
    round: int
    mode: str
    nmse: float
    loss: float
    accuracy: float
    wall_ms: float
    lam: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.nmse >= 0 or np.isnan(self.nmse)):
            raise ValueError("NMSE must be nonnegative")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")


def train(config, parts, testset, model=None, callback=None):
    """Run the federated loop for one aggregation mode; returns RoundLogs."""
    K = len(parts)
    if K != config.K:
        raise ValueError(f"partition has {K} devices, config says {config.K}")
    grid = SampleGrid.from_nominal(config.L)
    if model is None:
        model = init_model(parts[0].features.shape[1], config.n_hidden,
                           parts[0].n_classes, seed=config.seed)
    ss = np.random.SeedSequence([config.seed, 0xFEE1])
    round_seeds = ss.generate_state(2 * config.rounds, dtype=np.uint64)

    logs = []
    for r in range(config.rounds):
        t0 = time.perf_counter()
        grads = np.stack([
            local_gradient(model, parts[k], config.batch_size,
                           seed=int(round_seeds[2 * r]) + k)
            for k in range(K)
        ], axis=1)  # (N, K)
        truth = aggregate_ideal(grads)
        lam_used = 0.0
        diagnostics = {}

        if config.mode == MODE_IDEAL:
            estimate = truth
        elif config.mode == MODE_NO_RECOVERY:
            gamma = choose_gamma(grads, config.gamma_margin)
            ch = draw_channel(K, seed=int(round_seeds[2 * r + 1]))
            pg = precode(grads, gamma, ch)
            meas = transmit_round(
                pg, ch, grid, config.snr_db,
                seed=int(round_seeds[2 * r + 1]) ^ 0x5EED,
                white_noise_after_inversion=(config.noise_mode == "white"))
            estimate = aggregate_no_recovery(meas, gamma, K)
        else:
            ch = draw_channel(K, seed=int(round_seeds[2 * r + 1]))
            estimate, diagnostics = aggregate_blind(
                grads, ch, grid, config.snr_db,
                seed=int(round_seeds[2 * r + 1]) ^ 0x5EED,
                mode=config.mode, gamma_margin=config.gamma_margin,
                solver_config=config.solver, scale_c=config.scale_c,
                reuse_subset=config.reuse_subset,
                white_noise=(config.noise_mode == "white"),
            )
            lam_used = diagnostics.get("lambda_mean", 0.0)

        denom = float(truth @ truth)
        nmse = float((estimate - truth) @ (estimate - truth) / denom) if denom > 0 else 0.0
        model = replace(model, w=model.w - config.eta * estimate)
        acc, loss = evaluate(model, testset)
        logs.append(RoundLog(
            round=r, mode=config.mode, nmse=nmse, loss=loss, accuracy=acc,
            wall_ms=(time.perf_counter() - t0) * 1e3, lam=lam_used,
            diagnostics=diagnostics,
        ))
        if callback is not None:
            callback(logs[-1], model)
        if loss > config.divergence_loss:
            logs[-1].diagnostics["diverged"] = True
            break
    return logs
