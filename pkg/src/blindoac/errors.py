"""Exception types shared across the package."""


class BlindOacError(Exception):
    """Base class for package-specific failures."""


class WaveformGenerationError(BlindOacError):
    """Waveform redraw budget exhausted without meeting the conditioning bound."""

    def __init__(self, message, best_condition=None):
        super().__init__(message)
        self.best_condition = best_condition


class ConditioningError(BlindOacError):
    """A linear system was too ill-conditioned to invert reliably."""


class DecompositionError(BlindOacError):
    """Toeplitz matrix has no usable Vandermonde decomposition."""


class FullRankError(DecompositionError):
    """Toeplitz matrix is effectively full rank (white spectrum)."""


class SolverError(BlindOacError):
    """Numerical breakdown inside the SDP solver (NaN/Inf)."""


class OracleError(BlindOacError):
    """Grid-based reference solver failed to converge."""


class CalibrationError(BlindOacError):
    """Noise calibration impossible (zero-energy signal at finite SNR)."""


class PrecodeError(BlindOacError):
    """Positivity shift too small for the gradient batch."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class GradientError(BlindOacError):
    """Local training produced a non-finite loss or gradient."""


class ConfigError(BlindOacError):
    """Experiment configuration is malformed."""
