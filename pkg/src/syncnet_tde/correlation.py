"""Classical delay estimators: direct cross-correlation and GCC-PHAT.

Correlations use the full-lag convention: for inputs a (length n) and
b (length m) the output covers lags -(m-1)..(n-1), so values[i] is the
sliding dot product sum_t a[t] * b[t - lag_at(i)].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, SampleRateMismatchError
from .signals import Signal

PHAT_SPECTRAL_FLOOR = 1e-12


@dataclass(frozen=True)
class CorrelationSequence:
    """A correlation evaluated on a contiguous range of integer lags."""

    values: np.ndarray
    lag_offset: int
    sample_rate: int

    def lag_at(self, index: int) -> int:
        return index + self.lag_offset

    def __len__(self) -> int:
        return len(self.values)


def direct_full_correlation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sliding-dot-product correlation over all lags.

    This single routine backs both the classical estimator and the
    differentiable correlation op, which keeps the two bit-identical.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return np.correlate(a, b, mode="full")


def cross_correlate(a: Signal, b: Signal) -> CorrelationSequence:
    """Direct full cross-correlation of two signals."""
    if a.sample_rate != b.sample_rate:
        raise SampleRateMismatchError(
            f"sample rates differ: {a.sample_rate} vs {b.sample_rate}"
        )
    values = direct_full_correlation(a.samples, b.samples)
    return CorrelationSequence(values, -(len(b) - 1), a.sample_rate)


def whitened_cross_spectrum(a: np.ndarray, b: np.ndarray, n_fft: int) -> np.ndarray:
    """Cross-spectrum of a and b with PHAT magnitude whitening applied."""
    fa = np.fft.rfft(a, n_fft)
    fb = np.fft.rfft(b, n_fft)
    spectrum = fa * np.conj(fb)
    return spectrum / np.maximum(np.abs(spectrum), PHAT_SPECTRAL_FLOOR)


def gcc_phat(a: Signal, b: Signal) -> CorrelationSequence:
    """Generalized cross-correlation with phase-transform whitening.

    The whitened cross-spectrum is inverted over a zero-padded common length
    covering every linear lag, then rearranged to the same full-lag layout as
    cross_correlate.
    """
    if a.sample_rate != b.sample_rate:
        raise SampleRateMismatchError(
            f"sample rates differ: {a.sample_rate} vs {b.sample_rate}"
        )
    if not np.any(a.samples) or not np.any(b.samples):
        raise DegenerateSignalError("GCC-PHAT needs signals with nonzero power")
    n_a, n_b = len(a), len(b)
    n_fft = n_a + n_b
    whitened = whitened_cross_spectrum(a.samples, b.samples, n_fft)
    circular = np.fft.irfft(whitened, n_fft)
    lags = np.arange(-(n_b - 1), n_a)
    values = circular[lags % n_fft]
    return CorrelationSequence(values, -(n_b - 1), a.sample_rate)


def estimate_delay(corr: CorrelationSequence) -> float:
    """Peak lag of a correlation sequence, in seconds.

    Exact ties are broken toward the smallest absolute lag, then toward the
    smaller (more negative) lag.
    """
    values = corr.values
    peak = np.max(values)
    candidates = np.flatnonzero(values == peak)
    lags = candidates + corr.lag_offset
    order = np.lexsort((lags, np.abs(lags)))
    best_lag = int(lags[order[0]])
    return best_lag / corr.sample_rate
