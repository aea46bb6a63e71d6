"""Core signal type, PCM WAV I/O, and elementary transformations.

All operations are pure: they return new Signal instances and never mutate
their inputs. Samples are dimensionless amplitudes held as float64.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSignalError,
    FormatError,
    InvalidDelayError,
    RangeError,
    UnsupportedChannelsError,
)

PCM_FULL_SCALE = 32768  # 16-bit signed PCM


@dataclass(frozen=True)
class Signal:
    """A uniformly sampled real-valued mono signal."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def load_wav(path) -> Signal:
    """Read a PCM 16-bit mono WAV file, scaling samples into [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as w:
            n_channels = w.getnchannels()
            sample_width = w.getsampwidth()
            sample_rate = w.getframerate()
            n_frames = w.getnframes()
            raw = w.readframes(n_frames)
    except wave.Error as exc:
        raise FormatError(f"not a readable WAV file: {path}: {exc}") from exc
    except EOFError as exc:
        raise FormatError(f"truncated WAV file: {path}") from exc
    if n_channels != 1:
        raise UnsupportedChannelsError(
            f"{path}: expected mono, found {n_channels} channels"
        )
    if sample_width != 2:
        raise FormatError(f"{path}: expected 16-bit PCM, found {8 * sample_width} bits")
    if n_frames == 0:
        raise FormatError(f"{path}: file contains no samples")
    ints = np.frombuffer(raw, dtype="<i2")
    return Signal(ints.astype(np.float64) / PCM_FULL_SCALE, sample_rate)


def save_wav(signal: Signal, path) -> None:
    """Write a Signal as PCM 16-bit mono little-endian WAV.

    Samples must already lie in [-1, 1]; out-of-range input raises instead of
    being silently clipped. Quantization maps x to round(x * 32768) with the
    single top code clamped to 32767, so a load round-trip is exact to
    1/32768 per sample.
    """
    x = signal.samples
    if np.any(x < -1.0) or np.any(x > 1.0):
        worst = float(np.max(np.abs(x)))
        raise RangeError(f"samples outside [-1, 1] (max |x| = {worst:g})")
    q = np.rint(x * PCM_FULL_SCALE)
    np.minimum(q, PCM_FULL_SCALE - 1, out=q)
    ints = q.astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(ints.tobytes())


def shift(signal: Signal, delay_samples: int) -> Signal:
    """Delay a signal by an integer number of samples with zero prefix.

    Output keeps the input length: the first delay_samples outputs are zero
    and the trailing samples of the input are dropped.
    """
    n = len(signal)
    d = int(delay_samples)
    if d < 0 or d >= n:
        raise InvalidDelayError(f"delay {d} outside [0, {n})")
    out = np.zeros(n, dtype=np.float64)
    if d == 0:
        out[:] = signal.samples
    else:
        out[d:] = signal.samples[: n - d]
    return Signal(out, signal.sample_rate)


def scale(signal: Signal, factor: float = 1.0) -> Signal:
    """Attenuate (or amplify) a signal by a constant factor."""
    return Signal(signal.samples * float(factor), signal.sample_rate)


def mix_noise(signal: Signal, snr_db: float, rng_seed: int) -> Signal:
    """Add white Gaussian noise at an exact signal-to-noise ratio.

    The noise draw is deterministic for a fixed seed and is rescaled so the
    measured ratio (over the full signal length, zero prefix included) equals
    snr_db exactly up to floating-point rounding. snr_db = +inf is the
    no-noise sentinel and returns the input unchanged.
    """
    if np.isposinf(snr_db):
        return Signal(signal.samples.copy(), signal.sample_rate)
    p_signal = float(np.mean(signal.samples**2))
    if p_signal == 0.0:
        raise DegenerateSignalError("cannot set an SNR against a zero-power signal")
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(len(signal))
    p_noise_raw = float(np.mean(noise**2))
    target_p_noise = p_signal / (10.0 ** (snr_db / 10.0))
    noise *= np.sqrt(target_p_noise / p_noise_raw)
    return Signal(signal.samples + noise, signal.sample_rate)
