"""Synthetic labeled datasets: a reference signal plus delayed, attenuated,
noisy replicas with known ground-truth delay.

The generator is fully deterministic for a fixed seed: delays, SNRs and
attenuations come from one master stream, while each example's noise uses
seed + example index so examples could be produced independently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError
from .signals import Signal, load_wav, mix_noise, save_wav, scale, shift

TIC_BURST_SECONDS = 0.005
TIC_AMPLITUDE = 0.25
CHIRP_AMPLITUDE = 0.1
NO_NOISE_SNR_DB = math.inf


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for one synthetic dataset."""

    reference_kind: str = "tic_train"  # tic_train | chirp | external_wav
    period_seconds: float = 1.0
    duration_seconds: float = 10.0
    sample_rate: int = 16000
    n_examples: int = 1
    delay_range_seconds: tuple[float, float] = (0.0, 0.9)  # half-open (lo, hi]
    snr_range_db: tuple[float, float] = (-15.0, 20.0)
    attenuation_range: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    reference_path: str | None = None  # for external_wav

    def __post_init__(self):
        lo, hi = self.delay_range_seconds
        if not (0.0 <= lo < hi < self.duration_seconds):
            raise InvalidSpecError(
                f"delay range ({lo}, {hi}] must satisfy 0 <= lo < hi < duration"
            )
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise InvalidSpecError("snr range lo > hi")
        a_lo, a_hi = self.attenuation_range
        if not (0.0 < a_lo <= a_hi <= 1.0):
            raise InvalidSpecError("attenuation range must lie in (0, 1]")
        if self.reference_kind not in ("tic_train", "chirp", "external_wav"):
            raise InvalidSpecError(f"unknown reference kind {self.reference_kind!r}")
        if self.reference_kind == "external_wav" and not self.reference_path:
            raise InvalidSpecError("external_wav needs reference_path")
        if self.n_examples < 1:
            raise InvalidSpecError("n_examples must be positive")
        if self.duration_seconds <= 0 or self.sample_rate <= 0:
            raise InvalidSpecError("duration and sample rate must be positive")


@dataclass(frozen=True)
class LabeledExample:
    """One reference/observed pair with its ground truth."""

    reference: Signal
    observed: Signal
    true_delay_samples: int
    snr_db: float
    attenuation: float

    @property
    def true_delay_seconds(self) -> float:
        return self.true_delay_samples / self.reference.sample_rate


def make_tic_reference(
    period_seconds: float, duration_seconds: float, sample_rate: int
) -> Signal:
    """Periodic train of short decaying clicks, silence in between.

    A burst of ~5 ms starts at every multiple of the period that fits the
    duration; bursts running past the end are truncated.
    """
    if period_seconds > duration_seconds:
        raise InvalidSpecError("tic period exceeds signal duration")
    if period_seconds <= 0:
        raise InvalidSpecError("tic period must be positive")
    n = round(duration_seconds * sample_rate)
    burst_len = max(1, round(TIC_BURST_SECONDS * sample_rate))
    burst = TIC_AMPLITUDE * np.exp(-5.0 * np.arange(burst_len) / burst_len)
    out = np.zeros(n, dtype=np.float64)
    onset = 0.0
    while round(onset) < n:
        start = round(onset)
        stop = min(start + burst_len, n)
        out[start:stop] = burst[: stop - start]
        onset += period_seconds * sample_rate
    return Signal(out, sample_rate)


def make_chirp_reference(duration_seconds: float, sample_rate: int) -> Signal:
    """Linear frequency sweep from 50 Hz to 0.45 * sample_rate."""
    n = round(duration_seconds * sample_rate)
    t = np.arange(n) / sample_rate
    f0, f1 = 50.0, 0.45 * sample_rate
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / duration_seconds * t**2)
    return Signal(CHIRP_AMPLITUDE * np.sin(phase), sample_rate)


def make_reference(spec: DatasetSpec) -> Signal:
    if spec.reference_kind == "tic_train":
        return make_tic_reference(
            spec.period_seconds, spec.duration_seconds, spec.sample_rate
        )
    if spec.reference_kind == "chirp":
        return make_chirp_reference(spec.duration_seconds, spec.sample_rate)
    return load_wav(spec.reference_path)


def synthesize(spec: DatasetSpec) -> list[LabeledExample]:
    """Generate n_examples labeled pairs from one shared reference signal."""
    reference = make_reference(spec)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.delay_range_seconds
    # uniform on the half-open interval (lo, hi]: mirror of [lo, hi)
    delays_s = hi - rng.uniform(0.0, hi - lo, size=spec.n_examples)
    snr_lo, snr_hi = spec.snr_range_db
    if math.isinf(snr_lo) and math.isinf(snr_hi):
        snrs = np.full(spec.n_examples, NO_NOISE_SNR_DB)
    else:
        snrs = rng.uniform(snr_lo, snr_hi, size=spec.n_examples)
    a_lo, a_hi = spec.attenuation_range
    attens = rng.uniform(a_lo, a_hi, size=spec.n_examples)

    examples = []
    for i in range(spec.n_examples):
        delay_samples = round(float(delays_s[i]) * spec.sample_rate)
        observed = shift(reference, delay_samples)
        if attens[i] != 1.0:
            observed = scale(observed, float(attens[i]))
        observed = mix_noise(observed, float(snrs[i]), spec.seed + i)
        examples.append(
            LabeledExample(
                reference=reference,
                observed=observed,
                true_delay_samples=delay_samples,
                snr_db=float(snrs[i]),
                attenuation=float(attens[i]),
            )
        )
    return examples


def write_dataset(examples: list[LabeledExample], out_dir) -> Path:
    """Write WAVs plus a JSON-lines manifest; returns the manifest path.

    The shared reference is written once. An observed signal whose noise
    pushes samples outside [-1, 1] is rescaled by a common factor before
    writing (recorded per example as scale_applied) so no sample is clipped.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ref_path = out_dir / "reference.wav"
    save_wav(examples[0].reference, ref_path)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for i, ex in enumerate(examples):
            obs = ex.observed
            peak = float(np.max(np.abs(obs.samples)))
            applied = 1.0
            if peak > 1.0:
                applied = 0.999 / peak
                obs = scale(obs, applied)
            obs_path = out_dir / f"observed_{i:05d}.wav"
            save_wav(obs, obs_path)
            record = {
                "example_id": i,
                "reference_wav": ref_path.name,
                "observed_wav": obs_path.name,
                "true_delay_samples": ex.true_delay_samples,
                "snr_db": ex.snr_db,
                "attenuation": ex.attenuation,
                "scale_applied": applied,
                "sample_rate": ex.reference.sample_rate,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return manifest_path


def read_dataset(manifest_path) -> list[LabeledExample]:
    """Load a dataset written by write_dataset."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    examples = []
    signal_cache: dict[str, Signal] = {}
    with open(manifest_path) as fh:
        for line in fh:
            rec = json.loads(line)
            ref_name = rec["reference_wav"]
            if ref_name not in signal_cache:
                signal_cache[ref_name] = load_wav(base / ref_name)
            examples.append(
                LabeledExample(
                    reference=signal_cache[ref_name],
                    observed=load_wav(base / rec["observed_wav"]),
                    true_delay_samples=int(rec["true_delay_samples"]),
                    snr_db=float(rec["snr_db"]),
                    attenuation=float(rec["attenuation"]),
                )
            )
    return examples
