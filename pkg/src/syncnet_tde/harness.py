"""Training loop, network-based delay estimation, and dataset evaluation.

Training is per-example: both signals of a pair run through the shared
network, their outputs are fully correlated, and the hybrid loss against a
Gaussian target peaked at the true delay drives one optimizer step. The lag
axis of the correlation maps back to input samples through a single scale
factor (input span covered by the towers divided by the network output
length), which the checkpoint records.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .correlation import cross_correlate, direct_full_correlation, estimate_delay, gcc_phat
from .datasets import LabeledExample
from .errors import DivergenceError, SampleRateMismatchError, ShapeError
from .model import SyncNetModel
from .objective import LossWeights, TargetSpec, build_target, hybrid_loss


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class AdaptiveMomentOptimizer:
    """Per-parameter first/second moment steps (decay 0.9/0.999, eps 1e-8)."""

    def __init__(self, tensors, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = list(tensors)
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.tensors):
            if p.grad is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * p.grad
            self.v[i] = b2 * self.v[i] + (1 - b2) * p.grad**2
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class PlainSgdOptimizer:
    def __init__(self, tensors, learning_rate: float):
        self.tensors = list(tensors)
        self.lr = learning_rate

    def step(self) -> None:
        for p in self.tensors:
            if p.grad is not None:
                p.data -= self.lr * p.grad


OPTIMIZERS = {
    "adaptive-moment": AdaptiveMomentOptimizer,
    "plain-sgd": PlainSgdOptimizer,
}


def make_optimizer(name: str, tensors, learning_rate: float):
    aliases = {"adam": "adaptive-moment", "sgd": "plain-sgd"}
    key = aliases.get(name, name)
    if key not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {name!r}")
    return OPTIMIZERS[key](tensors, learning_rate)


# ---------------------------------------------------------------------------
# configuration and reports
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 9e-4
    optimizer: str = "adaptive-moment"
    seed: int = 0
    checkpoint_path: str | None = None
    log_every: int = 0  # epochs between stderr progress lines; 0 = silent
    target_sigma: float | None = None  # defaults to the pool size
    target_period_lag: int | None = None  # period in correlation-lag samples
    loss_term_weights: tuple[float, float, float] = (0.2, 0.4, 0.4)
    kl_as_printed: bool = False
    early_stop_normalized: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1; use train_epochs=0 via zero_epochs")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    normalized_loss: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss", "normalized_loss"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.mean_loss), repr(r.normalized_loss)])

    @property
    def final_normalized(self) -> float:
        return self.records[-1].normalized_loss if self.records else math.nan


@dataclass(frozen=True)
class EvalRow:
    example_id: int
    true_delay_seconds: float
    estimated_delay_seconds: float

    @property
    def abs_error_seconds(self) -> float:
        return abs(self.estimated_delay_seconds - self.true_delay_seconds)


@dataclass
class EvalReport:
    method: str
    per_example: list[EvalRow]
    failures: int = 0

    @property
    def mse(self) -> float:
        if not self.per_example:
            return math.nan
        errs = [
            (r.estimated_delay_seconds - r.true_delay_seconds) ** 2
            for r in self.per_example
        ]
        return float(np.mean(errs))

    @property
    def sd(self) -> float:
        """Population standard deviation of the signed error, in seconds."""
        if not self.per_example:
            return math.nan
        errs = [
            r.estimated_delay_seconds - r.true_delay_seconds for r in self.per_example
        ]
        return float(np.std(errs))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["example_id", "true_s", "est_s", "abs_err_s"])
            for r in self.per_example:
                writer.writerow(
                    [
                        r.example_id,
                        repr(r.true_delay_seconds),
                        repr(r.estimated_delay_seconds),
                        repr(r.abs_error_seconds),
                    ]
                )

    def to_json_summary(self, path) -> None:
        payload = {
            "method": self.method,
            "mse": self.mse,
            "sd": self.sd,
            "n": len(self.per_example),
            "failures": self.failures,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# target plumbing
# ---------------------------------------------------------------------------

def _example_target(
    model: SyncNetModel, cfg: TrainConfig, true_delay_samples: int
) -> tuple[np.ndarray, set[int], LossWeights]:
    config = model.config
    n_out = config.output_length()
    n_prime = 2 * n_out - 1
    scale = config.lag_scale()
    mu_index = round(true_delay_samples / scale) + (n_out - 1)
    sigma = cfg.target_sigma if cfg.target_sigma is not None else float(config.pool_size)
    spec = TargetSpec(
        n_prime=n_prime,
        true_delay_index=mu_index,
        sigma=sigma,
        period_samples=cfg.target_period_lag,
    )
    target = build_target(spec)
    peaks = set(spec.peak_means())
    l1, l2, l3 = cfg.loss_term_weights
    weights = LossWeights.for_target(n_prime, spec.g, l1=l1, l2=l2, l3=l3)
    return target, peaks, weights


def example_loss(
    model: SyncNetModel, cfg: TrainConfig, example: LabeledExample, training: bool
) -> Tensor:
    """Forward both signals, correlate, and score against the target."""
    y_ref = model.transform(example.reference, training=training)
    y_obs = model.transform(example.observed, training=training)
    n_out = model.config.output_length()
    corr = ad.full_correlate(
        ad.reshape(y_obs, (n_out,)), ad.reshape(y_ref, (n_out,))
    )
    target, peaks, weights = _example_target(model, cfg, example.true_delay_samples)
    return hybrid_loss(
        target, corr, weights, model.config.pool_size, peaks,
        kl_as_printed=cfg.kl_as_printed,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(
    model: SyncNetModel, dataset: list[LabeledExample], cfg: TrainConfig
) -> TrainingLog:
    """Optimize the model in place; returns the per-epoch loss log.

    Deterministic for a fixed dataset and configuration: examples are visited
    in order and nothing in the loop draws randomness. Aborts with
    diagnostics if the loss stops being finite.
    """
    _validate_dataset(model, dataset)
    tensors = [t for _, t in model.params.named_tensors()]
    optimizer = make_optimizer(cfg.optimizer, tensors, cfg.learning_rate)
    log = TrainingLog()
    first_mean: float | None = None
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx, example in enumerate(dataset):
            model.params.zero_grad()
            loss = example_loss(model, cfg, example, training=True)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss {value} at epoch {epoch}, example {idx}; "
                    + _grad_diagnostics(model)
                )
            ad.backward(loss)
            _check_finite_grads(model, epoch, idx)
            optimizer.step()
            total += value
        mean = total / len(dataset)
        if first_mean is None:
            first_mean = mean
        normalized = mean / first_mean if first_mean != 0 else 0.0
        log.records.append(EpochRecord(epoch, mean, normalized))
        if cfg.log_every and epoch % cfg.log_every == 0:
            print(
                f"epoch {epoch}: mean_loss={mean:.6g} normalized={normalized:.4f}",
                file=sys.stderr,
            )
        if (
            cfg.early_stop_normalized is not None
            and normalized <= cfg.early_stop_normalized
        ):
            break
    if cfg.checkpoint_path:
        model.save(cfg.checkpoint_path)
    return log


def _validate_dataset(model: SyncNetModel, dataset: list[LabeledExample]) -> None:
    if not dataset:
        raise ValueError("dataset is empty")
    L = model.config.layout.L
    rate = dataset[0].reference.sample_rate
    for ex in dataset:
        if len(ex.reference) != L or len(ex.observed) != L:
            raise ShapeError(
                f"example length {len(ex.reference)} does not match model L={L}"
            )
        if ex.reference.sample_rate != rate or ex.observed.sample_rate != rate:
            raise SampleRateMismatchError("dataset mixes sample rates")


def _grad_diagnostics(model: SyncNetModel) -> str:
    norms = []
    for name, t in model.params.named_tensors():
        if t.grad is not None:
            norms.append((float(np.max(np.abs(t.grad))), name))
    if not norms:
        return "no gradients recorded"
    worst, name = max(norms)
    return f"largest gradient magnitude {worst:.3g} at {name}"


def _check_finite_grads(model: SyncNetModel, epoch: int, idx: int) -> None:
    for name, t in model.params.named_tensors():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise DivergenceError(
                f"non-finite gradient in {name} at epoch {epoch}, example {idx}"
            )


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyncNetEstimate:
    """Estimate plus the intermediates needed for figure-style exports."""

    delay_seconds: float
    lag_samples: float
    peak_pooled_index: int
    peak_raw_index: int
    pooled_values: np.ndarray
    pooled_raw_indices: np.ndarray
    correlation: np.ndarray
    transformed_reference: np.ndarray
    transformed_observed: np.ndarray


def estimate_syncnet_detailed(
    model: SyncNetModel, reference, observed
) -> SyncNetEstimate:
    if reference.sample_rate != observed.sample_rate:
        raise SampleRateMismatchError("reference and observed sample rates differ")
    y_ref = model.transform(reference, training=False).data[0]
    y_obs = model.transform(observed, training=False).data[0]
    corr = direct_full_correlation(y_obs, y_ref)
    n_out = y_ref.size
    pool = model.config.pool_size
    n_pooled = corr.size // pool
    blocks = corr[: n_pooled * pool].reshape(n_pooled, pool)
    in_window = blocks.argmax(axis=1)
    pooled = blocks[np.arange(n_pooled), in_window]
    peak_pooled = int(np.argmax(pooled))
    peak_raw = int(peak_pooled * pool + in_window[peak_pooled])
    lag = (peak_raw - (n_out - 1)) * model.config.lag_scale()
    return SyncNetEstimate(
        delay_seconds=lag / reference.sample_rate,
        lag_samples=lag,
        peak_pooled_index=peak_pooled,
        peak_raw_index=peak_raw,
        pooled_values=pooled,
        pooled_raw_indices=np.arange(n_pooled) * pool + in_window,
        correlation=corr,
        transformed_reference=y_ref,
        transformed_observed=y_obs,
    )


def estimate_syncnet(model: SyncNetModel, reference, observed) -> float:
    """Delay estimate in seconds from the pooled correlation peak.

    The winning pooled window's own argmax supplies the raw lag, so feeding
    two identical signals yields exactly zero.
    """
    return estimate_syncnet_detailed(model, reference, observed).delay_seconds


def make_xcorr_estimator():
    def estimator(example: LabeledExample) -> float:
        return estimate_delay(cross_correlate(example.observed, example.reference))

    estimator.method_name = "xcorr"
    return estimator


def make_gcc_phat_estimator():
    def estimator(example: LabeledExample) -> float:
        return estimate_delay(gcc_phat(example.observed, example.reference))

    estimator.method_name = "gcc-phat"
    return estimator


def make_syncnet_estimator(model: SyncNetModel):
    def estimator(example: LabeledExample) -> float:
        return estimate_syncnet(model, example.reference, example.observed)

    estimator.method_name = "syncnet"
    return estimator


# ---------------------------------------------------------------------------
# evaluation and exports
# ---------------------------------------------------------------------------

def evaluate(estimator, dataset: list[LabeledExample]) -> EvalReport:
    """Run an estimator over a dataset; failed examples are counted and
    excluded from the error statistics."""
    if not dataset:
        raise ValueError("dataset is empty")
    method = getattr(estimator, "method_name", getattr(estimator, "__name__", "custom"))
    rows = []
    failures = 0
    for i, example in enumerate(dataset):
        try:
            est = float(estimator(example))
        except Exception:
            failures += 1
            continue
        rows.append(
            EvalRow(
                example_id=i,
                true_delay_seconds=example.true_delay_seconds,
                estimated_delay_seconds=est,
            )
        )
    return EvalReport(method=method, per_example=rows, failures=failures)


def export_fig_data(model: SyncNetModel, reference, observed, out_dir) -> list[Path]:
    """Write transformed-sequence and pooled-correlation CSVs for one pair."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    detail = estimate_syncnet_detailed(model, reference, observed)
    transformed_path = out_dir / "transformed.csv"
    with open(transformed_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "transformed_ref", "transformed_obs"])
        for i in range(detail.transformed_reference.size):
            writer.writerow(
                [
                    i,
                    repr(float(detail.transformed_reference[i])),
                    repr(float(detail.transformed_observed[i])),
                ]
            )
    n_out = detail.transformed_reference.size
    scale = model.config.lag_scale()
    pooled_path = out_dir / "pooled_correlation.csv"
    with open(pooled_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pooled_index", "lag_input_samples", "correlation", "is_peak"])
        for i in range(detail.pooled_values.size):
            raw = int(detail.pooled_raw_indices[i])
            lag = (raw - (n_out - 1)) * scale
            writer.writerow(
                [
                    i,
                    repr(float(lag)),
                    repr(float(detail.pooled_values[i])),
                    int(i == detail.peak_pooled_index),
                ]
            )
    return [transformed_path, pooled_path]
