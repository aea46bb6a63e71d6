"""Gaussian target construction, peak weighting, and the hybrid loss.

The target is a sum of equal-width Gaussians placed at the true delay and,
for periodic references, at every period multiple above it that stays inside
the lag support. The loss compares a predicted correlation sequence against
the target with three terms: a weighted MSE on the raw sequences, a root of
the weighted sum of squared log differences on the max-pooled sequences, and
a weighted KL-style divergence on the pooled sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidTargetError, ShapeError

LOG_FLOOR = 1e-8
DEFAULT_TERM_WEIGHTS = (0.2, 0.4, 0.4)


@dataclass(frozen=True)
class TargetSpec:
    """Inputs for the Gaussian target sequence.

    Indices live in correlation-lag coordinates: an array of n_prime values
    whose index true_delay_index marks the true delay. period_samples, when
    given, is the reference period expressed in the same lag units.
    """

    n_prime: int
    true_delay_index: int
    sigma: float
    period_samples: int | None = None
    g: int = field(init=False)

    def __post_init__(self):
        if self.n_prime < 1:
            raise InvalidTargetError("target length must be positive")
        if not (0 <= self.true_delay_index < self.n_prime):
            raise InvalidTargetError(
                f"delay index {self.true_delay_index} outside [0, {self.n_prime})"
            )
        if self.sigma <= 0:
            raise InvalidTargetError("sigma must be positive")
        if self.period_samples is None:
            g = 1
        else:
            if self.period_samples < 1:
                raise InvalidTargetError("period must be a positive number of samples")
            g = len(self.peak_means())
        object.__setattr__(self, "g", g)

    def peak_means(self) -> list[int]:
        """Gaussian means mu_n = mu_0 + n*T inside [0, n_prime)."""
        if self.period_samples is None:
            return [self.true_delay_index]
        means = []
        mu = self.true_delay_index
        while mu < self.n_prime:
            means.append(mu)
            mu += self.period_samples
        return means


def gaussian_mixture(spec: TargetSpec) -> np.ndarray:
    """Raw sum of normalized Gaussians before unit-peak rescaling."""
    idx = np.arange(spec.n_prime, dtype=np.float64)
    out = np.zeros(spec.n_prime, dtype=np.float64)
    norm = 1.0 / (spec.sigma * math.sqrt(2.0 * math.pi))
    for mu in spec.peak_means():
        out += norm * np.exp(-((idx - mu) ** 2) / (2.0 * spec.sigma**2))
    return out


def build_target(spec: TargetSpec) -> np.ndarray:
    """Gaussian target sequence rescaled to unit peak."""
    raw = gaussian_mixture(spec)
    return raw / raw.max()


def compute_weights(n_prime: int, g: int) -> tuple[float, float, float]:
    """Peak up-weight u, off-peak down-weight d, and the scale lambda.

    lambda = 10**a for the smallest integer a with floor(n_prime / 10**a) = 0;
    then d = 1 - (g + 1) / lambda and u = d + n_prime / lambda.
    """
    if n_prime < 1 or g < 1:
        raise InvalidTargetError("n_prime and g must be >= 1")
    a = 0
    while n_prime // (10**a) != 0:
        a += 1
    lam = float(10**a)
    d = 1.0 - (g + 1) / lam
    u = d + n_prime / lam
    return u, d, lam


@dataclass(frozen=True)
class LossWeights:
    """Per-index weights and term weights for the hybrid loss."""

    u: float
    d: float
    lam: float
    l1: float = DEFAULT_TERM_WEIGHTS[0]
    l2: float = DEFAULT_TERM_WEIGHTS[1]
    l3: float = DEFAULT_TERM_WEIGHTS[2]

    @classmethod
    def for_target(
        cls,
        n_prime: int,
        g: int,
        l1: float = DEFAULT_TERM_WEIGHTS[0],
        l2: float = DEFAULT_TERM_WEIGHTS[1],
        l3: float = DEFAULT_TERM_WEIGHTS[2],
    ) -> "LossWeights":
        u, d, lam = compute_weights(n_prime, g)
        return cls(u=u, d=d, lam=lam, l1=l1, l2=l2, l3=l3)


def index_weights(
    n: int, peak_indices: set[int], u: float, d: float
) -> np.ndarray:
    w = np.full(n, d, dtype=np.float64)
    for i in peak_indices:
        if 0 <= i < n:
            w[i] = u
    return w


def pooled_peak_indices(peak_indices: set[int], pool: int) -> set[int]:
    return {i // pool for i in peak_indices}


def hybrid_loss(
    target: np.ndarray,
    predicted: Tensor,
    weights: LossWeights,
    pool: int,
    peak_indices: set[int],
    kl_as_printed: bool = False,
) -> Tensor:
    """Three-term loss between a target sequence and a predicted Tensor.

    L1 is the weighted squared error on the raw sequences. L2 and L3 act on
    non-overlapping max-pooled sequences: L2 is the square root of the
    weighted sum of squared log differences, L3 a weighted KL-style term
    sum w * Rp * (log Rp - log Rp_hat). Values entering a log are clamped
    at 1e-8 (a clamp, not an error: network outputs may be nonpositive).

    kl_as_printed switches L3's second factor from log(pooled prediction) to
    the pooled prediction itself; that variant does not vanish at an exact
    match and exists for comparison runs only.
    """
    target = np.asarray(target, dtype=np.float64)
    if predicted.data.ndim != 1 or target.shape != predicted.data.shape:
        raise ShapeError(
            f"target {target.shape} and prediction {predicted.data.shape} must be "
            "equal-length 1-D sequences"
        )
    n_prime = target.size
    w_raw = Tensor(index_weights(n_prime, peak_indices, weights.u, weights.d))
    target_t = Tensor(target)

    diff = ad.add(target_t, ad.scale(predicted, -1.0))
    loss1 = ad.tensor_sum(ad.mul(w_raw, ad.square(diff)))

    n_pooled = n_prime // pool
    pooled_target = np.maximum(
        target[: n_pooled * pool].reshape(n_pooled, pool).max(axis=1), LOG_FLOOR
    )
    w_pool = index_weights(
        n_pooled, pooled_peak_indices(peak_indices, pool), weights.u, weights.d
    )
    pooled_pred = ad.max_pool1d(predicted, pool)
    log_pred = ad.log(ad.clamp_min(pooled_pred, LOG_FLOOR))
    log_target = np.log(pooled_target)

    log_diff = ad.add(Tensor(log_target), ad.scale(log_pred, -1.0))
    loss2 = ad.sqrt_sum(ad.mul(Tensor(w_pool), ad.square(log_diff)))

    kl_lead = Tensor(w_pool * pooled_target)
    if kl_as_printed:
        second = pooled_pred
    else:
        second = log_pred
    kl_inner = ad.add(Tensor(w_pool * pooled_target * log_target),
                      ad.scale(ad.mul(kl_lead, second), -1.0))
    loss3 = ad.tensor_sum(kl_inner)

    return ad.add(
        ad.add(ad.scale(loss1, weights.l1), ad.scale(loss2, weights.l2)),
        ad.scale(loss3, weights.l3),
    )
