"""The semi-causal convolutional network.

A signal of length L is cut into p overlapping windows of l samples
(overlap delta, stride l - delta). Each window feeds a causal tower: a
stack of h convolution levels whose input at level i >= 2 is the sum of the
same tower's previous level and the previous tower's previous level, so no
information flows backward in time. Anti-causal blocks then mix each
interval with both neighbors for h' rounds, the final block reduces to one
channel, and the p interval outputs are concatenated in time order.

Kernels are shared across towers at each level (and across intervals in the
anti-causal stage), so the tower count p affects compute but not the
parameter count.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Tensor
from .errors import (
    CheckpointError,
    ConfigError,
    InvalidOverlapError,
    InvalidWindowError,
    ShapeError,
)
from .signals import Signal

CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN_CHANNELS = 8


# ---------------------------------------------------------------------------
# window layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TowerLayout:
    """Derived windowing geometry for the causal stage.

    gamma is the realized overlap fraction delta / l (the requested fraction
    only determines delta through rounding), which makes the tiling identity
    l + (p - 1) * stride + s = L and the approximation bound
    |l - (L - s) / ((1 - gamma) (p - 1))| = l / ((1 - gamma) (p - 1)) exact.
    """

    L: int
    l: int
    p: int
    gamma: float
    delta: int
    stride: int
    s: int


def compute_layout(L: int, l: int, gamma: float) -> TowerLayout:
    """Tile L samples with windows of l samples overlapping by round(gamma*l)."""
    L, l = int(L), int(l)
    if not (0.0 <= gamma < 1.0):
        raise InvalidOverlapError(f"overlap fraction {gamma} outside [0, 1)")
    if l > L:
        raise InvalidWindowError(f"window {l} exceeds input length {L}")
    if l < 1:
        raise InvalidWindowError("window must hold at least one sample")
    delta = round(gamma * l)
    stride = l - delta
    if stride < 1:
        raise InvalidOverlapError(f"overlap {delta} leaves stride {stride} < 1")
    p = (L - l) // stride + 1
    s = L - (l + (p - 1) * stride)
    return TowerLayout(L=L, l=l, p=p, gamma=delta / l, delta=delta, stride=stride, s=s)


def size_preserving_delta(kernel_widths: list[int], dilations: list[int] | None = None) -> int:
    """Overlap that exactly cancels the causal stack's convolutional shrinkage.

    Returns sum_i d_i * (f_i - 1); with unit dilations this is (sum f_i) - h.
    """
    if dilations is None:
        dilations = [1] * len(kernel_widths)
    if len(dilations) != len(kernel_widths):
        raise ConfigError("kernel_widths and dilations must have equal length")
    return sum(d * (f - 1) for f, d in zip(kernel_widths, dilations))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyncNetConfig:
    """Architecture hyperparameters; validated at construction."""

    layout: TowerLayout
    h: int
    h_prime: int
    kernel_widths_ct: tuple[int, ...]
    kernel_widths_ac: tuple[int, ...]
    channels_ct: tuple[int, ...] = ()
    channels_ac: tuple[int, ...] = ()
    dilations: tuple[int, ...] = ()
    pool_size: int = 63
    learning_rate: float = 9e-4

    def __post_init__(self):
        object.__setattr__(self, "kernel_widths_ct", tuple(self.kernel_widths_ct))
        object.__setattr__(self, "kernel_widths_ac", tuple(self.kernel_widths_ac))
        if not self.dilations:
            object.__setattr__(self, "dilations", (1,) * self.h)
        else:
            object.__setattr__(self, "dilations", tuple(self.dilations))
        if not self.channels_ct:
            object.__setattr__(
                self, "channels_ct", (DEFAULT_HIDDEN_CHANNELS,) * self.h
            )
        else:
            object.__setattr__(self, "channels_ct", tuple(self.channels_ct))
        if not self.channels_ac:
            object.__setattr__(
                self, "channels_ac", (DEFAULT_HIDDEN_CHANNELS,) * self.h_prime
            )
        else:
            object.__setattr__(self, "channels_ac", tuple(self.channels_ac))

        if self.h < 1 or self.h_prime < 1:
            raise ConfigError("need at least one causal level and one anti-causal block")
        if len(self.kernel_widths_ct) != self.h:
            raise ConfigError(f"expected {self.h} causal kernel widths")
        if len(self.kernel_widths_ac) != self.h_prime:
            raise ConfigError(f"expected {self.h_prime} anti-causal kernel widths")
        if len(self.dilations) != self.h:
            raise ConfigError(f"expected {self.h} dilations")
        if len(self.channels_ct) != self.h or len(self.channels_ac) != self.h_prime:
            raise ConfigError("channel lists must match causal/anti-causal depths")
        if any(w < 1 for w in self.kernel_widths_ct + self.kernel_widths_ac):
            raise ConfigError("kernel widths must be >= 1")
        if any(d < 1 for d in self.dilations):
            raise ConfigError("dilations must be >= 1")
        if self.pool_size < 1:
            raise ConfigError("pool size must be >= 1")
        if self.causal_window_length() < 1:
            raise ConfigError(
                "window collapses inside the causal stack: "
                f"l={self.layout.l} cannot absorb the receptive field"
            )
        if self.final_window_length() < 1:
            raise ConfigError("window collapses inside the anti-causal stack")

    def bn_causal_levels(self) -> tuple[int, ...]:
        """Causal levels carrying batch normalization: the even ones (2, 4, ...)."""
        return tuple(i for i in range(1, self.h + 1) if i % 2 == 0)

    def causal_window_length(self) -> int:
        return self.layout.l - size_preserving_delta(
            list(self.kernel_widths_ct), list(self.dilations)
        )

    def final_window_length(self) -> int:
        # each anti-causal block applies two convolutions of its width
        return self.causal_window_length() - sum(
            2 * (w - 1) for w in self.kernel_widths_ac
        )

    def output_length(self) -> int:
        return self.layout.p * self.final_window_length()

    def lag_scale(self) -> float:
        """Input samples represented by one output sample (tail s excluded)."""
        return (self.layout.L - self.layout.s) / self.output_length()

    def to_dict(self) -> dict:
        return {
            "layout": dataclasses.asdict(self.layout),
            "h": self.h,
            "h_prime": self.h_prime,
            "kernel_widths_ct": list(self.kernel_widths_ct),
            "kernel_widths_ac": list(self.kernel_widths_ac),
            "channels_ct": list(self.channels_ct),
            "channels_ac": list(self.channels_ac),
            "dilations": list(self.dilations),
            "pool_size": self.pool_size,
            "learning_rate": self.learning_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyncNetConfig":
        layout = TowerLayout(**d["layout"])
        return cls(
            layout=layout,
            h=d["h"],
            h_prime=d["h_prime"],
            kernel_widths_ct=tuple(d["kernel_widths_ct"]),
            kernel_widths_ac=tuple(d["kernel_widths_ac"]),
            channels_ct=tuple(d["channels_ct"]),
            channels_ac=tuple(d["channels_ac"]),
            dilations=tuple(d["dilations"]),
            pool_size=d["pool_size"],
            learning_rate=d["learning_rate"],
        )


def _ac_conv2_out_channels(config: SyncNetConfig, k: int) -> int:
    """Output channels of block k's second convolution (1-indexed k)."""
    return 1 if k == config.h_prime else config.channels_ac[k - 1]


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class SyncNetParams:
    """Learnable tensors plus batchnorm running statistics."""

    def __init__(self, config: SyncNetConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)

        def kernel(c_out, c_in, width):
            std = np.sqrt(2.0 / (c_in * width))
            return Tensor(rng.normal(0.0, std, size=(c_out, c_in, width)),
                          requires_grad=True)

        def bias(c_out):
            return Tensor(np.zeros((c_out, 1)), requires_grad=True)

        self.causal_kernels: list[Tensor] = []
        self.causal_biases: list[Tensor] = []
        self.causal_bn: dict[int, tuple[Tensor, Tensor, RunningStats]] = {}
        c_in = 1
        for i in range(1, config.h + 1):
            c_out = config.channels_ct[i - 1]
            self.causal_kernels.append(kernel(c_out, c_in, config.kernel_widths_ct[i - 1]))
            self.causal_biases.append(bias(c_out))
            if i in config.bn_causal_levels():
                self.causal_bn[i] = (
                    Tensor(np.ones(c_out), requires_grad=True),
                    Tensor(np.zeros(c_out), requires_grad=True),
                    RunningStats(c_out),
                )
            c_in = c_out

        self.ac_blocks: list[dict] = []
        for k in range(1, config.h_prime + 1):
            c_mid = config.channels_ac[k - 1]
            c_out = _ac_conv2_out_channels(config, k)
            width = config.kernel_widths_ac[k - 1]
            self.ac_blocks.append(
                {
                    "k1": kernel(c_mid, c_in, width),
                    "b1": bias(c_mid),
                    "k2": kernel(c_out, c_mid, width),
                    "b2": bias(c_out),
                    "bn_gamma": Tensor(np.ones(c_out), requires_grad=True),
                    "bn_beta": Tensor(np.zeros(c_out), requires_grad=True),
                    "bn_running": RunningStats(c_out),
                }
            )
            c_in = c_out

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """All learnable tensors in a fixed order (running stats excluded)."""
        out = []
        for i, (k, b) in enumerate(zip(self.causal_kernels, self.causal_biases), 1):
            out.append((f"ct{i}.kernel", k))
            out.append((f"ct{i}.bias", b))
            if i in self.causal_bn:
                gamma, beta, _ = self.causal_bn[i]
                out.append((f"ct{i}.bn.gamma", gamma))
                out.append((f"ct{i}.bn.beta", beta))
        for k, block in enumerate(self.ac_blocks, 1):
            out.append((f"ac{k}.k1", block["k1"]))
            out.append((f"ac{k}.b1", block["b1"]))
            out.append((f"ac{k}.k2", block["k2"]))
            out.append((f"ac{k}.b2", block["b2"]))
            out.append((f"ac{k}.bn.gamma", block["bn_gamma"]))
            out.append((f"ac{k}.bn.beta", block["bn_beta"]))
        return out

    def named_running_stats(self) -> list[tuple[str, RunningStats]]:
        out = []
        for i in sorted(self.causal_bn):
            out.append((f"ct{i}.bn", self.causal_bn[i][2]))
        for k, block in enumerate(self.ac_blocks, 1):
            out.append((f"ac{k}.bn", block["bn_running"]))
        return out

    def zero_grad(self) -> None:
        for _, t in self.named_tensors():
            t.zero_grad()


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def extract_windows(config: SyncNetConfig, samples: np.ndarray) -> np.ndarray:
    lay = config.layout
    if samples.shape != (lay.L,):
        raise ShapeError(f"expected {lay.L} samples, got {samples.shape}")
    starts = np.arange(lay.p) * lay.stride
    return np.stack([samples[a : a + lay.l] for a in starts])[:, np.newaxis, :]


def forward_causal(
    params: SyncNetParams,
    config: SyncNetConfig,
    signal_tensor: Tensor,
    training: bool = False,
) -> Tensor:
    """Run the p causal towers; returns their stacked outputs [p, C, n].

    Level 1 convolves the raw windows; from level 2 on each tower's input is
    its own previous level plus the previous tower's previous level, keeping
    every tower blind to later windows. The signal enters as constant data:
    gradients flow to parameters only.
    """
    data = signal_tensor.data
    if data.ndim == 2 and data.shape[0] == 1:
        data = data[0]
    y = Tensor(extract_windows(config, data))
    for i in range(1, config.h + 1):
        x_in = y if i == 1 else ad.add(y, ad.shift_axis0(y))
        y = ad.conv1d(x_in, params.causal_kernels[i - 1],
                      dilation=config.dilations[i - 1])
        y = ad.add(y, params.causal_biases[i - 1])
        if i in params.causal_bn:
            gamma, beta, running = params.causal_bn[i]
            y = ad.batchnorm1d(y, gamma, beta, running, training=training)
        y = ad.relu(y)
    return y


def forward_anticausal(
    params: SyncNetParams,
    config: SyncNetConfig,
    tower_outputs: Tensor,
    training: bool = False,
) -> Tensor:
    """Mix intervals with both neighbors for h' blocks and concatenate.

    Block k processes sum of the previous block's intervals j-1, j, j+1
    (missing neighbors are zero) through conv+relu, conv, then bn+relu. The
    last block's second convolution carries a single output channel, and the
    p interval outputs are concatenated in time order.
    """
    y = tower_outputs
    for k, block in enumerate(params.ac_blocks, 1):
        x_in = ad.neighbor_sum_axis0(y)
        t = ad.relu(ad.add(ad.conv1d(x_in, block["k1"]), block["b1"]))
        t = ad.add(ad.conv1d(t, block["k2"]), block["b2"])
        t = ad.batchnorm1d(t, block["bn_gamma"], block["bn_beta"],
                           block["bn_running"], training=training)
        y = ad.relu(t)
    p, channels, n = y.data.shape
    if channels != 1:
        raise ShapeError("final anti-causal block must emit one channel")
    return ad.reshape(y, (1, p * n))


def transform(
    params: SyncNetParams,
    config: SyncNetConfig,
    signal: Signal | np.ndarray | Tensor,
    training: bool = False,
) -> Tensor:
    """Full network: causal towers then anti-causal mixing, [1, N_out]."""
    if isinstance(signal, Signal):
        signal = Tensor(signal.samples)
    elif not isinstance(signal, Tensor):
        signal = Tensor(signal)
    towers = forward_causal(params, config, signal, training=training)
    return forward_anticausal(params, config, towers, training=training)


def count_parameters(config: SyncNetConfig) -> int:
    """Closed-form learnable parameter count (kernels, biases, bn affine)."""
    total = 0
    c_in = 1
    for i in range(1, config.h + 1):
        c_out = config.channels_ct[i - 1]
        total += c_out * c_in * config.kernel_widths_ct[i - 1] + c_out
        if i in config.bn_causal_levels():
            total += 2 * c_out
        c_in = c_out
    for k in range(1, config.h_prime + 1):
        c_mid = config.channels_ac[k - 1]
        c_out = _ac_conv2_out_channels(config, k)
        width = config.kernel_widths_ac[k - 1]
        total += c_mid * c_in * width + c_mid
        total += c_out * c_mid * width + c_out
        total += 2 * c_out
        c_in = c_out
    return total


# ---------------------------------------------------------------------------
# model container and checkpointing
# ---------------------------------------------------------------------------

@dataclass
class SyncNetModel:
    config: SyncNetConfig
    params: SyncNetParams

    @classmethod
    def initialize(cls, config: SyncNetConfig, seed: int = 0) -> "SyncNetModel":
        return cls(config=config, params=SyncNetParams(config, seed=seed))

    def transform(self, signal, training: bool = False) -> Tensor:
        return transform(self.params, self.config, signal, training=training)

    def save(self, path) -> None:
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "lag_scale": self.config.lag_scale(),
            "params": {
                name: {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
                for name, t in self.params.named_tensors()
            },
            "running_stats": {
                name: {"mean": rs.mean.tolist(), "var": rs.var.tolist()}
                for name, rs in self.params.named_running_stats()
            },
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True))

    @classmethod
    def load(cls, path) -> "SyncNetModel":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {payload.get('format_version')!r}"
            )
        try:
            config = SyncNetConfig.from_dict(payload["config"])
            model = cls.initialize(config, seed=0)
            for name, t in model.params.named_tensors():
                entry = payload["params"][name]
                data = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
                if data.shape != t.data.shape:
                    raise CheckpointError(f"shape mismatch for {name}")
                t.data = data
            for name, rs in model.params.named_running_stats():
                entry = payload["running_stats"][name]
                rs.mean = np.array(entry["mean"], dtype=np.float64)
                rs.var = np.array(entry["var"], dtype=np.float64)
        except KeyError as exc:
            raise CheckpointError(f"checkpoint {path} missing field {exc}") from exc
        return model
