"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

The graph is the set of parent references held by each Tensor: every op
links its output to its inputs and stashes a closure that propagates the
output's cotangent. backward() seeds the root with 1 and sweeps a reverse
topological order of that DAG (parents always precede children, so the
graph is acyclic by construction). Gradients accumulate into .grad on every
recorded tensor; calling backward twice without resetting grads accumulates
a second contribution, by design.

Shapes follow the network's needs: convolution and batch normalization act
on [channels, length] arrays and also accept an optional leading axis that
batches independent windows ([towers, channels, length]); the 2-D case is
the primitive contract, the 3-D case a convenience that keeps tower loops
out of Python.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .correlation import direct_full_correlation
from .errors import ContractError, DegenerateBatchError, DomainError, ShapeError


class Tensor:
    """N-dimensional float64 array node in the differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Attach graph edges to out if any parent participates in gradients."""
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into .grad for every node under root."""
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    # iterative DFS postorder = topological order with parents first
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    root.accumulate_grad(np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _record(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def backward_fn(g):
        a.accumulate_grad(g * c)

    return _record(out, (a,), backward_fn)


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)

    def backward_fn(g):
        a.accumulate_grad(2.0 * a.data * g)

    return _record(out, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive input")
    out = Tensor(np.log(a.data))

    def backward_fn(g):
        a.accumulate_grad(g / a.data)

    return _record(out, (a,), backward_fn)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    floor = float(floor)
    out = Tensor(np.maximum(a.data, floor))
    mask = a.data > floor

    def backward_fn(g):
        a.accumulate_grad(g * mask)

    return _record(out, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0  # subgradient at 0 is 0

    def backward_fn(g):
        a.accumulate_grad(g * mask)

    return _record(out, (a,), backward_fn)


def tensor_sum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def backward_fn(g):
        a.accumulate_grad(np.full_like(a.data, float(g)))

    return _record(out, (a,), backward_fn)


def sqrt_sum(a: Tensor) -> Tensor:
    """Scalar sqrt of the element sum; zero subgradient at an exact zero."""
    total = float(a.data.sum())
    if total < 0.0:
        raise DomainError("sqrt_sum requires a non-negative element sum")
    root = np.sqrt(total)
    out = Tensor(root)

    def backward_fn(g):
        if root == 0.0:
            return
        a.accumulate_grad(np.full_like(a.data, float(g) / (2.0 * root)))

    return _record(out, (a,), backward_fn)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def backward_fn(g):
        a.accumulate_grad(g.reshape(a.data.shape))

    return _record(out, (a,), backward_fn)


def shift_axis0(a: Tensor) -> Tensor:
    """Shift entries one step along axis 0, filling index 0 with zeros."""
    out_data = np.zeros_like(a.data)
    out_data[1:] = a.data[:-1]
    out = Tensor(out_data)

    def backward_fn(g):
        gi = np.zeros_like(a.data)
        gi[:-1] = g[1:]
        a.accumulate_grad(gi)

    return _record(out, (a,), backward_fn)


def neighbor_sum_axis0(a: Tensor) -> Tensor:
    """out[j] = a[j-1] + a[j] + a[j+1] along axis 0, zeros past the ends."""
    out_data = a.data.copy()
    out_data[1:] += a.data[:-1]
    out_data[:-1] += a.data[1:]
    out = Tensor(out_data)

    def backward_fn(g):
        gi = g.copy()
        gi[1:] += g[:-1]
        gi[:-1] += g[1:]
        a.accumulate_grad(gi)

    return _record(out, (a,), backward_fn)


def _conv_windows(x: np.ndarray, width: int, dilation: int) -> np.ndarray:
    span = dilation * (width - 1) + 1
    return sliding_window_view(x, span, axis=-1)[..., ::dilation]


def conv1d(x: Tensor, kernels: Tensor, dilation: int = 1) -> Tensor:
    """Valid cross-correlation-style convolution, stride 1, no padding.

    x: [channels_in, length] or [towers, channels_in, length]
    kernels: [channels_out, channels_in, width]
    output length = length - dilation * (width - 1)
    """
    if dilation < 1:
        raise ShapeError("dilation must be >= 1")
    if kernels.data.ndim != 3:
        raise ShapeError("kernels must be [channels_out, channels_in, width]")
    batched = x.data.ndim == 3
    if not batched and x.data.ndim != 2:
        raise ShapeError("input must be [channels_in, length] (optionally batched)")
    c_out, c_in, width = kernels.data.shape
    if x.data.shape[-2] != c_in:
        raise ShapeError(
            f"input has {x.data.shape[-2]} channels, kernels expect {c_in}"
        )
    length = x.data.shape[-1]
    out_len = length - dilation * (width - 1)
    if out_len < 1:
        raise ShapeError(
            f"kernel span {dilation * (width - 1) + 1} exceeds input length {length}"
        )
    xd = x.data if batched else x.data[np.newaxis]
    windows = _conv_windows(xd, width, dilation)  # [t, c_in, out_len, width]
    out_data = np.einsum("tclw,ocw->tol", windows, kernels.data, optimize=True)
    out = Tensor(out_data if batched else out_data[0])

    def backward_fn(g):
        gt = g if batched else g[np.newaxis]
        if kernels.requires_grad:
            gk = np.einsum("tol,tclw->ocw", gt, windows, optimize=True)
            kernels.accumulate_grad(gk)
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for w in range(width):
                seg = np.einsum("tol,oc->tcl", gt, kernels.data[:, :, w], optimize=True)
                gx[:, :, w * dilation : w * dilation + out_len] += seg
            x.accumulate_grad(gx if batched else gx[0])

    return _record(out, (x, kernels), backward_fn)


class RunningStats:
    """Mutable per-channel running mean/variance for batch normalization."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=np.float64)
        self.var = np.ones(channels, dtype=np.float64)

    def copy(self) -> "RunningStats":
        out = RunningStats(len(self.mean))
        out.mean = self.mean.copy()
        out.var = self.var.copy()
        return out


BN_MOMENTUM = 0.1


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    eps: float = 1e-5,
    training: bool = True,
) -> Tensor:
    """Per-channel normalization over the length axis.

    x: [channels, length] or [towers, channels, length]. In training mode
    each (tower, channel) row is normalized by its own statistics, so no
    information crosses towers; the shared running stats absorb one
    momentum-0.1 update per call using the tower-averaged batch statistics.
    Inference mode normalizes with the running stats.
    """
    batched = x.data.ndim == 3
    if not batched and x.data.ndim != 2:
        raise ShapeError("batchnorm input must be [channels, length] (optionally batched)")
    xd = x.data if batched else x.data[np.newaxis]
    towers, channels, length = xd.shape
    if gamma.data.shape != (channels,) or beta.data.shape != (channels,):
        raise ShapeError("gamma/beta must have one value per channel")
    gam = gamma.data.reshape(1, channels, 1)
    bet = beta.data.reshape(1, channels, 1)

    if training:
        if length < 2:
            raise DegenerateBatchError("training-mode batchnorm needs length >= 2")
        mean = xd.mean(axis=2, keepdims=True)
        var = xd.var(axis=2, keepdims=True)
        running.mean += BN_MOMENTUM * (mean.mean(axis=0).ravel() - running.mean)
        running.var += BN_MOMENTUM * (var.mean(axis=0).ravel() - running.var)
    else:
        mean = running.mean.reshape(1, channels, 1)
        var = running.var.reshape(1, channels, 1)

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (xd - mean) * inv_std
    out_data = gam * x_hat + bet
    out = Tensor(out_data if batched else out_data[0])

    def backward_fn(g):
        gt = g if batched else g[np.newaxis]
        if gamma.requires_grad:
            gamma.accumulate_grad((gt * x_hat).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta.accumulate_grad(gt.sum(axis=(0, 2)))
        if x.requires_grad:
            gxh = gt * gam
            if training:
                n = length
                term = (
                    n * gxh
                    - gxh.sum(axis=2, keepdims=True)
                    - x_hat * (gxh * x_hat).sum(axis=2, keepdims=True)
                )
                gx = term * inv_std / n
            else:
                gx = gxh * inv_std
            x.accumulate_grad(gx if batched else gx[0])

    return _record(out, (x, gamma, beta), backward_fn)


def max_pool1d(a: Tensor, pool: int) -> Tensor:
    """Non-overlapping max pooling of a 1-D tensor; the tail remainder that
    does not fill a window is dropped. Gradient flows to the argmax of each
    window only (ties to the lowest index)."""
    if a.data.ndim != 1:
        raise ShapeError("max_pool1d expects a 1-D tensor")
    if pool < 1:
        raise ShapeError("pool size must be >= 1")
    n = a.data.size // pool
    if n == 0:
        raise ShapeError(f"pool {pool} exceeds sequence length {a.data.size}")
    blocks = a.data[: n * pool].reshape(n, pool)
    arg = blocks.argmax(axis=1)
    out = Tensor(blocks[np.arange(n), arg])
    winners = np.arange(n) * pool + arg

    def backward_fn(g):
        gi = np.zeros_like(a.data)
        gi[winners] = g
        a.accumulate_grad(gi)

    return _record(out, (a,), backward_fn)


def _fft_convolve(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Linear convolution via FFT; used only inside correlation backward."""
    n = len(x) + len(y) - 1
    n_fft = 1 << (n - 1).bit_length()
    return np.fft.irfft(np.fft.rfft(x, n_fft) * np.fft.rfft(y, n_fft), n_fft)[:n]


def full_correlate(a: Tensor, b: Tensor) -> Tensor:
    """Full-lag sliding-dot-product correlation of two 1-D tensors.

    Output index i holds sum_t a[t] * b[t - (i - (len(b) - 1))], i.e. lags
    run from -(len(b)-1) to len(a)-1. The forward path is the same direct
    routine the classical estimator uses; the backward pass may use FFT
    convolutions, which only need to be accurate, not bit-identical.
    """
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError("full_correlate expects 1-D tensors")
    n_a, n_b = a.data.size, b.data.size
    out = Tensor(direct_full_correlation(a.data, b.data))

    def backward_fn(g):
        if a.requires_grad:
            # grad_a[t] = sum_i g[i] * b[t - i + n_b - 1]
            ga = _fft_convolve(g, b.data)[n_b - 1 : n_b - 1 + n_a]
            a.accumulate_grad(ga)
        if b.requires_grad:
            # grad_b[s] = sum_i g[i] * a[s + i - (n_b - 1)]
            gb = _fft_convolve(a.data, g[::-1])[n_a - 1 : n_a - 1 + n_b]
            b.accumulate_grad(gb)

    return _record(out, (a, b), backward_fn)
