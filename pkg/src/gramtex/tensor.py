"""Dense feature tensors and the forward/backward compute kernels.

A feature tensor is a float64 ndarray of shape ``(channels, height, width)``;
its vectorized view is ``arr.reshape(channels, height * width)``.  All kernels
run in double precision and are pure functions: nothing is mutated in place.
Gradients are taken with respect to activations only; there is no weight
training anywhere in the engine.

Convolution is direct (no FFT, no Winograd): a fixed sweep over the nine
kernel offsets, each contracting input channels with one GEMM.  The reduction
order per output element is therefore fixed, which keeps results
bit-reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UsageError, ValidationError

KERNEL_SIZE = 3


def as_feature_tensor(data, channels: int | None = None) -> np.ndarray:
    """Coerce to a float64 (C, H, W) array, validating rank and channel count."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionError(f"feature tensor must be 3-d (C,H,W), got shape {arr.shape}")
    if channels is not None and arr.shape[0] != channels:
        raise DimensionError(f"expected {channels} channels, got {arr.shape[0]}")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise DimensionError(f"spatial dims must be >= 1, got shape {arr.shape}")
    return arr


def ensure_finite(arr: np.ndarray, what: str) -> np.ndarray:
    """Raise ValidationError if any element is NaN/Inf."""
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class ConvWeights:
    """One convolution layer's parameters.

    kernel has shape (out_channels, in_channels, 3, 3); bias has shape
    (out_channels,).  Values are stored in double precision regardless of the
    on-disk format.
    """

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if kernel.ndim != 4 or kernel.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
            raise DimensionError(
                f"kernel must have shape (out, in, 3, 3), got {kernel.shape}"
            )
        if bias.shape != (kernel.shape[0],):
            raise DimensionError(
                f"bias must have shape ({kernel.shape[0]},), got {bias.shape}"
            )
        ensure_finite(kernel, "conv kernel")
        ensure_finite(bias, "conv bias")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]


@dataclass(frozen=True)
class PoolContext:
    """Bookkeeping the pooling backward pass needs.

    For max mode, ``argmax`` holds the flat within-window winner index
    (0..3, row-major scan order) per pooled element; ties go to the first
    maximum in scan order.  Avg mode needs nothing beyond the mode itself.
    """

    mode: str
    input_shape: tuple[int, int, int]
    argmax: np.ndarray | None = None


def conv3x3_forward(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    """3x3 convolution, stride 1, zero padding 1: output keeps H and W.

    out[o, y, x] = bias[o] + sum_{c,dy,dx} kernel[o,c,dy,dx] * padded[c, y+dy, x+dx]
    """
    x = as_feature_tensor(x)
    if x.shape[0] != w.in_channels:
        raise DimensionError(
            f"conv expects {w.in_channels} input channels, got {x.shape[0]}"
        )
    _, h, wd = x.shape
    padded = np.zeros((w.in_channels, h + 2, wd + 2), dtype=np.float64)
    padded[:, 1:-1, 1:-1] = x
    out = np.empty((w.out_channels, h, wd), dtype=np.float64)
    out[:] = w.bias[:, None, None]
    for dy in range(KERNEL_SIZE):
        for dx in range(KERNEL_SIZE):
            window = padded[:, dy:dy + h, dx:dx + wd]
            out += np.tensordot(w.kernel[:, :, dy, dx], window, axes=(1, 0))
    return out


def conv3x3_backward_input(grad_out: np.ndarray, w: ConvWeights) -> np.ndarray:
    """Adjoint of conv3x3_forward with respect to its input.

    Full correlation with the flipped kernels; the bias does not contribute.
    Same spatial dims as grad_out.
    """
    grad_out = as_feature_tensor(grad_out)
    if grad_out.shape[0] != w.out_channels:
        raise DimensionError(
            f"grad_out has {grad_out.shape[0]} channels, conv produces {w.out_channels}"
        )
    _, h, wd = grad_out.shape
    grad_padded = np.zeros((w.in_channels, h + 2, wd + 2), dtype=np.float64)
    for dy in range(KERNEL_SIZE):
        for dx in range(KERNEL_SIZE):
            grad_padded[:, dy:dy + h, dx:dx + wd] += np.tensordot(
                w.kernel[:, :, dy, dx], grad_out, axes=(0, 0)
            )
    return np.ascontiguousarray(grad_padded[:, 1:-1, 1:-1])


def relu_forward(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0)."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out: np.ndarray, preactivation: np.ndarray) -> np.ndarray:
    """Gate the incoming gradient: pass where preactivation > 0, else 0.

    The subgradient at exactly 0 is taken as 0, so the kernel is total.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    preactivation = np.asarray(preactivation, dtype=np.float64)
    if grad_out.shape != preactivation.shape:
        raise DimensionError(
            f"shape mismatch: grad {grad_out.shape} vs preactivation {preactivation.shape}"
        )
    return np.where(preactivation > 0.0, grad_out, 0.0)


def pool2x2_forward(x: np.ndarray, mode: str) -> tuple[np.ndarray, PoolContext]:
    """Non-overlapping 2x2 pooling; halves each spatial dimension.

    mode is "avg" (window mean) or "max" (window maximum).  Odd spatial dims
    are rejected: silent truncation would change the vectorized map size that
    every loss normalization depends on.
    """
    x = as_feature_tensor(x)
    if mode not in ("avg", "max"):
        raise UsageError(f"unknown pooling mode {mode!r}")
    c, h, wd = x.shape
    if h < 2 or wd < 2:
        raise DimensionError(f"input too small to pool: {x.shape}")
    if h % 2 != 0 or wd % 2 != 0:
        raise ValidationError(
            f"pooling requires even spatial dims, got {h}x{wd}"
        )
    windows = x.reshape(c, h // 2, 2, wd // 2, 2).transpose(0, 1, 3, 2, 4)
    windows = windows.reshape(c, h // 2, wd // 2, 4)
    if mode == "avg":
        return windows.mean(axis=3), PoolContext("avg", (c, h, wd))
    argmax = windows.argmax(axis=3)
    out = np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]
    return out, PoolContext("max", (c, h, wd), argmax)


def pool2x2_backward(grad_out: np.ndarray, ctx: PoolContext, mode: str) -> np.ndarray:
    """Adjoint of pool2x2_forward.

    Avg distributes each gradient value /4 over its window; max routes it to
    the argmax cell recorded in the context.
    """
    grad_out = as_feature_tensor(grad_out)
    if mode != ctx.mode:
        raise UsageError(f"pool context was built for mode {ctx.mode!r}, not {mode!r}")
    c, h, wd = ctx.input_shape
    if grad_out.shape != (c, h // 2, wd // 2):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match pooled dims {(c, h // 2, wd // 2)}"
        )
    if mode == "avg":
        spread = np.repeat(np.repeat(grad_out, 2, axis=1), 2, axis=2)
        return spread * 0.25
    if ctx.argmax is None:
        raise UsageError("max-pool context is missing argmax indices")
    windows = np.zeros((c, h // 2, wd // 2, 4), dtype=np.float64)
    np.put_along_axis(windows, ctx.argmax[..., None], grad_out[..., None], axis=3)
    return (
        windows.reshape(c, h // 2, wd // 2, 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h, wd)
    )
