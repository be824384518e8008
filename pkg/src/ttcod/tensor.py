"""Dense array primitives shared by every other module.

Arrays are plain :class:`numpy.ndarray` objects laid out as ``[B, C, W, H]``
for feature maps. float32 is the production dtype; every op preserves the
dtype of its input so float64 can be used for gradient verification.

Each differentiable op used by the trainable path has a ``*_backward``
companion returning input/parameter gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-5
_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Raised when array extents do not agree with an op's contract."""


class ConfigError(ValueError):
    """Raised for an invalid op configuration (e.g. groups not dividing channels)."""


# ---------------------------------------------------------------------------
# PRNG
# ---------------------------------------------------------------------------

def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (the state increment is applied here)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Prng:
    """Seeded stream factory.

    Child streams are derived with SplitMix64 over the parent seed and an
    FNV-1a hash of the stream name; values come from numpy's PCG64, whose
    output is fixed across platforms for a given seed.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def child(self, name: str) -> "Prng":
        h = 0xCBF29CE484222325
        for byte in name.encode("utf-8"):
            h = ((h ^ byte) * 0x100000001B3) & _MASK64
        return Prng(splitmix64(self.seed ^ h))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


def prng_fill(shape, seed: int, init: str = "uniform_kaiming", fan_in: int | None = None,
              dtype=np.float32) -> np.ndarray:
    """Fill a new array of ``shape``.

    ``uniform_kaiming`` draws from U(-k, k) with ``k = 1/sqrt(fan_in)``; fan_in
    defaults to the product of all extents but the first (conv/linear weight
    layout ``[out, in, ...]``).
    """
    shape = tuple(int(s) for s in shape)
    if init == "zeros":
        return np.zeros(shape, dtype=dtype)
    if init == "ones":
        return np.ones(shape, dtype=dtype)
    if init != "uniform_kaiming":
        raise ConfigError(f"unknown init {init!r}")
    if fan_in is None:
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    values = Prng(seed).generator().uniform(-bound, bound, size=shape)
    # float64 -> float32 rounding may land a hair outside the bound
    return np.clip(values, -bound, bound).astype(dtype)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    dilation: int = 1
    groups: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.kernel not in (1, 3):
            raise ConfigError(f"kernel must be 1 or 3, got {self.kernel}")
        if self.dilation < 1 or self.stride < 1 or self.groups < 1:
            raise ConfigError("dilation, stride and groups must be positive")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}")

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel - 1) // 2

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    def output_size(self, n: int) -> int:
        return (n - 1) // self.stride + 1


def _taps(spec: ConvSpec, ho: int, wo: int):
    """Yield ``(tap_index, row_slice, col_slice)`` into the zero-padded input."""
    k, d, s = spec.kernel, spec.dilation, spec.stride
    for i in range(k):
        for j in range(k):
            yield i * k + j, slice(i * d, i * d + s * (ho - 1) + 1, s), slice(j * d, j * d + s * (wo - 1) + 1, s)


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x


def _check_conv(x: np.ndarray, weight: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [B, C, W, H] input, got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"conv2d weight shape {weight.shape} != expected {spec.weight_shape}")


def conv2d(x: np.ndarray, weight: np.ndarray, spec: ConvSpec,
           bias: np.ndarray | None = None) -> np.ndarray:
    """Grouped, dilated 2-D convolution (cross-correlation) with zero same-padding.

    weight layout: ``[out, in/groups, k, k]``. Accumulates one kernel tap at a
    time, each tap a batched channel matmul.
    """
    _check_conv(x, weight, spec)
    b, c, h, w = x.shape
    g = spec.groups
    ho, wo = spec.output_size(h), spec.output_size(w)
    xp = _pad(x, spec.padding)
    # tap-major copy so every per-tap operand is contiguous (BLAS path)
    wt = np.ascontiguousarray(np.moveaxis(weight.reshape(g, spec.out_channels // g, c // g, -1), 3, 0))
    out = np.zeros((b, g, spec.out_channels // g, ho * wo), dtype=np.result_type(x, weight))
    for t, rs, cs in _taps(spec, ho, wo):
        xs = np.ascontiguousarray(xp[:, :, rs, cs]).reshape(b, g, c // g, ho * wo)
        out += np.matmul(wt[t], xs)
    out = out.reshape(b, spec.out_channels, ho, wo)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def conv2d_backward(x: np.ndarray, weight: np.ndarray, spec: ConvSpec, grad: np.ndarray,
                    need_input: bool = True):
    """Gradients of :func:`conv2d` w.r.t. input, weight and bias.

    Returns ``(dx, dweight, dbias)``; ``dx`` is None when ``need_input`` is false.
    """
    b, c, h, w = x.shape
    g, p = spec.groups, spec.padding
    og, cg = spec.out_channels // g, c // g
    ho, wo = grad.shape[2], grad.shape[3]
    xp = _pad(x, p)
    wt_t = np.ascontiguousarray(np.moveaxis(weight.reshape(g, og, cg, -1), 3, 0).swapaxes(2, 3))
    gmat = np.ascontiguousarray(grad).reshape(b, g, og, ho * wo)
    dweight = np.empty((g, og, cg, wt_t.shape[0]), dtype=weight.dtype)
    dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=x.dtype) if need_input else None
    for t, rs, cs in _taps(spec, ho, wo):
        xs = np.ascontiguousarray(xp[:, :, rs, cs]).reshape(b, g, cg, ho * wo)
        dweight[..., t] = np.matmul(gmat, np.swapaxes(xs, 2, 3)).sum(axis=0)
        if need_input:
            contrib = np.matmul(wt_t[t], gmat)
            dxp[:, :, rs, cs] += contrib.reshape(b, c, ho, wo)
    dbias = grad.sum(axis=(0, 2, 3))
    if not need_input:
        return None, dweight.reshape(weight.shape), dbias
    dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
    return dx, dweight.reshape(weight.shape), dbias


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def instance_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Normalize every (sample, channel) plane by its own mean/variance, then apply affine."""
    if eps <= 0:
        raise ConfigError("eps must be positive")
    mean = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    xhat = (x - mean) / np.sqrt(var + eps)
    return xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)


def layer_norm(x: np.ndarray, eps: float = EPS):
    """Affine-free normalization over the last axis; returns ``(y, inv_std)``."""
    mean = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    return (x - mean) * inv, inv


def layer_norm_backward(y: np.ndarray, inv: np.ndarray, grad: np.ndarray) -> np.ndarray:
    n = y.shape[-1]
    return inv / n * (n * grad - grad.sum(-1, keepdims=True) - y * (grad * y).sum(-1, keepdims=True))


# ---------------------------------------------------------------------------
# Resizing
# ---------------------------------------------------------------------------

def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """``[n_out, n_in]`` interpolation matrix, align_corners=False convention.

    Source coordinate ``(i + 0.5) * n_in / n_out - 0.5``, clamped below at 0;
    the upper neighbour index is clamped to ``n_in - 1``.
    """
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - lam)
    np.add.at(mat, (rows, i1), lam)
    return mat.astype(dtype)


def resize_bilinear(x: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ConfigError(f"resize target must be positive, got {target}")
    h, w = x.shape[-2:]
    if (h, w) == (th, tw):
        return x.copy()
    rh = bilinear_matrix(h, th, x.dtype)
    rw = bilinear_matrix(w, tw, x.dtype)
    return rh @ x @ rw.T


def resize_bilinear_backward(grad: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    h, w = source
    th, tw = grad.shape[-2:]
    if (h, w) == (th, tw):
        return grad.copy()
    rh = bilinear_matrix(h, th, grad.dtype)
    rw = bilinear_matrix(w, tw, grad.dtype)
    return rh.T @ grad @ rw
