"""High-frequency sequence route: Haar DWT -> token sequence -> TTT-Linear -> spatial map."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, resize_bilinear, resize_bilinear_backward
from .ttt import TTTConfig, ViewProjections, ttt_backward, ttt_forward


@dataclass
class DwtSubbands:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray


def haar_dwt2d(x: np.ndarray) -> DwtSubbands:
    """Single-level orthonormal Haar analysis over the last two axes.

    For each 2x2 block ``[[a, b], [c, d]]``: ``ll = (a+b+c+d)/2``,
    ``lh = (a+b-c-d)/2``, ``hl = (a-b+c-d)/2``, ``hh = (a-b-c+d)/2``.
    """
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"haar_dwt2d needs even spatial extents, got {h}x{w}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return DwtSubbands(
        ll=(a + b + c + d) / 2,
        lh=(a + b - c - d) / 2,
        hl=(a - b + c - d) / 2,
        hh=(a - b - c + d) / 2,
    )


def haar_idwt2d(s: DwtSubbands) -> np.ndarray:
    ll, lh, hl, hh = s.ll, s.lh, s.hl, s.hh
    shape = ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1])
    out = np.empty(shape, dtype=ll.dtype)
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[..., 0::2, 1::2] = (ll + lh - hl - hh) / 2
    out[..., 1::2, 0::2] = (ll - lh + hl - hh) / 2
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def seq_flatten(x: np.ndarray) -> np.ndarray:
    """``[B, C, W, H] -> [B, W*H, C]``, row-major spatial scan."""
    b, c, w, h = x.shape
    return np.ascontiguousarray(x.reshape(b, c, w * h).transpose(0, 2, 1))


def seq_unflatten(s: np.ndarray, w: int, h: int) -> np.ndarray:
    b, t, c = s.shape
    if t != w * h:
        raise ShapeError(f"sequence length {t} != {w}*{h}")
    return np.ascontiguousarray(s.transpose(0, 2, 1).reshape(b, c, w, h))


def positional_encoding(t: int, dtype=np.float32) -> np.ndarray:
    """Token indices ``0..t-1`` scaled to ``[0, 1]``."""
    if t == 1:
        return np.zeros(1, dtype=dtype)
    return (np.arange(t, dtype=np.float64) / (t - 1)).astype(dtype)


@dataclass
class TVMParams:
    proj: ViewProjections
    cfg: TTTConfig
    w0: np.ndarray
    subband: str = "hh"      # "hh" or "detail" (lh + hl + hh)

    @classmethod
    def init(cls, cfg: TTTConfig, seed: int, dtype=np.float32, subband: str = "hh") -> "TVMParams":
        return cls(ViewProjections.init(cfg.dim, seed, dtype), cfg,
                   np.zeros((cfg.dim, cfg.dim), dtype=dtype), subband)


@dataclass
class TVMCache:
    shape: tuple
    caches: list = field(default_factory=list)


def tvm_tokens(em: np.ndarray, subband: str = "hh") -> tuple[np.ndarray, tuple[int, int]]:
    bands = haar_dwt2d(em)
    if subband == "hh":
        detail = bands.hh
    elif subband == "detail":
        detail = bands.lh + bands.hl + bands.hh
    else:
        raise ValueError(f"unknown subband selection {subband!r}")
    seq = seq_flatten(detail)
    seq = seq + positional_encoding(seq.shape[1], seq.dtype)[None, :, None]
    return seq, detail.shape[-2:]


def tvm_apply(em: np.ndarray, params: TVMParams, return_cache: bool = False):
    b, c, w, h = em.shape
    seq, (w2, h2) = tvm_tokens(em, params.subband)
    outs = np.empty_like(seq)
    cache = TVMCache(shape=(w2, h2))
    for i in range(b):
        if return_cache:
            outs[i], _, ttt_cache = ttt_forward(seq[i], params.proj, params.cfg, params.w0, return_cache=True)
            cache.caches.append(ttt_cache)
        else:
            outs[i], _ = ttt_forward(seq[i], params.proj, params.cfg, params.w0)
    y = resize_bilinear(seq_unflatten(outs, w2, h2), (w, h))
    if return_cache:
        return y, cache
    return y


def tvm_backward(cache: TVMCache, grad: np.ndarray) -> dict:
    """Gradients of the projections (and W0) given the output gradient."""
    w2, h2 = cache.shape
    gseq = seq_flatten(resize_bilinear_backward(grad, (w2, h2)))
    total = None
    for i, ttt_cache in enumerate(cache.caches):
        g = ttt_backward(ttt_cache, gseq[i])
        if total is None:
            total = {k: g[k] for k in ("theta_k", "theta_v", "theta_q", "w0")}
        else:
            for k in total:
                total[k] = total[k] + g[k]
    return total
