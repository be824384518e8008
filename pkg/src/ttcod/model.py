"""Toy parallel-then-fuse segmentation model with hand-written gradients.

Graph (``em`` = frozen encoder output)::

    route 1:  em -> R-SAMPC (train mode only, M2/M3)
    route 2:  em -> TVM (M3)
    dense  = fuse(route 1, route 2)
    logits = decoder(em + dense, box)

Only the fusion block, the decoder and the TVM projections are trainable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rsampc import PREFIX as RSAMPC_PREFIX
from .rsampc import RsampcConfig, RsampcStack, rsampc_apply, rsampc_init
from .tensor import (ConvSpec, Prng, ShapeError, conv2d, conv2d_backward, prng_fill, relu,
                     relu_backward, resize_bilinear, resize_bilinear_backward, sigmoid)
from .ttt import TTTConfig, ViewProjections
from .tvm import TVMParams, tvm_apply, tvm_backward

VARIANTS = ("M1", "M2", "M3")


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    image_size: int = 256
    channels: int = 32
    encoder_channels: tuple[int, int] = (8, 16)
    decoder_channels: int = 16
    variant: str = "M3"
    depth: int = 4
    channel_scale: float | None = None
    inner_lr: float = 0.005
    mini_batch: int = 16
    residual: bool = False
    subband: str = "hh"
    fusion_groups: int = 4
    fusion_dilation: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.image_size % 8:
            raise ValueError("image_size must be divisible by 8")

    @property
    def embed_size(self) -> int:
        return self.image_size // 4

    @property
    def n_routes(self) -> int:
        return 2 if self.variant == "M3" else 1


# ---------------------------------------------------------------------------
# layer specs
# ---------------------------------------------------------------------------

def encoder_specs(cfg: ModelConfig) -> list[ConvSpec]:
    e1, e2 = cfg.encoder_channels
    return [ConvSpec(3, e1, 3, stride=2), ConvSpec(e1, e2, 3, stride=2),
            ConvSpec(e2, cfg.channels, 3, stride=1)]


def fusion_specs(channels: int, n_routes: int, groups: int, dilation: int) -> tuple[ConvSpec, ConvSpec]:
    width = channels * n_routes
    return (ConvSpec(width, width, 3, dilation=dilation, groups=groups),
            ConvSpec(width, channels, 1))


def decoder_specs(cfg: ModelConfig) -> tuple[ConvSpec, ConvSpec]:
    return ConvSpec(cfg.channels, cfg.decoder_channels, 3), ConvSpec(cfg.decoder_channels, 1, 3)


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

def fuse(route1: np.ndarray, route2: np.ndarray | None, params: dict, groups: int = 4,
         dilation: int = 2, return_cache: bool = False):
    """Concatenate routes, grouped dilated 3x3 conv, 1x1 projection back to C channels."""
    if route2 is not None and route2.shape != route1.shape:
        raise ShapeError(f"route shapes differ: {route1.shape} vs {route2.shape}")
    x = route1 if route2 is None else np.concatenate([route1, route2], axis=1)
    c = route1.shape[1]
    g_spec, p_spec = fusion_specs(c, x.shape[1] // c, groups, dilation)
    h = conv2d(x, params["fusion.group.weight"], g_spec, params["fusion.group.bias"])
    out = conv2d(h, params["fusion.proj.weight"], p_spec, params["fusion.proj.bias"])
    if return_cache:
        return out, (x, h, g_spec, p_spec)
    return out


def fuse_backward(cache, params: dict, grad: np.ndarray) -> tuple[dict, np.ndarray]:
    x, h, g_spec, p_spec = cache
    grads = {}
    dh, grads["fusion.proj.weight"], grads["fusion.proj.bias"] = conv2d_backward(
        h, params["fusion.proj.weight"], p_spec, grad)
    dx, grads["fusion.group.weight"], grads["fusion.group.bias"] = conv2d_backward(
        x, params["fusion.group.weight"], g_spec, dh)
    return grads, dx


def passthrough_fusion(channels: int, n_routes: int, groups: int = 4, dilation: int = 2,
                       dtype=np.float32) -> dict:
    """Fusion weights whose output equals route 1 exactly."""
    g_spec, p_spec = fusion_specs(channels, n_routes, groups, dilation)
    gw = np.zeros(g_spec.weight_shape, dtype=dtype)
    per = g_spec.in_channels // groups
    for o in range(g_spec.out_channels):
        gw[o, o % per, 1, 1] = 1
    pw = np.zeros(p_spec.weight_shape, dtype=dtype)
    for o in range(channels):
        pw[o, o, 0, 0] = 1
    return {
        "fusion.group.weight": gw, "fusion.group.bias": np.zeros(g_spec.out_channels, dtype=dtype),
        "fusion.proj.weight": pw, "fusion.proj.bias": np.zeros(channels, dtype=dtype),
    }


# ---------------------------------------------------------------------------
# boxes and loss
# ---------------------------------------------------------------------------

def mask_box(mask: np.ndarray) -> np.ndarray:
    """Normalized ``(x0, y0, x1, y1)`` bounding box of a binary mask; x runs along columns."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return np.array([0.0, 0.0, 1.0, 1.0])
    h, w = mask.shape
    return np.array([cols[0] / w, rows[0] / h, (cols[-1] + 1) / w, (rows[-1] + 1) / h])


def box_map(boxes: np.ndarray, size: tuple[int, int], dtype=np.float32) -> np.ndarray:
    """Indicator of pixel centres inside each box: ``[B, 1, W, H]``."""
    h, w = size
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    out = np.zeros((len(boxes), 1, h, w), dtype=dtype)
    for i, (x0, y0, x1, y1) in enumerate(boxes):
        out[i, 0] = np.outer((ys >= y0) & (ys <= y1), (xs >= x0) & (xs <= x1))
    return out


def seg_loss(logits: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean BCE plus mean (1 - soft IoU) with +1 smoothing; returns ``(loss, dloss/dlogits)``."""
    if logits.shape != gt.shape:
        raise ShapeError(f"logits {logits.shape} vs gt {gt.shape}")
    if gt.min() < 0 or gt.max() > 1:
        raise ValueError("gt values must lie in [0, 1]")
    z = logits.astype(np.float64)
    g = gt.astype(np.float64)
    n = z.size
    b = z.shape[0]
    bce = np.mean(np.maximum(z, 0) - z * g + np.log1p(np.exp(-np.abs(z))))
    p = sigmoid(z)
    axes = tuple(range(1, z.ndim))
    inter = (p * g).sum(axis=axes) + 1
    union = p.sum(axis=axes) + g.sum(axis=axes) - (p * g).sum(axis=axes) + 1
    iou = inter / union
    loss = bce + np.mean(1 - iou)
    shape = (b,) + (1,) * (z.ndim - 1)
    d_iou_dp = (g * union.reshape(shape) - inter.reshape(shape) * (1 - g)) / union.reshape(shape) ** 2
    grad = (p - g) / n - d_iou_dp / b * p * (1 - p)
    return float(loss), grad.astype(logits.dtype)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class ToyModel:
    cfg: ModelConfig
    params: dict[str, np.ndarray]
    frozen: frozenset[str]
    dtype: type = np.float32
    _stack: RsampcStack | None = field(default=None, repr=False)

    @classmethod
    def init(cls, cfg: ModelConfig, dtype=np.float32) -> "ToyModel":
        rng = Prng(cfg.seed)
        p: dict[str, np.ndarray] = {}
        frozen = set()

        def conv(name, spec, trainable):
            p[f"{name}.weight"] = prng_fill(spec.weight_shape, rng.child(name).seed, dtype=dtype)
            p[f"{name}.bias"] = np.zeros(spec.out_channels, dtype=dtype)
            if not trainable:
                frozen.update({f"{name}.weight", f"{name}.bias"})

        for i, spec in enumerate(encoder_specs(cfg)):
            conv(f"encoder.{i}", spec, False)
        g_spec, p_spec = fusion_specs(cfg.channels, cfg.n_routes, cfg.fusion_groups, cfg.fusion_dilation)
        conv("fusion.group", g_spec, True)
        conv("fusion.proj", p_spec, True)
        d1, d2 = decoder_specs(cfg)
        conv("decoder.up1", d1, True)
        conv("decoder.up2", d2, True)
        p["decoder.box.weight"] = np.zeros((cfg.decoder_channels, 4), dtype=dtype)
        p["decoder.boxmap.weight"] = np.zeros(cfg.decoder_channels, dtype=dtype)
        if cfg.variant in ("M2", "M3"):
            stack = rsampc_init(cls.rsampc_config(cfg), dtype=dtype)
            for k, v in stack.weights.items():
                p[k] = v
                frozen.add(k)
        if cfg.variant == "M3":
            proj = ViewProjections.init(cfg.channels, rng.child("tvm").seed & 0xFFFFFFFF, dtype)
            p["tvm.theta_k"], p["tvm.theta_v"], p["tvm.theta_q"] = proj.theta_k, proj.theta_v, proj.theta_q
            p["tvm.w0"] = np.zeros((cfg.channels, cfg.channels), dtype=dtype)
            frozen.add("tvm.w0")
        return cls(cfg, p, frozenset(frozen), dtype)

    @staticmethod
    def rsampc_config(cfg: ModelConfig) -> RsampcConfig:
        return RsampcConfig(cfg.channels, cfg.depth, cfg.channel_scale,
                            Prng(cfg.seed).child("rsampc-seed").seed)

    # -- structure -----------------------------------------------------------

    @property
    def trainable(self) -> list[str]:
        return sorted(k for k in self.params if k not in self.frozen)

    @property
    def stack(self) -> RsampcStack | None:
        if self.cfg.variant == "M1":
            return None
        if self._stack is None:
            weights = {k: v for k, v in self.params.items() if k.startswith(RSAMPC_PREFIX)}
            self._stack = RsampcStack(self.rsampc_config(self.cfg), weights)
        return self._stack

    def tvm_params(self) -> TVMParams | None:
        if self.cfg.variant != "M3":
            return None
        c = self.cfg
        proj = ViewProjections(self.params["tvm.theta_k"], self.params["tvm.theta_v"],
                               self.params["tvm.theta_q"])
        return TVMParams(proj, TTTConfig(c.channels, c.inner_lr, c.mini_batch, c.residual),
                         self.params["tvm.w0"], c.subband)

    def copy(self) -> "ToyModel":
        return ToyModel(self.cfg, {k: v.copy() for k, v in self.params.items()}, self.frozen, self.dtype)

    def astype(self, dtype) -> "ToyModel":
        return ToyModel(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()}, self.frozen, dtype)

    # -- forward -------------------------------------------------------------

    def embed(self, images: np.ndarray) -> np.ndarray:
        x = images.astype(self.dtype, copy=False)
        for i, spec in enumerate(encoder_specs(self.cfg)):
            x = relu(conv2d(x, self.params[f"encoder.{i}.weight"], spec, self.params[f"encoder.{i}.bias"]))
        return x

    def forward_embedding(self, em: np.ndarray, boxes: np.ndarray, mode: str,
                          return_cache: bool = False):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        c = self.cfg
        p = self.params
        route1 = em if self.stack is None else rsampc_apply(em, self.stack, mode)
        route2, tvm_cache = None, None
        tvm = self.tvm_params()
        if tvm is not None:
            route2, tvm_cache = tvm_apply(em, tvm, return_cache=True)
        dense, fuse_cache = fuse(route1, route2, p, c.fusion_groups, c.fusion_dilation, return_cache=True)
        dec_in = em + dense
        s = em.shape[-1]
        d1, d2 = decoder_specs(c)
        u1 = resize_bilinear(dec_in, (2 * s, 2 * s))
        bmap = box_map(boxes, (2 * s, 2 * s), self.dtype)
        box_bias = boxes.astype(self.dtype) @ p["decoder.box.weight"].T
        h1 = (conv2d(u1, p["decoder.up1.weight"], d1, p["decoder.up1.bias"])
              + box_bias[:, :, None, None]
              + p["decoder.boxmap.weight"].reshape(1, -1, 1, 1) * bmap)
        a1 = relu(h1)
        u2 = resize_bilinear(a1, (4 * s, 4 * s))
        logits = conv2d(u2, p["decoder.up2.weight"], d2, p["decoder.up2.bias"])
        if return_cache:
            return logits, dict(tvm=tvm_cache, fuse=fuse_cache, u1=u1, bmap=bmap, h1=h1, u2=u2,
                                boxes=boxes, s=s)
        return logits

    def forward(self, images: np.ndarray, boxes: np.ndarray, mode: str) -> np.ndarray:
        return self.forward_embedding(self.embed(images), boxes, mode)

    # -- backward ------------------------------------------------------------

    def gradients(self, em: np.ndarray, boxes: np.ndarray, masks: np.ndarray,
                  mode: str = "train") -> tuple[float, dict]:
        """Loss and gradients of every trainable parameter."""
        c = self.cfg
        p = self.params
        logits, cache = self.forward_embedding(em, boxes, mode, return_cache=True)
        loss, dlogits = seg_loss(logits, masks)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"non-finite loss {loss} (variant {c.variant})")
        d1, d2 = decoder_specs(c)
        s = cache["s"]
        g: dict[str, np.ndarray] = {}
        du2, g["decoder.up2.weight"], g["decoder.up2.bias"] = conv2d_backward(
            cache["u2"], p["decoder.up2.weight"], d2, dlogits)
        da1 = resize_bilinear_backward(du2, (2 * s, 2 * s))
        dh1 = relu_backward(cache["h1"], da1)
        g["decoder.boxmap.weight"] = (dh1 * cache["bmap"]).sum(axis=(0, 2, 3))
        g["decoder.box.weight"] = dh1.sum(axis=(2, 3)).T @ boxes.astype(self.dtype)
        du1, g["decoder.up1.weight"], g["decoder.up1.bias"] = conv2d_backward(
            cache["u1"], p["decoder.up1.weight"], d1, dh1)
        ddense = resize_bilinear_backward(du1, (s, s))
        fgrads, dx = fuse_backward(cache["fuse"], p, ddense)
        g.update(fgrads)
        if cache["tvm"] is not None:
            tg = tvm_backward(cache["tvm"], dx[:, c.channels:])
            for k in ("theta_k", "theta_v", "theta_q"):
                g[f"tvm.{k}"] = tg[k]
        return loss, g


def train_step(model: ToyModel, em: np.ndarray, boxes: np.ndarray, masks: np.ndarray,
               lr: float) -> float:
    """One plain gradient-descent step on the trainable partition, in place; returns the loss."""
    loss, grads = model.gradients(em, boxes, masks, "train")
    if lr != 0:
        for k in model.trainable:
            model.params[k] = (model.params[k] - lr * grads[k]).astype(model.dtype, copy=False)
    return loss
