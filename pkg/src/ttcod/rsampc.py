"""Frozen random perturbation stack applied to the image embedding in training only.

Pipeline: 1x1 conv C->2C + norm + ReLU, ``depth`` 3x3 convs 2C->2C + norm +
ReLU, 1x1 conv 2C->C + norm, then an optional frozen per-channel scale.
Weights are drawn once from the seed and never updated. In inference mode
the stack is skipped entirely, like dropout.
"""
from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from .tensor import ConvSpec, Prng, ShapeError, conv2d, instance_norm, prng_fill, relu

PREFIX = "rsampc."
MAX_DEPTH = 5


@dataclass(frozen=True)
class RsampcConfig:
    channels: int
    depth: int = 4
    channel_scale: float | None = None   # spread s of the U(1-s, 1+s) per-channel scale
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"depth must be in 1..{MAX_DEPTH}, got {self.depth}")
        if self.channel_scale is not None and not (0 < self.channel_scale < 1):
            raise ValueError("channel_scale spread must lie in (0, 1)")


class RsampcStack:
    """Immutable weight container; arrays are marked read-only."""

    def __init__(self, cfg: RsampcConfig, weights: dict[str, np.ndarray]):
        self.cfg = cfg
        for arr in weights.values():
            arr.setflags(write=False)
        self.weights = MappingProxyType(dict(weights))

    @property
    def spatial_layers(self) -> int:
        return sum(1 for k in self.weights if k.startswith(PREFIX + "si.") and k.endswith(".weight"))

    def state_bytes(self) -> bytes:
        return b"".join(k.encode() + self.weights[k].tobytes() for k in sorted(self.weights))


def _specs(c: int, depth: int):
    ci_d = ConvSpec(c, 2 * c, kernel=1)
    si = [ConvSpec(2 * c, 2 * c, kernel=3) for _ in range(depth)]
    ci_r = ConvSpec(2 * c, c, kernel=1)
    return ci_d, si, ci_r


def rsampc_init(cfg: RsampcConfig, dtype=np.float32) -> RsampcStack:
    rng = Prng(cfg.seed).child("rsampc")
    c = cfg.channels
    ci_d, si, ci_r = _specs(c, cfg.depth)
    w: dict[str, np.ndarray] = {}

    def add_layer(name: str, spec: ConvSpec):
        w[f"{PREFIX}{name}.weight"] = prng_fill(spec.weight_shape, rng.child(name).seed, dtype=dtype)
        w[f"{PREFIX}{name}.norm.gamma"] = np.ones(spec.out_channels, dtype=dtype)
        w[f"{PREFIX}{name}.norm.beta"] = np.zeros(spec.out_channels, dtype=dtype)

    add_layer("ci_d", ci_d)
    for i, spec in enumerate(si):
        add_layer(f"si.{i}", spec)
    add_layer("ci_r", ci_r)
    if cfg.channel_scale is not None:
        s = cfg.channel_scale
        draw = rng.child("scale").generator().uniform(1 - s, 1 + s, size=c)
        w[PREFIX + "scale"] = draw.astype(dtype)
    return RsampcStack(cfg, w)


def _layer(x, stack: RsampcStack, name: str, spec: ConvSpec, activate: bool):
    w = stack.weights
    y = conv2d(x, w[f"{PREFIX}{name}.weight"], spec)
    y = instance_norm(y, w[f"{PREFIX}{name}.norm.gamma"], w[f"{PREFIX}{name}.norm.beta"])
    return relu(y) if activate else y


def _pipeline(em: np.ndarray, stack: RsampcStack) -> np.ndarray:
    ci_d, si, ci_r = _specs(stack.cfg.channels, stack.cfg.depth)
    x = _layer(em, stack, "ci_d", ci_d, True)
    for i, spec in enumerate(si):
        x = _layer(x, stack, f"si.{i}", spec, True)
    x = _layer(x, stack, "ci_r", ci_r, False)
    if PREFIX + "scale" in stack.weights:
        x = x * stack.weights[PREFIX + "scale"].reshape(1, -1, 1, 1)
    return x.astype(em.dtype, copy=False)


def rsampc_apply(em: np.ndarray, stack: RsampcStack, mode: str) -> np.ndarray:
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if em.ndim != 4 or em.shape[1] != stack.cfg.channels:
        raise ShapeError(f"embedding shape {em.shape} does not match stack width {stack.cfg.channels}")
    if mode == "infer":
        return em
    return _pipeline(em, stack)
