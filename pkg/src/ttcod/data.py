"""Synthetic camouflage dataset: textured backgrounds with low-contrast textured blobs.

On disk every split holds ``images/NNNNN.ppm`` (binary P6) and
``masks/NNNNN.pgm`` (binary P5, values 0/255).
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .tensor import Prng

AREA_BAND = (0.05, 0.40)
MARGIN = 2


# --- PNM io ----------------------------------------------------------------

def write_pnm(path, array: np.ndarray) -> None:
    """uint8 ``[H, W]`` -> P5, ``[H, W, 3]`` -> P6."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write array of shape {arr.shape} as PNM")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(arr.tobytes())


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM ({magic!r}, maxval {maxval})")
    depth = 3 if magic == b"P6" else 1
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h * depth, offset=pos)
    return arr.reshape((h, w, 3) if depth == 3 else (h, w)).copy()


# --- generation ------------------------------------------------------------

def _texture(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    t = gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    t += 0.5 * gaussian_filter(rng.standard_normal((size, size)), sigma / 3, mode="wrap")
    return (t - t.mean()) / (t.std() + 1e-12)


def _blob(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    for _ in range(100):
        frac = rng.uniform(0.08, 0.32)
        r0 = np.sqrt(frac * size * size / np.pi)
        amps = rng.uniform(0, 0.15, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        r_max = r0 * (1 + amps.sum())
        lo, hi = r_max + MARGIN + 1, size - r_max - MARGIN - 1
        if lo >= hi:
            continue
        cy, cx = rng.uniform(lo, hi, size=2)
        theta = np.arctan2(yy - cy, xx - cx)
        radius = r0 * (1 + sum(a * np.cos(k * theta + p) for k, a, p in zip((2, 3, 4), amps, phases)))
        mask = np.hypot(yy - cy, xx - cx) <= radius
        area = mask.mean()
        border = mask[:MARGIN].any() or mask[-MARGIN:].any() or mask[:, :MARGIN].any() or mask[:, -MARGIN:].any()
        if AREA_BAND[0] <= area <= AREA_BAND[1] and not border:
            return mask
    raise RuntimeError("could not place an object inside the image")


def generate_sample(seed: int, size: int, contrast: float) -> tuple[np.ndarray, np.ndarray]:
    """One ``(image[H, W, 3] uint8, mask[H, W] uint8)`` pair.

    The object's per-channel mean is matched to the background's, then offset
    by ``contrast`` (in [0, 1] intensity units) with a random sign per channel.
    """
    rng = Prng(seed).generator()
    mask = _blob(rng, size)
    base = rng.uniform(0.35, 0.65, size=3)
    amp = rng.uniform(0.04, 0.08)
    sigma_bg = rng.uniform(2.0, 5.0)
    sigma_fg = sigma_bg * rng.uniform(0.6, 0.9)
    bg_tex = _texture(rng, size, sigma_bg)
    fg_tex = _texture(rng, size, sigma_fg)
    signs = rng.choice([-1.0, 1.0], size=3)
    img = np.empty((size, size, 3))
    for c in range(3):
        chan = base[c] + amp * np.where(mask, fg_tex, bg_tex)
        img[..., c] = chan
    out = np.clip(np.round(img * 255), 0, 255)
    # match object to background mean in the quantized image, then apply contrast
    for _ in range(4):
        for c in range(3):
            diff = out[..., c][mask].mean() - out[..., c][~mask].mean()
            target = contrast * 255 * signs[c]
            img[..., c][mask] -= (diff - target) / 255
        out = np.clip(np.round(img * 255), 0, 255)
    return out.astype(np.uint8), (mask * 255).astype(np.uint8)


@dataclass
class DataSpec:
    image_size: int = 256
    n_train: int = 200
    n_test: int = 50
    contrast: float = 0.05
    seed: int = 0


def sample_seed(data_seed: int, split: str, index: int) -> int:
    return Prng(data_seed).child(f"{split}/{index}").seed


def gen_data(spec: DataSpec, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise PermissionError(f"dataset directory {out} is not writable")
    for split, n in (("train", spec.n_train), ("test", spec.n_test)):
        (out / split / "images").mkdir(parents=True, exist_ok=True)
        (out / split / "masks").mkdir(parents=True, exist_ok=True)
        for i in range(n):
            img, mask = generate_sample(sample_seed(spec.seed, split, i), spec.image_size, spec.contrast)
            write_pnm(out / split / "images" / f"{i:05d}.ppm", img)
            write_pnm(out / split / "masks" / f"{i:05d}.pgm", mask)
    return out


def splits(data_dir) -> list[str]:
    root = Path(data_dir)
    return sorted(p.name for p in root.iterdir() if (p / "images").is_dir())


def normalize_image(img8: np.ndarray) -> np.ndarray:
    """uint8 ``[H, W, 3]`` -> float32 ``[3, H, W]``: scaled to [0, 1], clipped, per-channel standardized."""
    x = np.clip(img8.astype(np.float64) / 255.0, 0.0, 1.0).transpose(2, 0, 1)
    mean = x.mean(axis=(1, 2), keepdims=True)
    std = x.std(axis=(1, 2), keepdims=True)
    return ((x - mean) / (std + 1e-6)).astype(np.float32)


@dataclass
class Split:
    names: list[str]
    images: np.ndarray     # [N, 3, H, W] float32
    masks: np.ndarray      # [N, 1, H, W] float32 in {0, 1}


def load_split(data_dir, split: str) -> Split:
    root = Path(data_dir) / split
    if not (root / "images").is_dir():
        raise FileNotFoundError(f"missing dataset split {root}")
    names = sorted(p.stem for p in (root / "images").glob("*.ppm"))
    if not names:
        raise FileNotFoundError(f"no images in {root / 'images'}")
    images = np.stack([normalize_image(read_pnm(root / "images" / f"{n}.ppm")) for n in names])
    masks = np.stack([(read_pnm(root / "masks" / f"{n}.pgm") >= 128)[None] for n in names]).astype(np.float32)
    return Split(names, images, masks)


def synthetic_split(seed: int, count: int, size: int, contrast: float) -> Split:
    """In-memory split, used for the fixed probe set."""
    imgs, masks = [], []
    for i in range(count):
        img, mask = generate_sample(Prng(seed).child(f"probe/{i}").seed, size, contrast)
        imgs.append(normalize_image(img))
        masks.append((mask >= 128)[None])
    return Split([f"{i:05d}" for i in range(count)], np.stack(imgs), np.stack(masks).astype(np.float32))
