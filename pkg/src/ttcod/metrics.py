"""Camouflaged/salient object detection metrics.

All functions take ``pred`` with values in [0, 1] (clamped on entry) and a
binary ``gt`` of the same 2-D shape. Degenerate ground truths follow the
conventions of the metrics' original reference code.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import convolve, distance_transform_edt

_EPS = np.spacing(1)
N_THRESHOLDS = 256
METRIC_NAMES = ("S_alpha", "F_beta_w", "E_phi", "F_m", "E_x", "MAE")
POSITIVE = ("S_alpha", "F_beta_w", "E_phi", "F_m", "E_x")
NEGATIVE = ("MAE",)


def prepare(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} must be equal 2-D shapes")
    return np.clip(pred, 0.0, 1.0), gt > 0.5


def binarize_gt8(mask8: np.ndarray) -> np.ndarray:
    """8-bit mask -> bool, threshold 128."""
    return np.asarray(mask8) >= 128


# --- MAE -------------------------------------------------------------------

def mae(pred, gt) -> float:
    pred, gt = prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


# --- S-measure -------------------------------------------------------------

def _s_object(p: np.ndarray, mask: np.ndarray) -> float:
    vals = p[mask]
    x = vals.mean()
    sigma = vals.std(ddof=1) if vals.size > 1 else 0.0
    return 2 * x / (x * x + 1 + sigma + _EPS)


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x, y = p.mean(), g.mean()
    sx = np.sum((p - x) ** 2) / (n - 1 + _EPS)
    sy = np.sum((g - y) ** 2) / (n - 1 + _EPS)
    sxy = np.sum((p - x) * (g - y)) / (n - 1 + _EPS)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + _EPS)
    return 1.0 if b == 0 else 0.0


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    # +1 mirrors 1-based slicing of the original code
    ys, xs = np.nonzero(gt)
    return int(np.round(xs.mean())) + 1, int(np.round(ys.mean())) + 1


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, gt = prepare(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1 - pred.mean())
    if y == 1:
        return float(pred.mean())
    g = gt.astype(np.float64)
    obj = y * _s_object(pred * g, gt) + (1 - y) * _s_object((1 - pred) * (1 - g), ~gt)
    cx, cy = _centroid(gt)
    h, w = gt.shape
    region = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        pq, gq = pred[rs, cs], g[rs, cs]
        if pq.size:
            region += pq.size / (h * w) * _ssim(pq, gq)
    score = alpha * obj + (1 - alpha) * region
    return float(min(max(score, 0.0), 1.0))


# --- E-measure -------------------------------------------------------------

def thresholds() -> np.ndarray:
    """256 thresholds ``k/256``; a pixel is foreground when ``pred > t``."""
    return np.arange(N_THRESHOLDS, dtype=np.float64) / N_THRESHOLDS


def _count_above(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    return values.size - np.searchsorted(np.sort(values), t, side="right")


def e_measure(pred, gt) -> tuple[float, float]:
    """Enhanced-alignment measure over all thresholds: ``(mean, max)``."""
    pred, gt = prepare(pred, gt)
    n = gt.size
    n_fg = int(gt.sum())
    t = thresholds()
    fg_fg = _count_above(pred[gt], t).astype(np.float64)
    fg_bg = _count_above(pred[~gt], t).astype(np.float64)
    pred_fg = fg_fg + fg_bg
    pred_bg = n - pred_fg
    if n_fg == 0:
        total = pred_bg
    elif n_fg == n:
        total = pred_fg
    else:
        bg_fg = n_fg - fg_fg
        bg_bg = pred_bg - bg_fg
        mp = pred_fg / n
        mg = n_fg / n
        total = np.zeros_like(t)
        for count, dp, dg in ((fg_fg, 1 - mp, 1 - mg), (fg_bg, 1 - mp, -mg),
                              (bg_fg, -mp, 1 - mg), (bg_bg, -mp, -mg)):
            align = 2 * dp * dg / (dp * dp + dg * dg + _EPS)
            total = total + (align + 1) ** 2 / 4 * count
    scores = np.clip(total / n, 0.0, 1.0)
    return float(scores.mean()), float(scores.max())


# --- weighted F-measure ----------------------------------------------------

def gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    """Normalized Gaussian, same values as MATLAB ``fspecial('gaussian')``."""
    m = (size - 1) / 2
    y, x = np.ogrid[-m:m + 1, -m:m + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    k[k < np.finfo(k.dtype).eps * k.max()] = 0
    return k / k.sum()


def weighted_fbeta(pred, gt, beta2: float = 1.0) -> float:
    """Weighted F-measure.

    Background errors are first replaced by the error of their nearest
    foreground pixel (ties resolved towards the smallest column, then row),
    smoothed with a 7x7 sigma=5 Gaussian, and weighted by
    ``2 - exp(ln(0.5)/5 * distance)`` outside the object.
    """
    pred, gt = prepare(pred, gt)
    if not gt.any():
        return 0.0
    dist, (ir, ic) = distance_transform_edt(~gt, return_indices=True)
    g = gt.astype(np.float64)
    err = np.abs(pred - g)
    err_t = err[ir, ic]
    ea = convolve(err_t, gaussian_kernel(), mode="constant", cval=0.0)
    min_e = np.where(gt & (ea < err), ea, err)
    weight = np.where(gt, 1.0, 2 - np.exp(np.log(0.5) / 5 * dist))
    ew = min_e * weight
    tpw = g.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    recall = 1 - ew[gt].mean()
    precision = tpw / (tpw + fpw + _EPS)
    q = (1 + beta2) * recall * precision / (recall + beta2 * precision + _EPS)
    return float(min(max(q, 0.0), 1.0))


# --- mean (adaptive-threshold) F-measure ----------------------------------

def f_mean(pred, gt, beta2: float = 0.3) -> float:
    """F-measure at the adaptive threshold ``min(2 * mean(pred), 1)``."""
    pred, gt = prepare(pred, gt)
    thr = min(2 * pred.mean(), 1.0)
    if thr == 0:
        return 0.0
    binary = pred >= thr
    inter = np.count_nonzero(binary & gt)
    if inter == 0:
        return 0.0
    p = inter / np.count_nonzero(binary)
    r = inter / np.count_nonzero(gt)
    return float((1 + beta2) * p * r / (beta2 * p + r))


# --- reports ---------------------------------------------------------------

@dataclass
class MetricReport:
    S_alpha: float
    F_beta_w: float
    E_phi: float
    F_m: float
    E_x: float
    MAE: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @property
    def P(self) -> float:
        return sum(getattr(self, k) for k in POSITIVE) / len(POSITIVE)

    @property
    def N(self) -> float:
        return self.MAE


def evaluate_pair(pred, gt) -> MetricReport:
    e_mean, e_max = e_measure(pred, gt)
    return MetricReport(
        S_alpha=s_measure(pred, gt),
        F_beta_w=weighted_fbeta(pred, gt),
        E_phi=e_mean,
        F_m=f_mean(pred, gt),
        E_x=e_max,
        MAE=mae(pred, gt),
    )


def aggregate(named_reports: dict[str, MetricReport]) -> MetricReport:
    """Arithmetic mean over images, summed in sorted-name order."""
    names = sorted(named_reports)
    if not names:
        raise ValueError("nothing to aggregate")
    out = {}
    for k in METRIC_NAMES:
        total = 0.0
        for name in names:
            total += getattr(named_reports[name], k)
        out[k] = total / len(names)
    return MetricReport(**out)

