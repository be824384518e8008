"""Training, evaluation and ablation drivers."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ExperimentConfig
from .data import load_split, read_pnm, splits, write_pnm
from .metrics import METRIC_NAMES, MetricReport, aggregate, evaluate_pair
from .model import ToyModel, mask_box, train_step
from .tensor import Prng, sigmoid

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.sttc"
CONFIG_NAME = "config.txt"
ABLATION_SETTINGS = ("L0", "L1", "L2", "L3", "L4", "L5", "L4+eps")
EPS_SPREAD = 0.1


def fmt(x: float) -> str:
    return repr(float(x))


def boxes_for(masks: np.ndarray) -> np.ndarray:
    return np.stack([mask_box(m[0] > 0.5) for m in masks])


@dataclass
class TrainResult:
    model: ToyModel
    losses: list[float]


def train(cfg: ExperimentConfig, data_dir, model: ToyModel | None = None) -> TrainResult:
    model = model or ToyModel.init(cfg.model_config())
    data = load_split(data_dir, "train")
    boxes = boxes_for(data.masks)
    # encoder is frozen: embed every training image once
    em = np.concatenate([model.embed(data.images[i:i + 8]) for i in range(0, len(data.names), 8)])
    n = len(data.names)
    order_rng = Prng(cfg.data_seed).child("batch-order")
    order: list[int] = []
    epoch = 0
    losses = []
    for step in range(cfg.steps):
        if len(order) < cfg.batch_size:
            order += list(order_rng.child(f"epoch/{epoch}").generator().permutation(n))
            epoch += 1
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        loss = train_step(model, em[idx], boxes[idx], data.masks[idx], cfg.lr)
        losses.append(loss)
        if step % 20 == 0:
            log.info("step %d loss %.5f", step, loss)
    return TrainResult(model, losses)


def predict(model: ToyModel, images: np.ndarray, boxes: np.ndarray, channel_off: int | None = None,
            batch: int = 8) -> np.ndarray:
    """Infer-mode foreground probabilities ``[N, H, W]``."""
    out = []
    for i in range(0, len(images), batch):
        em = model.embed(images[i:i + batch])
        if channel_off is not None:
            em = em.copy()
            em[:, channel_off] = 0
        logits = model.forward_embedding(em, boxes[i:i + batch], "infer")
        out.append(sigmoid(logits.astype(np.float64))[:, 0])
    return np.concatenate(out)


def quantize(prob: np.ndarray) -> np.ndarray:
    return np.round(np.clip(prob, 0, 1) * 255).astype(np.uint8)


def evaluate_split(model: ToyModel, data_dir, split: str, pred_dir=None) -> dict[str, MetricReport]:
    data = load_split(data_dir, split)
    probs = predict(model, data.images, boxes_for(data.masks))
    reports = {}
    for name, prob, mask in zip(data.names, probs, data.masks):
        pred8 = quantize(prob)
        if pred_dir is not None:
            Path(pred_dir).mkdir(parents=True, exist_ok=True)
            write_pnm(Path(pred_dir) / f"{name}.pgm", pred8)
        reports[name] = evaluate_pair(pred8 / 255.0, mask[0])
    return reports


def evaluate_dirs(pred_dir, gt_dir) -> dict[str, MetricReport]:
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    names = sorted(p.stem for p in gt_dir.glob("*.pgm"))
    if not names:
        raise FileNotFoundError(f"no ground-truth masks in {gt_dir}")
    reports = {}
    for name in names:
        pred_path = pred_dir / f"{name}.pgm"
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction {pred_path}")
        reports[name] = evaluate_pair(read_pnm(pred_path) / 255.0, read_pnm(gt_dir / f"{name}.pgm") >= 128)
    return reports


# --- csv writers -----------------------------------------------------------

def write_per_image(path, reports: dict[str, MetricReport], config_hash: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["config_hash", "image", *METRIC_NAMES])
        for name in sorted(reports):
            r = reports[name]
            w.writerow([config_hash, name, *(fmt(getattr(r, k)) for k in METRIC_NAMES)])


def write_metrics(path, rows: list[tuple[str, str, MetricReport]], config_hash: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["config_hash", "variant", "dataset", *METRIC_NAMES])
        for variant, dataset, r in rows:
            w.writerow([config_hash, variant, dataset, *(fmt(getattr(r, k)) for k in METRIC_NAMES)])


def write_losses(path, losses: list[float], config_hash: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["config_hash", "step", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([config_hash, i, fmt(loss)])


# --- run directories -------------------------------------------------------

def save_run(out_dir, cfg: ExperimentConfig, model: ToyModel) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out / CHECKPOINT_NAME, model.params, model.frozen)
    (out / CONFIG_NAME).write_text(cfg.to_text())


def load_run(run_dir) -> tuple[ExperimentConfig, ToyModel]:
    run = Path(run_dir)
    cfg = ExperimentConfig.load(run / CONFIG_NAME)
    params, frozen = checkpoint.load(run / CHECKPOINT_NAME)
    model = ToyModel.init(cfg.model_config())
    if set(params) != set(model.params) or frozen != model.frozen:
        raise checkpoint.CheckpointError(f"checkpoint in {run} does not match its config")
    for k, v in params.items():
        if v.shape != model.params[k].shape:
            raise checkpoint.CheckpointError(f"{k}: checkpoint shape {v.shape} != {model.params[k].shape}")
    return cfg, ToyModel(model.cfg, params, frozen)


def evaluate_run(cfg: ExperimentConfig, model: ToyModel, data_dir, out_dir) -> list[tuple[str, str, MetricReport]]:
    out = Path(out_dir)
    rows = []
    for split in splits(data_dir):
        if split == "train":
            continue
        reports = evaluate_split(model, data_dir, split, pred_dir=out / "preds" / split)
        write_per_image(out / f"per_image_{split}.csv", reports, cfg.hash)
        rows.append((cfg.variant, split, aggregate(reports)))
    write_metrics(out / "metrics.csv", rows, cfg.hash)
    return rows


def run_experiment(cfg: ExperimentConfig, data_dir, out_dir) -> list[tuple[str, str, MetricReport]]:
    """Train the configured variant, checkpoint it, evaluate every held-out split."""
    if not Path(data_dir, "train", "images").is_dir():
        raise FileNotFoundError(f"no dataset at {data_dir} (run gen-data first)")
    result = train(cfg, data_dir)
    out = Path(out_dir)
    save_run(out, cfg, result.model)
    write_losses(out / "losses.csv", result.losses, cfg.hash)
    return evaluate_run(cfg, result.model, data_dir, out)


def ablation_config(cfg: ExperimentConfig, setting: str) -> ExperimentConfig:
    if setting == "L0":
        return cfg.replace(variant="M1", channel_scale=None)
    if setting == "L4+eps":
        return cfg.replace(variant="M2", depth=4, channel_scale=EPS_SPREAD)
    return cfg.replace(variant="M2", depth=int(setting[1:]), channel_scale=None)


def ablate(cfg: ExperimentConfig, data_dir, out_dir) -> Path:
    """Depth/scaling sweep over L0..L5 and L4+eps; writes ``ablation.csv``."""
    out = Path(out_dir)
    table = []
    split_names = None
    for setting in ABLATION_SETTINGS:
        sub = ablation_config(cfg, setting)
        rows = run_experiment(sub, data_dir, out / setting)
        split_names = [r[1] for r in rows]
        table.append((setting, sub.hash, rows))
    header = ["setting", "config_hash"]
    for split in split_names:
        header += [f"{split}_{k}" for k in METRIC_NAMES]
    header += ["P", "N"]
    path = out / "ablation.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for setting, h, rows in table:
            values = []
            pos, neg = [], []
            for _, _, r in rows:
                values += [fmt(getattr(r, k)) for k in METRIC_NAMES]
                pos += [r.S_alpha, r.F_beta_w, r.E_phi, r.F_m, r.E_x]
                neg.append(r.MAE)
            w.writerow([setting, h, *values, fmt(sum(pos) / len(pos)), fmt(sum(neg) / len(neg))])
    return path
