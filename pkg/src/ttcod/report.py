"""Aggregate metric CSVs per variant and render comparison figures.

Input rows carry ``variant``, ``dataset`` and any subset of the metric
columns. For every variant, ``P`` is the mean of all positive-metric values
(higher is better) and ``N`` the mean of all MAE values.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import METRIC_NAMES, NEGATIVE, POSITIVE  # noqa: E402

# aliases accepted in input headers
_ALIASES = {"F_beta": "F_beta_w", "M": "MAE", "S": "S_alpha", "E": "E_phi"}


class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    variant: str
    dataset: str
    values: tuple      # (metric, value) pairs, metric order fixed


def read_rows(path) -> list[Row]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise CsvFormatError(f"{path}:1: empty file")
        header = [_ALIASES.get(h.strip(), h.strip()) for h in header]
        if "variant" not in header:
            raise CsvFormatError(f"{path}:1: missing 'variant' column")
        metric_cols = [(i, h) for i, h in enumerate(header) if h in METRIC_NAMES]
        if not metric_cols:
            raise CsvFormatError(f"{path}:1: no metric columns (expected some of {', '.join(METRIC_NAMES)})")
        iv = header.index("variant")
        ids = header.index("dataset") if "dataset" in header else None
        for lineno, raw in enumerate(reader, 2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            values = []
            for i, name in metric_cols:
                cell = raw[i].strip()
                if cell in ("", "-"):
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvFormatError(f"{path}:{lineno}: {name}={cell!r} is not a number") from None
                if not math.isfinite(v):
                    raise CsvFormatError(f"{path}:{lineno}: {name} is not finite")
                values.append((name, v))
            rows.append(Row(raw[iv].strip(), raw[ids].strip() if ids is not None else "", tuple(values)))
    return rows


@dataclass
class VariantSummary:
    variant: str
    n_rows: int
    P: float | None
    N: float | None
    means: dict[str, float]


def _mean(values: list[float]) -> float | None:
    # sorted summation keeps the result independent of input order
    return sum(sorted(values)) / len(values) if values else None


def summarize(rows: list[Row]) -> list[VariantSummary]:
    out = []
    for variant in sorted({r.variant for r in rows}):
        mine = [r for r in rows if r.variant == variant]
        per_metric: dict[str, list[float]] = {}
        for r in mine:
            for name, v in r.values:
                per_metric.setdefault(name, []).append(v)
        pos = [v for k in POSITIVE for v in per_metric.get(k, [])]
        neg = [v for k in NEGATIVE for v in per_metric.get(k, [])]
        means = {k: _mean(per_metric[k]) for k in METRIC_NAMES if k in per_metric}
        out.append(VariantSummary(variant, len(mine), _mean(pos), _mean(neg), means))
    return out


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def input_hash(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        lines = sorted(Path(p).read_text().splitlines())
        h.update("\n".join(lines).encode())
    return h.hexdigest()[:16]


def write_summary(path, summaries: list[VariantSummary], config_hash: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["config_hash", "variant", "n_rows", "P", "N", *METRIC_NAMES])
        for s in summaries:
            w.writerow([config_hash, s.variant, s.n_rows, _fmt(s.P), _fmt(s.N),
                        *(_fmt(s.means.get(k)) for k in METRIC_NAMES)])


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_pn(summaries: list[VariantSummary], path) -> None:
    names = [s.variant for s in summaries]
    fig, (ax_p, ax_n) = plt.subplots(1, 2, figsize=(7, 3))
    ax_p.bar(names, [s.P or 0 for s in summaries], color="tab:blue")
    ax_p.set_title("P (positive metrics, higher is better)", fontsize=9)
    ax_n.bar(names, [s.N or 0 for s in summaries], color="tab:red")
    ax_n.set_title("N (MAE, lower is better)", fontsize=9)
    for ax in (ax_p, ax_n):
        ax.tick_params(labelsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_metrics(summaries: list[VariantSummary], path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    metrics = [k for k in METRIC_NAMES if any(k in s.means for s in summaries)]
    x = range(len(metrics))
    for s in summaries:
        ax.plot(x, [s.means.get(k, float("nan")) for k in metrics], marker="o", label=s.variant)
    ax.set_xticks(list(x))
    ax.set_xticklabels(metrics, fontsize=8)
    ax.set_ylabel("mean over datasets")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def report(csv_paths, out_dir) -> list[VariantSummary]:
    rows = []
    for p in csv_paths:
        rows += read_rows(p)
    if not rows:
        raise CsvFormatError("no data rows in the given CSV files")
    summaries = summarize(rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(out / "report.csv", summaries, input_hash(csv_paths))
    plt.rcParams["svg.hashsalt"] = "ttcod"
    plot_pn(summaries, out / "report_pn.svg")
    plot_metrics(summaries, out / "report_metrics.svg")
    return summaries
