"""Channel-ablation probe and gain arithmetic between model variants.

A channel's delta is ``metric(full model) - metric(channel zeroed)`` on a
fixed probe set: positive means the channel helps (advantageous), negative
means it hurts (adverse).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .data import Split
from .experiment import boxes_for, fmt, predict
from .metrics import s_measure
from .model import ToyModel

REL_GUARD = 1e-12


@dataclass(frozen=True)
class ChannelDelta:
    channel: str
    delta: float

    @property
    def advantageous(self) -> bool:
        return self.delta > 0


def probe_score(model: ToyModel, probe: Split, channel_off: int | None = None, metric=s_measure) -> float:
    """Mean metric over the probe set, in sorted-name order."""
    probs = predict(model, probe.images, boxes_for(probe.masks), channel_off=channel_off)
    total = 0.0
    for i in sorted(range(len(probe.names)), key=lambda i: probe.names[i]):
        total += metric(probs[i], probe.masks[i, 0])
    return total / len(probe.names)


def channel_ablation(model: ToyModel, probe: Split, channels=None, metric=s_measure) -> list[ChannelDelta]:
    width = model.cfg.channels
    channels = list(range(width)) if channels is None else list(channels)
    for c in channels:
        if not 0 <= c < width:
            raise IndexError(f"channel {c} outside embedding width {width}")
    base = probe_score(model, probe, None, metric)
    return [ChannelDelta(str(c), base - probe_score(model, probe, c, metric)) for c in channels]


@dataclass
class GainTable:
    channels: list[str]
    base: list[float]
    variant: list[float]
    gain: list[float]
    relative_pct: list[float | None]


def gain_table(base: list[ChannelDelta], variant: list[ChannelDelta]) -> GainTable:
    """``gain = variant - base``; ``relative = gain / |base|`` in percent (None when base ~ 0)."""
    names = [d.channel for d in base]
    if names != [d.channel for d in variant]:
        raise ValueError(f"channel sets differ: {names} vs {[d.channel for d in variant]}")
    b = [d.delta for d in base]
    v = [d.delta for d in variant]
    gain = [vi - bi for bi, vi in zip(b, v)]
    rel = [None if abs(bi) < REL_GUARD else 100.0 * g / abs(bi) for bi, g in zip(b, gain)]
    return GainTable(names, b, v, gain, rel)


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def separation(deltas: list[ChannelDelta], partition: list[ChannelDelta] | None = None) -> float:
    """Mean delta over advantageous channels minus mean delta over adverse ones.

    ``partition`` picks which model's delta signs define the two channel sets
    (default: ``deltas`` itself). Empty sets contribute 0.
    """
    signs = [d.delta for d in (partition or deltas)]
    adv = [d.delta for d, s in zip(deltas, signs) if s > 0]
    bad = [d.delta for d, s in zip(deltas, signs) if s < 0]
    return _mean(adv) - _mean(bad)


def effect_distance(base: list[ChannelDelta], variant: list[ChannelDelta]) -> float:
    """Growth of the advantageous/adverse separation from ``base`` to ``variant``.

    Channels are classified once, by the base model's delta signs, so the
    value equals mean gain on helpful channels minus mean gain on harmful
    ones. Zero for a model compared with itself.
    """
    table = gain_table(base, variant)
    adv = [g for d, g in zip(base, table.gain) if d.delta > 0]
    bad = [g for d, g in zip(base, table.gain) if d.delta < 0]
    return _mean(adv) - _mean(bad)


# --- csv -------------------------------------------------------------------

def read_deltas(path) -> list[ChannelDelta]:
    out = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["channel", "delta"]:
            raise ValueError(f"{path}:1: expected header 'channel,delta'")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'channel,delta', got {row}")
            try:
                value = float(row[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: delta {row[1]!r} is not a number") from None
            if not math.isfinite(value):
                raise ValueError(f"{path}:{lineno}: delta must be finite")
            out.append(ChannelDelta(row[0].strip(), value))
    return out


def write_deltas(path, deltas: list[ChannelDelta], config_hash: str = "") -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["channel", "delta", "config_hash"])
        for d in deltas:
            w.writerow([d.channel, fmt(d.delta), config_hash])


def write_gain_table(path, table: GainTable, config_hash: str = "", base_label="base",
                     variant_label="variant") -> None:
    """Row layout: base, variant, gain, relative gain (%); one column per channel."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["row", *table.channels, "config_hash"])
        w.writerow([base_label, *map(fmt, table.base), config_hash])
        w.writerow([variant_label, *map(fmt, table.variant), config_hash])
        w.writerow(["gain", *map(fmt, table.gain), config_hash])
        w.writerow(["relative_gain_pct", *("undefined" if r is None else fmt(r) for r in table.relative_pct),
                    config_hash])

