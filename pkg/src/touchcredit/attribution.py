"""Channel-level credit from trained conversion models.

Three scores are produced for converting paths:

* incremental: ``p(path) - p(path without the channel's events)``
* fractional:  incremental scores clipped at 0, normalised per path and
  averaged over paths
* attention:   per-path attention mass of each channel, averaged over paths

plus per-event weights for heatmaps, mean attention by time-lag bucket and
per-path channel scores split by journey duration.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import TouchpointPath, Vocabulary
from .errors import ConfigError, DomainError

DEFAULT_WINDOWS = ((0.0, 7.0), (7.0, 30.0), (30.0, 56.0), (0.0, 56.0))


class UnsupportedVariantError(ConfigError):
    """The model has no attention weights to score with."""


def _converting(paths):
    return [p for p in paths if p.label and len(p)]


def without_channel(path: TouchpointPath, channel: str, vocab: Vocabulary) -> TouchpointPath:
    keep = [i for i, e in enumerate(path.events) if vocab.channel_of[vocab.names[e]] != channel]
    return path if len(keep) == len(path.events) else path.replace_events(keep)


def incremental_score(model, path: TouchpointPath, channel: str, vocab: Vocabulary) -> float:
    """Drop in predicted conversion probability when every event of ``channel`` is removed."""
    if channel not in vocab.channels:
        raise DomainError(f"unknown channel {channel!r}")
    reduced = without_channel(path, channel, vocab)
    if reduced is path:
        return 0.0
    p = model.predict([path, reduced])
    return float(p[0] - p[1])


def incremental_matrix(model, paths: Sequence[TouchpointPath], vocab: Vocabulary) -> np.ndarray:
    """Incremental score of every channel on every path, shape [n_paths, n_channels].

    Channels absent from a path score exactly 0.  All forward passes are
    issued as one batch.
    """
    channels = vocab.channels
    chan_of_tp = vocab.channel_index()
    queries, slots = list(paths), []
    for i, path in enumerate(paths):
        present = set(chan_of_tp[np.asarray(path.events, dtype=np.intp)].tolist())
        for c in sorted(present):
            slots.append((i, c, len(queries)))
            queries.append(without_channel(path, channels[c], vocab))
    probs = model.predict(queries) if queries else np.zeros(0)
    out = np.zeros((len(paths), len(channels)))
    for i, c, q in slots:
        out[i, c] = probs[i] - probs[q]
    return out


def fractional_scores(model, paths: Sequence[TouchpointPath], vocab: Vocabulary) -> dict[str, float]:
    """Average over converting paths of the clipped, per-path normalised incremental scores."""
    conv = _converting(paths)
    if not conv:
        raise DomainError("fractional scores need at least one converting path")
    inc = np.clip(incremental_matrix(model, conv, vocab), 0.0, None)
    totals = inc.sum(axis=1)
    keep = totals > 0
    channels = vocab.channels
    if not keep.any():
        return {c: 1.0 / len(channels) for c in channels}
    shares = (inc[keep] / totals[keep, None]).mean(axis=0)
    return dict(zip(channels, shares.tolist()))


def incremental_scores(model, paths: Sequence[TouchpointPath], vocab: Vocabulary) -> dict[str, float]:
    """Mean raw incremental score per channel over converting paths (not normalised)."""
    conv = _converting(paths)
    if not conv:
        raise DomainError("incremental scores need at least one converting path")
    inc = incremental_matrix(model, conv, vocab).mean(axis=0)
    return dict(zip(vocab.channels, inc.tolist()))


def has_attention(model) -> bool:
    return bool(getattr(getattr(model, "config", None), "has_attention", False))


def _require_attention(model):
    cfg = getattr(model, "config", None)
    if not has_attention(model):
        variant = getattr(cfg, "variant", type(model).__name__)
        raise UnsupportedVariantError(f"attention scores are undefined for variant {variant!r}")


def channel_attention(weights: np.ndarray, path: TouchpointPath, vocab: Vocabulary) -> np.ndarray:
    chan = vocab.channel_index()[np.asarray(path.events, dtype=np.intp)]
    return np.bincount(chan, weights=weights, minlength=len(vocab.channels))


def attention_scores(model, paths: Sequence[TouchpointPath], vocab: Vocabulary) -> dict[str, float]:
    """Average over converting paths of each channel's attention mass."""
    _require_attention(model)
    conv = _converting(paths)
    if not conv:
        raise DomainError("attention scores need at least one converting path")
    outs = model.forward_batch(conv)
    mass = np.mean([channel_attention(o.attention, p, vocab) for o, p in zip(outs, conv)], axis=0)
    return dict(zip(vocab.channels, mass.tolist()))


def heatmap_weights(model, path: TouchpointPath) -> tuple[np.ndarray, float]:
    _require_attention(model)
    out = model.forward(path)
    return out.attention, out.probability


@dataclass
class LagBucket:
    touchpoint: str
    bucket: int
    mean: float
    std: float
    n: int


def lag_curves(model, paths: Sequence[TouchpointPath], vocab: Vocabulary, bucket_days: float = 1.0) -> list[LagBucket]:
    """Mean and std of attention weight per touchpoint and lag bucket ``floor(lag / bucket_days)``."""
    if bucket_days < 1:
        raise DomainError("bucket_days must be >= 1")
    _require_attention(model)
    paths = [p for p in paths if len(p)]
    groups: dict[tuple[int, int], list[float]] = {}
    for out, path in zip(model.forward_batch(paths), paths):
        for e, lag, a in zip(path.events, path.lags, out.attention):
            groups.setdefault((e, int(math.floor(lag / bucket_days))), []).append(float(a))
    rows = []
    for (e, b) in sorted(groups):
        vals = np.asarray(groups[(e, b)])
        rows.append(LagBucket(vocab.names[e], b, float(vals.mean()), float(vals.std()), len(vals)))
    return rows


def _in_window(d: float, lo: float, hi: float, top: float) -> bool:
    return lo <= d < hi or (hi == top and d == hi)


def exposure_window_densities(model, paths: Sequence[TouchpointPath], vocab: Vocabulary,
                              windows=DEFAULT_WINDOWS) -> dict[tuple[float, float], np.ndarray]:
    """Per-path channel attention scores of converting paths, split by journey duration.

    Returns, for each ``(lo, hi)`` window, an array [n_paths_in_window,
    n_channels]; rows sum to 1.  A path belongs to a window when
    ``lo <= duration < hi`` (the uppermost bound is inclusive).
    """
    for lo, hi in windows:
        if not (0 <= lo < hi):
            raise DomainError(f"invalid window ({lo}, {hi})")
    _require_attention(model)
    conv = _converting(paths)
    top = max(hi for _, hi in windows)
    scores = np.array([channel_attention(o.attention, p, vocab)
                       for o, p in zip(model.forward_batch(conv), conv)]) if conv else np.zeros((0, len(vocab.channels)))
    durations = np.array([p.duration for p in conv])
    out = {}
    for lo, hi in windows:
        mask = np.array([_in_window(d, lo, hi, top) for d in durations], dtype=bool)
        out[(lo, hi)] = scores[mask] if conv else scores
    return out


# ----------------------------------------------------------------------------
# report bundle


@dataclass
class AttributionReport:
    fractional: dict[str, float]
    incremental: dict[str, float]
    event_weights: dict[str, list[float]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def incremental_total(self) -> float:
        return float(sum(self.incremental.values()))


def build_report(model, paths: Sequence[TouchpointPath], vocab: Vocabulary, method: str = "incremental",
                 dataset_id: str = "") -> AttributionReport:
    """Channel scores plus per-event weights of every converting path.

    ``method`` picks the fractional score: ``incremental`` (normalised
    incremental) or ``attention``.
    """
    if method == "attention":
        frac = attention_scores(model, paths, vocab)
    elif method == "incremental":
        frac = fractional_scores(model, paths, vocab)
    else:
        raise ConfigError(f"unknown attribution method {method!r}")
    inc = incremental_scores(model, paths, vocab)
    conv = _converting(paths)
    weights = {p.path_id: o.attention.tolist() for p, o in zip(conv, model.forward_batch(conv))} \
        if has_attention(model) else {}
    variant = getattr(getattr(model, "config", None), "variant", getattr(model, "kind", ""))
    meta = {"variant": variant, "dataset": dataset_id, "n_paths": len(conv), "method": method}
    return AttributionReport(frac, inc, weights, meta)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_fractional_csv(scores: dict[str, float], path):
    _write(path, ["channel", "score"], [[c, _fmt(v)] for c, v in scores.items()])


def write_incremental_csv(scores: dict[str, float], path):
    rows = [[c, _fmt(v)] for c, v in scores.items()]
    rows.append(["total", _fmt(sum(scores.values()))])
    _write(path, ["channel", "score"], rows)


def write_heatmap_csv(model, path: TouchpointPath, vocab: Vocabulary, dest):
    weights, p = heatmap_weights(model, path)
    _write(dest, ["t", "touchpoint", "weight", "p"],
           [[t, vocab.names[e], _fmt(w), _fmt(p)] for t, (e, w) in enumerate(zip(path.events, weights))])


def write_lag_curves_csv(rows: list[LagBucket], dest):
    _write(dest, ["touchpoint", "bucket", "mean", "std", "n"],
           [[r.touchpoint, r.bucket, _fmt(r.mean), _fmt(r.std), r.n] for r in rows])


def write_densities_csv(densities, vocab: Vocabulary, dest):
    rows = []
    for (lo, hi), scores in densities.items():
        label = f"{lo:g}-{hi:g}"
        for row in scores:
            rows.extend([label, c, _fmt(v)] for c, v in zip(vocab.channels, row))
    _write(dest, ["window", "channel", "score"], rows)


def write_report_bundle(model, paths: Sequence[TouchpointPath], vocab: Vocabulary, out_dir,
                        method: str = "incremental", top_k: int = 5, bucket_days: float = 1.0) -> list[str]:
    """Write the report CSVs into ``out_dir``; returns the file names written.

    Models without attention (lstm variant, baselines) have no per-event
    weights, so only ``fractional.csv`` and ``incremental.csv`` are written
    for them.
    """
    if top_k < 0:
        raise DomainError("top_k must be >= 0")
    os.makedirs(out_dir, exist_ok=True)
    report = build_report(model, paths, vocab, method=method)
    written = []

    def dest(name):
        written.append(name)
        return os.path.join(out_dir, name)

    write_fractional_csv(report.fractional, dest("fractional.csv"))
    write_incremental_csv(report.incremental, dest("incremental.csv"))
    if not has_attention(model):
        return written
    conv = _converting(paths)
    write_lag_curves_csv(lag_curves(model, conv, vocab, bucket_days), dest("lag_curves.csv"))
    write_densities_csv(exposure_window_densities(model, paths, vocab), vocab, dest("densities.csv"))
    probs = model.predict(conv) if conv else np.zeros(0)
    # highest probability first; path id breaks ties
    ranked = sorted(range(len(conv)), key=lambda i: (-probs[i], conv[i].path_id))[:top_k]
    for i in ranked:
        write_heatmap_csv(model, conv[i], vocab, dest(f"heatmap_{conv[i].path_id}.csv"))
    return written
