"""Evaluation metrics and the metrics/curve CSV formats."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .exceptions import ParseError, UndefinedAUCError

METRICS_HEADER = ("episode", "total_reward", "loss", "epsilon", "wall_ms")
CURVES_HEADER = ("bucket", "episode_start", "episode_end", "mean_reward", "mean_loss")


def compute_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: ``P(s_pos > s_neg) + 0.5 * P(tie)`` over all pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be binary")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)  # average ranks give ties half credit
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsRow:
    episode: int
    total_reward: float
    loss: float
    epsilon: float
    wall_ms: float


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_metrics(path, rows: Iterable) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([int(r.episode), _fmt(r.total_reward), _fmt(r.loss), _fmt(r.epsilon), _fmt(r.wall_ms)])
    return path


def read_metrics(path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise ParseError(f"expected header {','.join(METRICS_HEADER)}", line=1)
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(METRICS_HEADER):
                raise ParseError(f"expected {len(METRICS_HEADER)} fields, got {len(rec)}", line=lineno)
            try:
                row = MetricsRow(int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]), float(rec[4]))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if row.episode != len(rows):
                raise ParseError(f"episode index {row.episode} breaks the 0-based sequence", line=lineno)
            rows.append(row)
    return rows


@dataclass
class CurveRow:
    bucket: int
    episode_start: int
    episode_end: int
    mean_reward: float
    mean_loss: float


def bucket_means(rows: Sequence[MetricsRow], bucket: int = 100) -> list[CurveRow]:
    """Fixed-width episode buckets; the last bucket may be partial.

    NaN losses (episodes without a train step) are skipped in the loss mean.
    """
    if bucket < 1:
        raise ValueError("bucket width must be positive")
    out = []
    for b, start in enumerate(range(0, len(rows), bucket)):
        chunk = rows[start : start + bucket]
        losses = [r.loss for r in chunk if not math.isnan(r.loss)]
        out.append(
            CurveRow(
                bucket=b,
                episode_start=chunk[0].episode,
                episode_end=chunk[-1].episode,
                mean_reward=float(np.mean([r.total_reward for r in chunk])),
                mean_loss=float(np.mean(losses)) if losses else float("nan"),
            )
        )
    return out


def export_curves(metrics_path, out_path, bucket: int = 100) -> list[CurveRow]:
    curves = bucket_means(read_metrics(metrics_path), bucket)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVES_HEADER)
        for c in curves:
            w.writerow([c.bucket, c.episode_start, c.episode_end, _fmt(c.mean_reward), _fmt(c.mean_loss)])
    return curves


def read_curves(path) -> list[CurveRow]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CURVES_HEADER:
            raise ParseError("bad curves header", line=1)
        for lineno, rec in enumerate(reader, start=2):
            try:
                out.append(CurveRow(int(rec[0]), int(rec[1]), int(rec[2]), float(rec[3]), float(rec[4])))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return out
