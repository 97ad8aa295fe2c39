"""Segmentation metrics: frame accuracy, segmental edit score, F1@k and their average.

All scores are percentages in [0, 100].
"""
from __future__ import annotations

import csv
import io
from typing import NamedTuple, Sequence

import numpy as np

OVERLAPS = (0.10, 0.25, 0.50)
CSV_FIELDS = ("video_id", "acc", "edit", "f1_10", "f1_25", "f1_50", "avg")


class Segment(NamedTuple):
    label: int
    start: int
    end: int  # exclusive


def to_segments(y: Sequence[int]) -> list[Segment]:
    y = np.asarray(y)
    if y.size == 0:
        return []
    change = np.flatnonzero(y[1:] != y[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [y.size]])
    return [Segment(int(y[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def _check_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction length {pred.shape} differs from ground truth {gt.shape}")
    return pred, gt


def _drop(segments: list[Segment], background: int | None) -> list[Segment]:
    if background is None:
        return segments
    return [s for s in segments if s.label != background]


def frame_accuracy(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    if pred.size == 0:
        return 0.0
    return 100.0 * float(np.mean(pred == gt))


def background_accuracy(pred, gt, background: int) -> float:
    """Accuracy over ground-truth background frames only."""
    pred, gt = _check_pair(pred, gt)
    mask = gt == background
    if not mask.any():
        return 0.0
    return 100.0 * float(np.mean(pred[mask] == gt[mask]))


def levenshtein(a: Sequence, b: Sequence) -> int:
    row = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        prev, row[0] = row[0], i
        for j, cb in enumerate(b, 1):
            prev, row[j] = row[j], min(row[j] + 1, row[j - 1] + 1, prev + (ca != cb))
    return row[-1]


def edit_score(pred, gt, background: int | None = None) -> float:
    pred, gt = _check_pair(pred, gt)
    p = [s.label for s in _drop(to_segments(pred), background)]
    g = [s.label for s in _drop(to_segments(gt), background)]
    longest = max(len(p), len(g))
    if longest == 0:
        return 100.0
    score = 100.0 * (1.0 - levenshtein(p, g) / longest)
    return min(100.0, max(0.0, score))


def segment_counts(pred, gt, overlap: float, background: int | None = None) -> tuple[int, int, int]:
    """``(tp, fp, fn)`` under greedy one-to-one matching at IoU >= ``overlap``."""
    pred, gt = _check_pair(pred, gt)
    p_segs = _drop(to_segments(pred), background)
    g_segs = _drop(to_segments(gt), background)
    used = [False] * len(g_segs)
    tp = fp = 0
    for ps in p_segs:
        best, best_iou = -1, -1.0
        for j, gs in enumerate(g_segs):
            if gs.label != ps.label:
                continue
            inter = min(ps.end, gs.end) - max(ps.start, gs.start)
            if inter <= 0:
                iou = 0.0
            else:
                iou = inter / (max(ps.end, gs.end) - min(ps.start, gs.start))
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= overlap and not used[best]:
            tp += 1
            used[best] = True
        else:
            fp += 1
    return tp, fp, len(g_segs) - sum(used)


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def f1_at_overlap(pred, gt, k: float, background: int | None = None) -> float:
    return f1_from_counts(*segment_counts(pred, gt, k, background))


def summarize(acc: float, edit: float, f1_10: float, f1_25: float, f1_50: float) -> float:
    return (acc + edit + f1_10 + f1_25 + f1_50) / 5.0


def evaluate(pred, gt, background: int | None = None) -> dict[str, float]:
    acc = frame_accuracy(pred, gt)
    edit = edit_score(pred, gt, background)
    f1s = [f1_at_overlap(pred, gt, k, background) for k in OVERLAPS]
    row = {"acc": acc, "edit": edit, "f1_10": f1s[0], "f1_25": f1s[1], "f1_50": f1s[2]}
    row["avg"] = summarize(acc, edit, *f1s)
    if background is not None:
        row["acc_bg"] = background_accuracy(pred, gt, background)
    return row


def mean_report(rows: list[dict[str, float]]) -> dict[str, float]:
    keys = [k for k in rows[0] if k != "video_id"] if rows else []
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def report_csv(rows: list[dict]) -> str:
    extra = [k for k in (rows[0] if rows else {}) if k not in CSV_FIELDS]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(CSV_FIELDS) + extra)
    for r in rows:
        writer.writerow([r["video_id"]] + [f"{r[k]:.4f}" for k in CSV_FIELDS[1:] + tuple(extra)])
    return buf.getvalue()


def report_table(rows: list[dict]) -> str:
    cols = [k for k in (rows[0] if rows else {}) if k != "video_id"]
    width = max([len("video_id")] + [len(str(r["video_id"])) for r in rows])
    lines = ["  ".join([f"{'video_id':<{width}}"] + [f"{c:>8}" for c in cols])]
    for r in rows:
        lines.append("  ".join([f"{str(r['video_id']):<{width}}"] + [f"{r[c]:8.2f}" for c in cols]))
    return "\n".join(lines)
