"""Evaluation protocol for key-step assignments.

Predicted cluster ids carry no meaning on their own, so evaluation first
finds the best one-to-one relabeling against the ground truth (Hungarian
matching over frame overlap, background included). Scores then come in two
flavors: the per-key-step protocol computes precision/recall/F1/IoU for each
key-step separately and averages the K results unweighted, while the legacy
protocol pools frames across key-steps first. The pooled variant rewards
degenerate single-cluster predictions; the per-key-step mean does not, which
is the point of reporting both. MoF (mean over frames) counts background.

Empty-set convention used throughout: a ratio with an empty denominator is 1
when the other set is empty too, otherwise 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import AnnotationError, KeyStepAssignment, TaskAnnotation

__all__ = [
    "StepScores",
    "MetricsReport",
    "DatasetStats",
    "hungarian",
    "match_labels",
    "per_keystep_metrics",
    "legacy_metrics",
    "mof",
    "full_report",
    "dataset_stats",
    "format_report",
    "format_stats",
]


@dataclass(frozen=True)
class StepScores:
    precision: float
    recall: float
    f1: float
    iou: float

    def __post_init__(self):
        for name in ("precision", "recall", "f1", "iou"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class MetricsReport:
    mapping: dict[int, int]
    per_keystep: dict[int, StepScores]
    mean_precision: float
    mean_recall: float
    mean_f1: float
    mean_iou: float
    legacy_precision: float
    legacy_recall: float
    legacy_f1: float
    legacy_iou: float
    mof: float

    def __post_init__(self):
        for name in (
            "mean_precision",
            "mean_recall",
            "mean_f1",
            "mean_iou",
            "legacy_precision",
            "legacy_recall",
            "legacy_f1",
            "legacy_iou",
            "mof",
        ):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class DatasetStats:
    foreground_ratio: float
    missing_keysteps: float
    repeated_keysteps: float

    def __post_init__(self):
        for name in ("foreground_ratio", "missing_keysteps", "repeated_keysteps"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


# ---------------------------------------------------------------------------
# Assignment matching
# ---------------------------------------------------------------------------


def hungarian(cost: np.ndarray) -> tuple[dict[int, int], float]:
    """Min-cost perfect matching on the zero-padded square of ``cost``.

    Deterministic: among all optimal assignments, returns the
    lexicographically smallest (row 0's column first, then row 1's, ...).
    The refinement fixes one row at a time to the smallest column that keeps
    the remaining subproblem at the global optimum.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost must be a non-empty 2-D matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost entries must be finite")
    n = max(cost.shape)
    padded = np.zeros((n, n))
    padded[: cost.shape[0], : cost.shape[1]] = cost

    def optimum(matrix: np.ndarray) -> float:
        if matrix.size == 0:
            return 0.0
        rows, cols = linear_sum_assignment(matrix)
        return float(matrix[rows, cols].sum())

    total = optimum(padded)
    assignment: dict[int, int] = {}
    free_cols = list(range(n))
    fixed = 0.0
    for row in range(n):
        rest_rows = np.arange(row + 1, n)
        for col in free_cols:
            rest_cols = [c for c in free_cols if c != col]
            candidate = fixed + padded[row, col] + optimum(padded[np.ix_(rest_rows, rest_cols)])
            if candidate <= total + 1e-9:
                assignment[row] = col
                fixed += padded[row, col]
                free_cols = rest_cols
                break
    return assignment, total


def _check_compatible(pred: KeyStepAssignment, gt: KeyStepAssignment) -> None:
    if pred.K != gt.K:
        raise ValueError(f"K mismatch: pred {pred.K} vs gt {gt.K}")
    if set(pred.per_video) != set(gt.per_video):
        raise ValueError("pred and gt cover different videos")
    for video_id in gt.per_video:
        if len(pred.per_video[video_id]) != len(gt.per_video[video_id]):
            raise ValueError(f"frame count mismatch for video {video_id!r}")


def match_labels(pred: KeyStepAssignment, gt: KeyStepAssignment) -> dict[int, int]:
    """Best predicted-to-true label bijection over {0..K}, background included.

    Maximizes total frame overlap pooled over all videos of the task by
    minimizing its negation with ``hungarian``.
    """
    _check_compatible(pred, gt)
    K = gt.K
    overlap = np.zeros((K + 1, K + 1))
    for video_id in gt.per_video:
        p = pred.per_video[video_id]
        g = gt.per_video[video_id]
        np.add.at(overlap, (p, g), 1.0)
    assignment, _ = hungarian(-overlap)
    return assignment


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------


def _safe_ratio(numerator: int, denominator: int, other_size: int) -> float:
    if denominator == 0:
        return 1.0 if other_size == 0 else 0.0
    return numerator / denominator


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _mapped_frames(
    pred: KeyStepAssignment, gt: KeyStepAssignment, mapping: dict[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    _check_compatible(pred, gt)
    if sorted(mapping) != list(range(gt.K + 1)) or sorted(mapping.values()) != list(
        range(gt.K + 1)
    ):
        raise ValueError("mapping must be a bijection on labels 0..K")
    lookup = np.empty(gt.K + 1, dtype=np.int64)
    for src, dst in mapping.items():
        lookup[src] = dst
    mapped = np.concatenate([lookup[pred.per_video[v]] for v in gt.per_video])
    truth = np.concatenate([gt.per_video[v] for v in gt.per_video])
    return mapped, truth


def per_keystep_metrics(
    pred: KeyStepAssignment, gt: KeyStepAssignment, mapping: dict[int, int]
) -> tuple[dict[int, StepScores], StepScores]:
    """Score each key-step separately, then average unweighted over all K.

    Background (label 0) is excluded from both the per-step table and the
    means. Returns the per-step table and the means packed as a StepScores.
    """
    mapped, truth = _mapped_frames(pred, gt, mapping)
    per_step: dict[int, StepScores] = {}
    for label in range(1, gt.K + 1):
        in_pred = mapped == label
        in_gt = truth == label
        inter = int((in_pred & in_gt).sum())
        union = int((in_pred | in_gt).sum())
        n_pred = int(in_pred.sum())
        n_gt = int(in_gt.sum())
        precision = _safe_ratio(inter, n_pred, n_gt)
        recall = _safe_ratio(inter, n_gt, n_pred)
        iou = 1.0 if union == 0 else inter / union
        per_step[label] = StepScores(
            precision=precision, recall=recall, f1=_f1(precision, recall), iou=iou
        )
    means = StepScores(
        precision=float(np.mean([s.precision for s in per_step.values()])),
        recall=float(np.mean([s.recall for s in per_step.values()])),
        f1=float(np.mean([s.f1 for s in per_step.values()])),
        iou=float(np.mean([s.iou for s in per_step.values()])),
    )
    return per_step, means


def legacy_metrics(
    pred: KeyStepAssignment, gt: KeyStepAssignment, mapping: dict[int, int]
) -> StepScores:
    """Frame-pooled scores over all key-steps (background excluded).

    Recall divides the pooled intersection by the total ground-truth
    key-step frames and precision by the total predicted key-step frames;
    IoU pools intersections over unions.
    """
    mapped, truth = _mapped_frames(pred, gt, mapping)
    inter = union = n_pred = n_gt = 0
    for label in range(1, gt.K + 1):
        in_pred = mapped == label
        in_gt = truth == label
        inter += int((in_pred & in_gt).sum())
        union += int((in_pred | in_gt).sum())
        n_pred += int(in_pred.sum())
        n_gt += int(in_gt.sum())
    precision = _safe_ratio(inter, n_pred, n_gt)
    recall = _safe_ratio(inter, n_gt, n_pred)
    iou = 1.0 if union == 0 else inter / union
    return StepScores(precision=precision, recall=recall, f1=_f1(precision, recall), iou=iou)


def mof(
    pred: KeyStepAssignment, gt: KeyStepAssignment, mapping: dict[int, int]
) -> float:
    """Fraction of all frames, background included, predicted correctly."""
    mapped, truth = _mapped_frames(pred, gt, mapping)
    return float((mapped == truth).mean())


def full_report(
    pred: KeyStepAssignment,
    gt: KeyStepAssignment,
    mapping: dict[int, int] | None = None,
) -> MetricsReport:
    """Match labels (unless a mapping is given) and compute every score."""
    if mapping is None:
        mapping = match_labels(pred, gt)
    per_step, means = per_keystep_metrics(pred, gt, mapping)
    legacy = legacy_metrics(pred, gt, mapping)
    return MetricsReport(
        mapping=mapping,
        per_keystep=per_step,
        mean_precision=means.precision,
        mean_recall=means.recall,
        mean_f1=means.f1,
        mean_iou=means.iou,
        legacy_precision=legacy.precision,
        legacy_recall=legacy.recall,
        legacy_f1=legacy.f1,
        legacy_iou=legacy.iou,
        mof=mof(pred, gt, mapping),
    )


# ---------------------------------------------------------------------------
# Dataset statistics
# ---------------------------------------------------------------------------


def dataset_stats(annotation: TaskAnnotation) -> DatasetStats:
    """Foreground ratio, missing-key-step rate, and repetition rate.

    With per-video key-step duration t_k, video duration t_v, unique label
    count u, and segment count g over N videos and K key-steps:
    F = mean of t_k/t_v, M = (K*N - sum u)/(K*N), R = (sum g - sum u)/sum g.
    """
    videos = sorted(annotation.per_video)
    if not videos:
        raise AnnotationError("annotation has no videos")
    ratios = []
    unique_total = 0
    segment_total = 0
    for video_id in videos:
        duration = annotation.video_duration(video_id)
        if duration == 0:
            raise AnnotationError(f"video {video_id!r} has zero duration")
        ratios.append(annotation.keystep_duration(video_id) / duration)
        unique_total += annotation.unique_labels(video_id)
        segment_total += annotation.segment_count(video_id)
    if segment_total == 0:
        raise AnnotationError("no key-step segments; repetition rate undefined")
    N = len(videos)
    K = annotation.K
    return DatasetStats(
        foreground_ratio=sum(ratios) / N,
        missing_keysteps=(K * N - unique_total) / (K * N),
        repeated_keysteps=(segment_total - unique_total) / segment_total,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_SUMMARY_FIELDS = (
    "legacy_f1",
    "legacy_iou",
    "legacy_precision",
    "legacy_recall",
    "mean_f1",
    "mean_iou",
    "mean_precision",
    "mean_recall",
    "mof",
)


def format_report(report: MetricsReport) -> str:
    """CSV: one per_keystep row per label ascending, then alphabetical summaries."""
    lines = []
    for label in sorted(report.per_keystep):
        s = report.per_keystep[label]
        lines.append(
            f"per_keystep,{label},{s.precision:.6f},{s.recall:.6f},{s.f1:.6f},{s.iou:.6f}"
        )
    for name in _SUMMARY_FIELDS:
        lines.append(f"summary,{name},{getattr(report, name):.6f}")
    return "\n".join(lines) + "\n"


def format_stats(stats: DatasetStats) -> str:
    """CSV of the three dataset statistics, 6 decimal places."""
    return (
        "stat,value\n"
        f"foreground_ratio,{stats.foreground_ratio:.6f}\n"
        f"missing_keysteps,{stats.missing_keysteps:.6f}\n"
        f"repeated_keysteps,{stats.repeated_keysteps:.6f}\n"
    )
