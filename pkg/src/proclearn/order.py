"""Recover the logical order of key-steps from where they fall in time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import KeyStepAssignment

__all__ = ["KeyStepOrder", "keystep_order", "induced_sequence", "format_order"]


@dataclass(frozen=True)
class KeyStepOrder:
    """Labels sorted by ascending mean position; ties broken by label id."""

    order: list[int]
    mean_positions: dict[int, float]

    def __post_init__(self):
        if sorted(self.order) != sorted(self.mean_positions):
            raise ValueError("order must be a permutation of the labels present")
        if any(label < 1 for label in self.order):
            raise ValueError("order may only contain key-step labels (>= 1)")
        if any(not 0.0 <= p <= 1.0 for p in self.mean_positions.values()):
            raise ValueError("mean positions must lie in [0, 1]")
        key = [(self.mean_positions[l], l) for l in self.order]
        if key != sorted(key):
            raise ValueError("order must be sorted by (mean_position, label)")


def keystep_order(assignment: KeyStepAssignment) -> KeyStepOrder:
    """Order the labels that occur by their mean normalized frame position.

    Each labeled frame contributes i / (T - 1) for its video (0 when the
    video has a single frame); positions are averaged per label over all
    videos. Background never participates; an all-background assignment has
    nothing to order and is an error.
    """
    totals: dict[int, float] = {}
    counts: dict[int, int] = {}
    for labels in assignment.per_video.values():
        T = len(labels)
        if T == 0:
            continue
        positions = np.zeros(T) if T == 1 else np.arange(T) / (T - 1)
        for label in np.unique(labels):
            if label == 0:
                continue
            mask = labels == label
            totals[int(label)] = totals.get(int(label), 0.0) + positions[mask].sum()
            counts[int(label)] = counts.get(int(label), 0) + int(mask.sum())
    if not counts:
        raise ValueError("assignment contains no key-step frames to order")
    means = {label: totals[label] / counts[label] for label in counts}
    order = sorted(means, key=lambda label: (means[label], label))
    return KeyStepOrder(order=order, mean_positions=means)


def induced_sequence(assignment: KeyStepAssignment, video_id: str) -> list[int]:
    """One video's key-step sequence: background dropped, runs collapsed."""
    if video_id not in assignment.per_video:
        raise KeyError(f"unknown video {video_id!r}")
    sequence: list[int] = []
    for label in assignment.per_video[video_id]:
        if label == 0:
            continue
        if not sequence or sequence[-1] != label:
            sequence.append(int(label))
    return sequence


def format_order(order: KeyStepOrder) -> str:
    """Render as the single CSV line ``order,l1,l2,...``."""
    return ",".join(["order"] + [str(label) for label in order.order]) + "\n"
