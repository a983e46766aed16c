"""Segmentation evaluation metrics: Dice, Hausdorff distance, reliability."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BothEmpty, DimensionMismatch, EmptyContour, EmptyList


@dataclass
class MetricsReport:
    dice: list = field(default_factory=list)
    hausdorff_mm: list = field(default_factory=list)
    reliability: list = field(default_factory=list)  # (threshold, R) pairs


def dice(a, m):
    """Overlap ``2|A & M| / (|A| + |M|)`` of two boolean masks."""
    a = np.asarray(a, dtype=bool)
    m = np.asarray(m, dtype=bool)
    if a.shape != m.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {m.shape}")
    total = int(a.sum()) + int(m.sum())
    if total == 0:
        raise BothEmpty("Dice is undefined for two empty masks")
    return 2.0 * int(np.logical_and(a, m).sum()) / total


def _as_points(points, name):
    p = np.asarray(points, dtype=float)
    if p.size == 0:
        raise EmptyContour(f"{name} contour is empty")
    return p.reshape(-1, 2)


def hausdorff(a, m, pixel_spacing=1.0):
    """Symmetric Hausdorff distance between two point sets, in pixel_spacing units.

    Squared distances are compared and a single square root is taken at the
    end; ``sqrt`` is monotone so the result equals the max-min over
    Euclidean distances.
    """
    pa = _as_points(getattr(a, "points", a), "first")
    pm = _as_points(getattr(m, "points", m), "second")
    if not pixel_spacing > 0:
        raise ValueError(f"pixel spacing must be > 0, got {pixel_spacing}")
    dx = pa[:, None, 0] - pm[None, :, 0]
    dy = pa[:, None, 1] - pm[None, :, 1]
    d2 = dx * dx + dy * dy
    worst = max(d2.min(axis=1).max(), d2.min(axis=0).max())
    return float(np.sqrt(worst)) * pixel_spacing


def reliability(dice_values, d):
    """Fraction of Dice values strictly greater than ``d``."""
    values = np.asarray(dice_values, dtype=float).ravel()
    if values.size == 0:
        raise EmptyList("reliability of an empty list")
    return int(np.count_nonzero(values > d)) / values.size


def default_thresholds(step=0.01):
    n = int(round(1.0 / step))
    return [i / n for i in range(n + 1)]


def reliability_curve(dice_values, thresholds=None):
    if thresholds is None:
        thresholds = default_thresholds()
    return [(float(d), reliability(dice_values, d)) for d in thresholds]


def write_frame_metrics(path, dice_values, hausdorff_values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "dice", "hausdorff_mm"])
        for k, (dc, hd) in enumerate(zip(dice_values, hausdorff_values)):
            writer.writerow([k, repr(float(dc)), repr(float(hd))])


def write_reliability(path, curve):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "reliability"])
        for d, rel in curve:
            writer.writerow([repr(float(d)), repr(float(rel))])
