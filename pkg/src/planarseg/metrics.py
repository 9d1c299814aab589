"""Segmentation and depth evaluation.

Partition metrics (Rand index, variation of information, segmentation
covering) come from an O(C_a * C_b) contingency table. Recall curves
match predicted instances to reference instances by IOU > 0.5 and then
apply a per-threshold geometric test (mean depth difference or normal
angle). Depth metrics follow the standard monocular evaluation set.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .core import CameraIntrinsics, DepthMap, InstanceSegmentation
from .geometry import Plane, depth_from_plane, normal_angle

__all__ = [
    "RecallCurve",
    "DepthMetrics",
    "DEPTH_THRESHOLDS",
    "NORMAL_THRESHOLDS",
    "iou_matrix",
    "recall_depth",
    "recall_normal",
    "rand_index",
    "variation_of_information",
    "segmentation_covering",
    "depth_metrics",
    "plane_count_histogram",
    "recall_curve_to_csv",
    "metrics_to_json",
]

DEPTH_THRESHOLDS = tuple(np.arange(1, 13) * 0.05)
NORMAL_THRESHOLDS = tuple(np.arange(0, 13) * 2.5)


@dataclass(frozen=True)
class RecallCurve:
    """Plane and pixel recall percentages over ascending thresholds."""

    thresholds: np.ndarray
    plane_recall: np.ndarray
    pixel_recall: np.ndarray

    def __post_init__(self) -> None:
        thresholds = np.array(self.thresholds, dtype=np.float64, copy=True)
        plane = np.array(self.plane_recall, dtype=np.float64, copy=True)
        pixel = np.array(self.pixel_recall, dtype=np.float64, copy=True)
        if not (thresholds.shape == plane.shape == pixel.shape):
            raise ValueError("curve arrays must share one shape")
        if thresholds.ndim != 1 or thresholds.size < 1:
            raise ValueError("need at least one threshold")
        if np.any(np.diff(thresholds) <= 0.0):
            raise ValueError("thresholds must be strictly ascending")
        for name, arr in (("plane_recall", plane), ("pixel_recall", pixel)):
            if arr.min() < 0.0 or arr.max() > 100.0:
                raise ValueError(f"{name} must lie in [0, 100]")
            if np.any(np.diff(arr) < 0.0):
                raise ValueError(f"{name} must be non-decreasing in threshold")
        for arr in (thresholds, plane, pixel):
            arr.flags.writeable = False
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "plane_recall", plane)
        object.__setattr__(self, "pixel_recall", pixel)


@dataclass(frozen=True)
class DepthMetrics:
    """Standard depth errors and threshold accuracies (percent)."""

    rel: float
    rel_sqr: float
    log10: float
    rmse: float
    rmse_log: float
    acc_1: float
    acc_2: float
    acc_3: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _contingency(
    a: InstanceSegmentation, b: InstanceSegmentation
) -> np.ndarray:
    """Pixel counts per label pair, including label 0 in row/column 0."""
    if a.grid != b.grid:
        raise ValueError("segmentation grids must match")
    rows = a.n_instances + 1
    cols = b.n_instances + 1
    flat = a.labels * cols + b.labels
    return np.bincount(flat, minlength=rows * cols).reshape(rows, cols)


def iou_matrix(
    pred: InstanceSegmentation, gt: InstanceSegmentation
) -> np.ndarray:
    """Intersection-over-union per (pred, gt) instance pair, label 0 excluded."""
    table = _contingency(pred, gt)
    inter = table[1:, 1:].astype(np.float64)
    pred_sizes = table[1:, :].sum(axis=1, dtype=np.float64)
    gt_sizes = table[:, 1:].sum(axis=0, dtype=np.float64)
    union = pred_sizes[:, None] + gt_sizes[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def _match_instances(
    pred: InstanceSegmentation, gt: InstanceSegmentation
) -> List[Tuple[int, int]]:
    """(gt_id, pred_id) pairs with IOU > 0.5; at most one pred per gt."""
    iou = iou_matrix(pred, gt)
    pairs = []
    for g in range(gt.n_instances):
        winners = np.nonzero(iou[:, g] > 0.5)[0]
        if winners.shape[0]:
            pairs.append((g + 1, int(winners[0]) + 1))
    return pairs


def _recall_curve(
    pred: InstanceSegmentation,
    gt: InstanceSegmentation,
    scores: Mapping[int, float],
    matched_pred: Mapping[int, int],
    thresholds: Sequence[float],
) -> RecallCurve:
    """Fold per-gt-instance scores into plane and pixel recall curves.

    ``scores[g]`` is the geometric error of matched gt instance g; gt
    instances missing from ``scores`` never count as correct.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    n_gt = gt.n_instances
    gt_sizes = np.bincount(gt.labels, minlength=n_gt + 1)[1:]
    total_planar = int(gt_sizes.sum())
    plane = np.zeros(thresholds.size)
    pixel = np.zeros(thresholds.size)
    overlap = {
        g: int(((gt.labels == g) & (pred.labels == p)).sum())
        for g, p in matched_pred.items()
    }
    for t_idx, t in enumerate(thresholds):
        correct = [g for g, err in scores.items() if err <= t]
        plane[t_idx] = 100.0 * len(correct) / n_gt if n_gt else 0.0
        if total_planar:
            covered = sum(overlap[g] for g in correct)
            pixel[t_idx] = 100.0 * covered / total_planar
    return RecallCurve(thresholds, plane, pixel)


def recall_depth(
    pred_seg: InstanceSegmentation,
    pred_planes: Sequence[Plane],
    gt_seg: InstanceSegmentation,
    gt_depth: DepthMap,
    intr: CameraIntrinsics,
    thresholds: Sequence[float] = DEPTH_THRESHOLDS,
) -> RecallCurve:
    """Recall vs depth-difference threshold.

    A reference instance is correct at threshold t when a predicted
    instance overlaps it with IOU > 0.5 and the mean absolute difference
    between the predicted plane's rendered depth and the reference depth
    over their valid overlap is at most t.
    """
    if pred_seg.grid != gt_seg.grid or gt_seg.grid != gt_depth.grid:
        raise ValueError("prediction, reference, and depth grids must match")
    if len(pred_planes) != pred_seg.n_instances:
        raise ValueError("need one plane per predicted instance")
    matched = dict(_match_instances(pred_seg, gt_seg))
    scores: Dict[int, float] = {}
    for g, p in matched.items():
        rendered = depth_from_plane(pred_planes[p - 1], pred_seg.grid, intr)
        region = (
            (gt_seg.labels == g)
            & (pred_seg.labels == p)
            & gt_depth.validity
            & rendered.validity
        )
        if not region.any():
            continue
        scores[g] = float(
            np.mean(np.abs(rendered.depth[region] - gt_depth.depth[region]))
        )
    return _recall_curve(pred_seg, gt_seg, scores, matched, thresholds)


def recall_normal(
    pred_seg: InstanceSegmentation,
    pred_planes: Sequence[Plane],
    gt_seg: InstanceSegmentation,
    gt_planes: Sequence[Plane],
    thresholds: Sequence[float] = NORMAL_THRESHOLDS,
) -> RecallCurve:
    """Recall vs surface-normal angle threshold (degrees)."""
    if pred_seg.grid != gt_seg.grid:
        raise ValueError("prediction and reference grids must match")
    if len(pred_planes) != pred_seg.n_instances:
        raise ValueError("need one plane per predicted instance")
    if len(gt_planes) != gt_seg.n_instances:
        raise ValueError("need one plane per reference instance")
    matched = dict(_match_instances(pred_seg, gt_seg))
    scores = {
        g: normal_angle(pred_planes[p - 1], gt_planes[g - 1])
        for g, p in matched.items()
    }
    return _recall_curve(pred_seg, gt_seg, scores, matched, thresholds)


def _restricted(
    a: InstanceSegmentation, b: InstanceSegmentation, exclude_unlabeled: bool
) -> np.ndarray:
    """Contingency table, optionally restricted to pixels labeled in ``a``."""
    if exclude_unlabeled:
        keep = a.labels > 0
        grid_n = int(keep.sum())
        if grid_n == 0:
            raise ValueError("no labeled pixels to compare")
        cols = b.n_instances + 1
        flat = a.labels[keep] * cols + b.labels[keep]
        return np.bincount(
            flat, minlength=(a.n_instances + 1) * cols
        ).reshape(a.n_instances + 1, cols)
    return _contingency(a, b)


def rand_index(
    a: InstanceSegmentation,
    b: InstanceSegmentation,
    exclude_unlabeled: bool = False,
) -> float:
    """Fraction of pixel pairs on which the two partitions agree.

    Label 0 participates as one extra segment unless
    ``exclude_unlabeled``; then only pixels labeled in ``a`` count.
    """
    table = _restricted(a, b, exclude_unlabeled).astype(np.float64)
    n = table.sum()
    if n < 2:
        return 1.0
    pairs = n * (n - 1.0) / 2.0
    same_both = (table * (table - 1.0) / 2.0).sum()
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    same_a = (rows * (rows - 1.0) / 2.0).sum()
    same_b = (cols * (cols - 1.0) / 2.0).sum()
    return float((pairs + 2.0 * same_both - same_a - same_b) / pairs)


def variation_of_information(
    a: InstanceSegmentation,
    b: InstanceSegmentation,
    exclude_unlabeled: bool = False,
) -> float:
    """Summed conditional entropies H(a|b) + H(b|a) in nats."""
    table = _restricted(a, b, exclude_unlabeled).astype(np.float64)
    n = table.sum()
    if n == 0:
        raise ValueError("no pixels to compare")
    p = table / n
    rows = p.sum(axis=1)
    cols = p.sum(axis=0)
    nz = p > 0.0
    h_a = -float(np.sum(rows[rows > 0.0] * np.log(rows[rows > 0.0])))
    h_b = -float(np.sum(cols[cols > 0.0] * np.log(cols[cols > 0.0])))
    mutual = float(
        np.sum(
            p[nz]
            * np.log(p[nz] / (rows[:, None] * cols[None, :])[nz])
        )
    )
    return max(h_a + h_b - 2.0 * mutual, 0.0)


def segmentation_covering(
    gt: InstanceSegmentation,
    pred: InstanceSegmentation,
    exclude_unlabeled: bool = False,
) -> float:
    """Size-weighted best-IOU cover of reference segments by prediction."""
    table = _restricted(gt, pred, exclude_unlabeled).astype(np.float64)
    n = table.sum()
    if n == 0:
        raise ValueError("no pixels to compare")
    gt_sizes = table.sum(axis=1)
    pred_sizes = table.sum(axis=0)
    start = 1 if exclude_unlabeled else 0
    total = 0.0
    denom = gt_sizes[start:].sum()
    for g in range(start, table.shape[0]):
        if gt_sizes[g] == 0.0:
            continue
        union = gt_sizes[g] + pred_sizes[start:] - table[g, start:]
        iou = np.zeros_like(union)
        np.divide(table[g, start:], union, out=iou, where=union > 0.0)
        total += gt_sizes[g] * float(iou.max()) if iou.size else 0.0
    return float(total / denom) if denom else 1.0


def depth_metrics(pred: DepthMap, gt: DepthMap) -> DepthMetrics:
    """Error statistics over jointly valid pixels."""
    if pred.grid != gt.grid:
        raise ValueError("depth grids must match")
    joint = pred.validity & gt.validity
    if not joint.any():
        raise ValueError("no jointly valid pixels")
    p = pred.depth[joint]
    g = gt.depth[joint]
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        rel=float(np.mean(np.abs(diff) / g)),
        rel_sqr=float(np.mean(diff**2 / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        acc_1=float(100.0 * np.mean(ratio < 1.25)),
        acc_2=float(100.0 * np.mean(ratio < 1.25**2)),
        acc_3=float(100.0 * np.mean(ratio < 1.25**3)),
    )


def plane_count_histogram(
    segmentations: Sequence[InstanceSegmentation],
) -> Dict[int, int]:
    """Images per distinct-instance count (label 0 excluded)."""
    hist: Dict[int, int] = {}
    for seg in segmentations:
        count = int(np.unique(seg.labels[seg.labels > 0]).size)
        hist[count] = hist.get(count, 0) + 1
    return hist


def recall_curve_to_csv(curve: RecallCurve) -> str:
    """Serialize a curve as CSV with a threshold,plane,pixel header."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["threshold", "plane_recall", "pixel_recall"])
    for t, plane, pixel in zip(
        curve.thresholds, curve.plane_recall, curve.pixel_recall
    ):
        writer.writerow([f"{t:g}", f"{plane:.6f}", f"{pixel:.6f}"])
    return buffer.getvalue()


def metrics_to_json(record: Mapping[str, object]) -> str:
    """Serialize a metric record as deterministic, indented JSON."""
    return json.dumps(record, indent=2, sort_keys=True)
