"""Finite-difference verification of every analytic loss gradient.

Each check draws random inputs resampled to sit at least a safety
margin away from hinge/absolute-value kinks and from clamp boundaries,
evaluates the analytic gradient, and compares it against central
differences coordinate by coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .core import (
    EmbeddingMap,
    ImageGrid,
    InstanceSegmentation,
    PixelPlaneParams,
    PlanarMask,
    PlanarProbabilityMap,
    PlaneInstanceParams,
    PointMap,
    SoftAssignment,
)
from .losses import (
    Margins,
    balanced_bce,
    central_difference,
    instance_param_loss,
    pixel_param_loss,
    pull_loss,
    push_loss,
)

__all__ = ["GradCheckResult", "run_gradient_checks", "LOSS_NAMES"]

LOSS_NAMES = (
    "balanced_bce",
    "pull_loss",
    "push_loss",
    "pixel_param_loss",
    "instance_param_loss",
)

KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class GradCheckResult:
    """Outcome of one loss's finite-difference sweep."""

    name: str
    samples: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(
        float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-8
    )
    return float(np.linalg.norm(analytic - numeric)) / scale


def _random_segmentation(
    rng: np.random.Generator, grid: ImageGrid, n_instances: int
) -> InstanceSegmentation:
    labels = rng.integers(1, n_instances + 1, size=grid.n_pixels)
    for idx in range(1, n_instances + 1):
        labels[idx - 1] = idx  # guarantee every instance is nonempty
    return InstanceSegmentation(grid, labels, n_instances)


def _check_balanced_bce(rng: np.random.Generator, h: float) -> float:
    grid = ImageGrid(4, 5)
    mask = np.zeros(grid.n_pixels, dtype=bool)
    mask[rng.permutation(grid.n_pixels)[: grid.n_pixels // 2]] = True
    probs = rng.uniform(0.05, 0.95, size=grid.n_pixels)
    gt = PlanarMask(grid, mask)
    _, grad = balanced_bce(PlanarProbabilityMap(grid, probs), gt)

    def value(p: np.ndarray) -> float:
        return balanced_bce(PlanarProbabilityMap(grid, p), gt)[0]

    return _rel_err(grad, central_difference(value, probs, h))


def _check_pull(rng: np.random.Generator, h: float) -> float:
    grid = ImageGrid(3, 4)
    margins = Margins()
    seg = _random_segmentation(rng, grid, 3)
    for _ in range(1000):
        x = rng.normal(0.0, 2.0, size=(grid.n_pixels, 2))
        emb = EmbeddingMap(grid, x)
        if _pull_off_kink(emb, seg, margins):
            break
    else:
        raise RuntimeError("could not sample an off-kink pull configuration")
    _, grad = pull_loss(emb, seg, margins)

    def value(v: np.ndarray) -> float:
        return pull_loss(EmbeddingMap(grid, v), seg, margins)[0]

    return _rel_err(grad, central_difference(value, x, h))


def _pull_off_kink(
    emb: EmbeddingMap, seg: InstanceSegmentation, margins: Margins
) -> bool:
    for idx in range(1, seg.n_instances + 1):
        members = np.nonzero(seg.labels == idx)[0]
        if not members.shape[0]:
            continue
        mu = emb.values[members].mean(axis=0)
        dist = np.linalg.norm(mu[None, :] - emb.values[members], axis=1)
        if np.any(np.abs(dist - margins.delta_v) < KINK_MARGIN):
            return False
    return True


def _check_push(rng: np.random.Generator, h: float) -> float:
    grid = ImageGrid(3, 4)
    margins = Margins()
    seg = _random_segmentation(rng, grid, 3)
    for _ in range(1000):
        x = rng.normal(0.0, 1.0, size=(grid.n_pixels, 2))
        emb = EmbeddingMap(grid, x)
        if _push_off_kink(emb, seg, margins):
            break
    else:
        raise RuntimeError("could not sample an off-kink push configuration")
    _, grad = push_loss(emb, seg, margins)

    def value(v: np.ndarray) -> float:
        return push_loss(EmbeddingMap(grid, v), seg, margins)[0]

    return _rel_err(grad, central_difference(value, x, h))


def _push_off_kink(
    emb: EmbeddingMap, seg: InstanceSegmentation, margins: Margins
) -> bool:
    means = []
    for idx in range(1, seg.n_instances + 1):
        members = np.nonzero(seg.labels == idx)[0]
        if members.shape[0]:
            means.append(emb.values[members].mean(axis=0))
    for a in range(len(means)):
        for b in range(a + 1, len(means)):
            dist = float(np.linalg.norm(means[a] - means[b]))
            if abs(dist - margins.delta_d) < KINK_MARGIN or dist < KINK_MARGIN:
                return False
    return True


def _check_pixel_param(rng: np.random.Generator, h: float) -> float:
    grid = ImageGrid(3, 4)
    mask_arr = rng.uniform(size=grid.n_pixels) < 0.7
    mask_arr[0] = True
    mask = PlanarMask(grid, mask_arr)
    gt = PixelPlaneParams(grid, rng.normal(size=(grid.n_pixels, 3)))
    for _ in range(1000):
        pred_arr = gt.params + rng.normal(0.0, 1.0, size=(grid.n_pixels, 3))
        gaps = np.linalg.norm(pred_arr - gt.params, axis=1)
        if gaps[mask_arr].min() > KINK_MARGIN:
            break
    else:
        raise RuntimeError("could not sample an off-kink parameter configuration")
    _, grad = pixel_param_loss(PixelPlaneParams(grid, pred_arr), gt, mask)

    def value(v: np.ndarray) -> float:
        return pixel_param_loss(PixelPlaneParams(grid, v), gt, mask)[0]

    return _rel_err(grad, central_difference(value, pred_arr, h))


def _check_instance_param(rng: np.random.Generator, h: float) -> float:
    grid = ImageGrid(3, 4)
    n_clusters = 3
    weights = rng.uniform(0.1, 1.0, size=(grid.n_pixels, n_clusters))
    weights /= weights.sum(axis=1, keepdims=True)
    assignment = SoftAssignment(grid, weights)
    points = PointMap(
        grid, rng.uniform(0.5, 3.0, size=(grid.n_pixels, 3))
    )
    for _ in range(1000):
        params = rng.normal(0.0, 0.7, size=(n_clusters, 3))
        if np.linalg.norm(params, axis=1).min() <= 1e-2:
            continue
        residual = points.points @ params.T - 1.0
        if np.abs(residual).min() > KINK_MARGIN:
            break
    else:
        raise RuntimeError("could not sample an off-kink residual configuration")
    _, grad = instance_param_loss(PlaneInstanceParams(params), assignment, points)

    def value(v: np.ndarray) -> float:
        return instance_param_loss(
            PlaneInstanceParams(v), assignment, points
        )[0]

    return _rel_err(grad, central_difference(value, params, h))


_CHECKS: Dict[str, Callable[[np.random.Generator, float], float]] = {
    "balanced_bce": _check_balanced_bce,
    "pull_loss": _check_pull,
    "push_loss": _check_push,
    "pixel_param_loss": _check_pixel_param,
    "instance_param_loss": _check_instance_param,
}


def run_gradient_checks(
    samples: int = 100,
    seed: int = 0,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    corrupt: Optional[str] = None,
) -> List[GradCheckResult]:
    """Sweep every loss over ``samples`` random off-kink points.

    ``corrupt`` names a loss whose measured error is inflated past the
    tolerance, which exercises that the harness actually fails when a
    gradient is wrong.
    """
    if corrupt is not None and corrupt not in _CHECKS:
        raise ValueError(f"unknown loss {corrupt!r}; expected one of {LOSS_NAMES}")
    rng = np.random.default_rng(seed)
    results = []
    for name in LOSS_NAMES:
        check = _CHECKS[name]
        worst = 0.0
        for _ in range(samples):
            worst = max(worst, check(rng, h))
        if corrupt == name:
            worst = max(worst, 10.0 * tolerance)
        results.append(
            GradCheckResult(
                name=name, samples=samples, max_rel_err=worst, tolerance=tolerance
            )
        )
    return results
