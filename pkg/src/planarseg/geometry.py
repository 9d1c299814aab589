"""Plane parameterization, depth geometry, pooling, and plane fitting.

A plane is stored as a single 3-vector ``n`` such that on-plane points
satisfy n . Q = 1; the unit normal is n / |n| and the camera-to-plane
offset is 1 / |n|. This keeps every per-pixel and per-instance parameter
a plain 3-vector.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    CameraIntrinsics,
    DepthMap,
    ImageGrid,
    InstanceSegmentation,
    PixelPlaneParams,
    PlaneInstanceParams,
    PointMap,
    SoftAssignment,
)

__all__ = [
    "Plane",
    "EPS_PLANE",
    "EPS_RAY",
    "backproject",
    "depth_from_plane",
    "render_segment_depth",
    "pool_instance_params",
    "one_hot_assignment",
    "fit_plane_lsq",
    "fit_planes_ransac_merge",
    "normal_angle",
]

EPS_PLANE = 1e-6
EPS_RAY = 1e-8
RANSAC_ITERATIONS = 200


@dataclass(frozen=True)
class Plane:
    """Plane encoded as the 3-vector n with n . Q = 1 for on-plane Q."""

    n: np.ndarray

    def __post_init__(self) -> None:
        n = np.array(self.n, dtype=np.float64, copy=True).reshape(3)
        if not np.all(np.isfinite(n)):
            raise ValueError("plane vector must be finite")
        if np.linalg.norm(n) < EPS_PLANE:
            raise ValueError(f"plane vector norm below {EPS_PLANE}")
        n.flags.writeable = False
        object.__setattr__(self, "n", n)

    @property
    def unit_normal(self) -> np.ndarray:
        return self.n / np.linalg.norm(self.n)

    @property
    def offset(self) -> float:
        """Distance from the camera center to the plane."""
        return float(1.0 / np.linalg.norm(self.n))


def _ray_directions(grid: ImageGrid, intr: CameraIntrinsics) -> np.ndarray:
    """Unnormalized viewing rays (x/z, y/z, 1) per pixel, row-major."""
    v, u = np.divmod(np.arange(grid.n_pixels), grid.width)
    rays = np.empty((grid.n_pixels, 3), dtype=np.float64)
    rays[:, 0] = (u - intr.cx) / intr.fx
    rays[:, 1] = (v - intr.cy) / intr.fy
    rays[:, 2] = 1.0
    return rays


def backproject(depth: DepthMap, intr: CameraIntrinsics) -> PointMap:
    """Lift a depth map to camera-frame 3D points along pixel rays."""
    rays = _ray_directions(depth.grid, intr)
    points = rays * depth.depth[:, None]
    return PointMap(depth.grid, points, depth.validity)


def depth_from_plane(
    plane: Plane, grid: ImageGrid, intr: CameraIntrinsics
) -> DepthMap:
    """Render the depth of a plane at every pixel ray.

    Pixels whose ray is (near-)parallel to the plane or would intersect
    it behind the camera are marked invalid instead of producing huge or
    negative depths.
    """
    rays = _ray_directions(grid, intr)
    denom = rays @ plane.n
    valid = denom > EPS_RAY
    depth = np.zeros(grid.n_pixels, dtype=np.float64)
    depth[valid] = 1.0 / denom[valid]
    return DepthMap(grid, depth, valid)


def render_segment_depth(
    segments: InstanceSegmentation,
    planes: Sequence[Plane],
    intr: CameraIntrinsics,
) -> DepthMap:
    """Compose per-instance plane depths over a segmentation.

    Pixels labeled 0 or falling on an invalid ray are invalid.
    """
    if len(planes) != segments.n_instances:
        raise ValueError(
            f"need one plane per instance: {len(planes)} planes for "
            f"{segments.n_instances} instances"
        )
    depth = np.zeros(segments.grid.n_pixels, dtype=np.float64)
    valid = np.zeros(segments.grid.n_pixels, dtype=bool)
    for idx, plane in enumerate(planes, start=1):
        member = segments.labels == idx
        if not member.any():
            continue
        rendered = depth_from_plane(plane, segments.grid, intr)
        depth[member] = rendered.depth[member]
        valid[member] = rendered.validity[member]
    return DepthMap(segments.grid, depth, valid)


def pool_instance_params(
    pixel_params: PixelPlaneParams, assignment: SoftAssignment
) -> PlaneInstanceParams:
    """Assignment-weighted average of pixel parameters per cluster."""
    if pixel_params.grid != assignment.grid:
        raise ValueError("pixel params and assignment grids must match")
    weights = assignment.weights
    mass = weights.sum(axis=0)
    if np.any(mass <= 0.0):
        raise ValueError("empty instance")
    pooled = (weights.T @ pixel_params.params) / mass[:, None]
    return PlaneInstanceParams(pooled)


def one_hot_assignment(segments: InstanceSegmentation) -> SoftAssignment:
    """Indicator assignment putting each labeled pixel fully on its instance."""
    if segments.n_instances < 1:
        raise ValueError("segmentation has no instances")
    weights = np.zeros(
        (segments.grid.n_pixels, segments.n_instances), dtype=np.float64
    )
    labeled = segments.labels > 0
    weights[np.nonzero(labeled)[0], segments.labels[labeled] - 1] = 1.0
    return SoftAssignment(segments.grid, weights)


def fit_plane_lsq(
    points: PointMap, subset: np.ndarray
) -> Tuple[Plane, float]:
    """Least-squares plane through the valid points at ``subset`` indices.

    Solves for n minimizing |Q n - 1|^2 via SVD and returns the plane
    together with the residual RMS.
    """
    subset = np.asarray(subset, dtype=np.int64).ravel()
    keep = subset[points.validity[subset]]
    q = points.points[keep]
    if q.shape[0] < 3:
        raise ValueError("degenerate point set: need >= 3 valid points")
    if np.linalg.matrix_rank(q) < 3:
        raise ValueError("degenerate point set: points are collinear or coincident")
    n, _, _, _ = np.linalg.lstsq(q, np.ones(q.shape[0]), rcond=None)
    residual = q @ n - 1.0
    rms = float(np.sqrt(np.mean(residual**2)))
    return Plane(n), rms


def _point_plane_distance(q: np.ndarray, plane: Plane) -> np.ndarray:
    """Euclidean point-to-plane distances for rows of ``q``."""
    scale = np.linalg.norm(plane.n)
    return np.abs(q @ plane.n - 1.0) / scale


def _ransac_plane(
    q: np.ndarray, inlier_tol: float, rng: np.random.Generator
) -> Optional[Tuple[np.ndarray, int]]:
    """Best-consensus plane vector over fixed random 3-point samples."""
    m = q.shape[0]
    best_n: Optional[np.ndarray] = None
    best_count = 0
    for _ in range(RANSAC_ITERATIONS):
        pick = rng.choice(m, size=3, replace=False)
        sample = q[pick]
        if np.linalg.matrix_rank(sample) < 3:
            continue
        n = np.linalg.solve(
            sample.T @ sample + 1e-10 * np.eye(3), sample.sum(axis=0)
        )
        norm = np.linalg.norm(n)
        if norm < EPS_PLANE:
            continue
        dist = np.abs(q @ n - 1.0) / norm
        count = int((dist < inlier_tol).sum())
        if count > best_count:
            best_count = count
            best_n = n
    if best_n is None or best_count < 3:
        return None
    return best_n, best_count


def _segment_mean_distance(
    q_a: np.ndarray, plane_b: Plane, q_b: np.ndarray, plane_a: Plane
) -> float:
    """Symmetric mean distance between two fitted segments."""
    forward = float(np.mean(_point_plane_distance(q_a, plane_b)))
    backward = float(np.mean(_point_plane_distance(q_b, plane_a)))
    return 0.5 * (forward + backward)


def fit_planes_ransac_merge(
    points: PointMap,
    segments: InstanceSegmentation,
    inlier_tol: float = 0.01,
    merge_tol: float = 0.10,
    rng_seed: int = 0,
) -> Tuple[InstanceSegmentation, List[Plane]]:
    """Fit one plane per segment by RANSAC, then merge coplanar segments.

    Segments with fewer than 3 usable points (or no consensus) drop to
    label 0. Merging is greedy best-first: while some segment pair's
    symmetric mean point-to-plane distance is below ``merge_tol``, fuse
    the closest pair and refit on the union. Deterministic per seed.
    """
    if segments.n_instances < 1:
        raise ValueError("segmentation has no instances")
    rng = np.random.default_rng(rng_seed)
    groups: List[np.ndarray] = []
    planes: List[Plane] = []
    for idx in range(1, segments.n_instances + 1):
        members = np.nonzero((segments.labels == idx) & points.validity)[0]
        if members.shape[0] < 3:
            continue
        q = points.points[members]
        found = _ransac_plane(q, inlier_tol, rng)
        if found is None:
            continue
        n, _ = found
        inliers = members[_point_plane_distance(q, Plane(n)) < inlier_tol]
        if inliers.shape[0] < 3:
            continue
        try:
            plane, _ = fit_plane_lsq(points, inliers)
        except ValueError:
            continue
        groups.append(members)
        planes.append(plane)

    def pair_distance(i: int, j: int) -> float:
        return _segment_mean_distance(
            points.points[groups[i]], planes[j], points.points[groups[j]], planes[i]
        )

    alive = list(range(len(groups)))
    heap: List[Tuple[float, int, int]] = []
    for pos, i in enumerate(alive):
        for j in alive[pos + 1 :]:
            score = pair_distance(i, j)
            if score < merge_tol:
                heapq.heappush(heap, (score, i, j))
    active = set(alive)
    while heap:
        _, i, j = heapq.heappop(heap)
        if i not in active or j not in active:
            continue
        union = np.concatenate([groups[i], groups[j]])
        plane, _ = fit_plane_lsq(points, union[points.validity[union]])
        groups.append(union)
        planes.append(plane)
        new_idx = len(groups) - 1
        active.discard(i)
        active.discard(j)
        for k in sorted(active):
            fresh = pair_distance(k, new_idx)
            if fresh < merge_tol:
                heapq.heappush(heap, (fresh, min(k, new_idx), max(k, new_idx)))
        active.add(new_idx)

    survivors = sorted(active, key=lambda i: int(groups[i].min()))
    labels = np.zeros(segments.grid.n_pixels, dtype=np.int64)
    out_planes: List[Plane] = []
    for new_id, i in enumerate(survivors, start=1):
        labels[groups[i]] = new_id
        out_planes.append(planes[i])
    seg = InstanceSegmentation(segments.grid, labels, len(out_planes))
    return seg, out_planes


def normal_angle(a: Plane, b: Plane) -> float:
    """Angle between plane normals in degrees, in [0, 180].

    atan2 of the cross/dot pair stays accurate near 0 and 180 where
    arccos loses precision, and is exactly 0 for identical normals.
    """
    u, v = a.unit_normal, b.unit_normal
    sin = float(np.linalg.norm(np.cross(u, v)))
    cos = float(u @ v)
    return float(np.degrees(np.arctan2(sin, cos)))
