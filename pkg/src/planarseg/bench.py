"""Timing harness for the clustering variants.

Measures per-iteration shift cost and whole-call cost for the anchor
variant and the per-pixel baseline on identical synthetic inputs, so the
linear-vs-quadratic scaling and the speed ratio between them can be read
off one CSV.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .core import EmbeddingMap, ImageGrid, PlanarMask
from .clustering import (
    MeanShiftConfig,
    _gaussian_shift,
    cluster,
    filter_low_density,
    init_anchors,
    vanilla_mean_shift,
)

__all__ = [
    "BenchResult",
    "bench_clustering",
    "fit_loglog_slope",
    "bench_results_to_csv",
    "DEFAULT_SIZES",
]

DEFAULT_SIZES = (4096, 8192, 16384, 32768, 49152)
_MIXTURE_COMPONENTS = 6


@dataclass(frozen=True)
class BenchResult:
    """One timed configuration of one variant."""

    variant: str
    n: int
    k: int
    d: int
    iterations: int
    workers: int
    iter_ms: float
    total_ms: float

    def __post_init__(self) -> None:
        if self.iter_ms <= 0.0 or self.total_ms <= 0.0:
            raise ValueError("times must be > 0")

    @property
    def throughput(self) -> float:
        """Full clustering calls per second."""
        return 1000.0 / self.total_ms


def _mixture_input(
    n: int, d: int, rng_seed: int
) -> Tuple[EmbeddingMap, PlanarMask]:
    """Synthetic embedding blob mixture on a 1 x n grid, fully planar."""
    rng = np.random.default_rng(rng_seed)
    centers = rng.uniform(1.0, 9.0, size=(_MIXTURE_COMPONENTS, d))
    while True:
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        dist[np.diag_indices_from(dist)] = np.inf
        bad = np.nonzero(dist.min(axis=1) < 2.0)[0]
        if bad.size == 0:
            break
        centers[bad] = rng.uniform(1.0, 9.0, size=(bad.size, d))
    which = rng.integers(0, _MIXTURE_COMPONENTS, size=n)
    values = centers[which] + rng.normal(0.0, 0.15, size=(n, d))
    grid = ImageGrid(1, n)
    return EmbeddingMap(grid, values), PlanarMask(grid, np.ones(n, dtype=bool))


def _median_time(fn, repeats: int) -> float:
    """Median wall time of ``fn`` over ``repeats`` runs after one warm-up."""
    fn()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    times.sort()
    return times[len(times) // 2]


def bench_clustering(
    sizes: Sequence[int] = DEFAULT_SIZES,
    config_grid: Sequence[Tuple[int, int]] = ((10, 10),),
    repeats: int = 3,
    workers: int = 1,
    vanilla_iters: int = 1,
    rng_seed: int = 0,
) -> List[BenchResult]:
    """Time both variants over problem sizes and (k, T) settings.

    ``iter_ms`` times a single shift pass (anchors for the fast variant,
    every point for the baseline); ``total_ms`` times the whole call.
    The baseline runs ``vanilla_iters`` iterations in its total so large
    sizes stay affordable.
    """
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    results: List[BenchResult] = []
    for n in sizes:
        for k, t_iters in config_grid:
            emb, mask = _mixture_input(n, 2, rng_seed)
            config = MeanShiftConfig(
                anchors_per_dim=k, dim=2, bandwidth=0.5, iterations=t_iters
            )
            state = filter_low_density(init_anchors(emb, mask, config), config)
            anchor_pos = state.positions
            values = emb.values

            iter_fast = _median_time(
                lambda: _gaussian_shift(
                    anchor_pos, values, config.bandwidth, workers=workers
                ),
                repeats,
            )
            total_fast = _median_time(
                lambda: cluster(emb, mask, config, workers=workers), repeats
            )
            results.append(
                BenchResult(
                    variant="fast",
                    n=n,
                    k=k,
                    d=2,
                    iterations=t_iters,
                    workers=workers,
                    iter_ms=iter_fast * 1000.0,
                    total_ms=total_fast * 1000.0,
                )
            )

            iter_vanilla = _median_time(
                lambda: _gaussian_shift(
                    values, values, config.bandwidth, workers=workers
                ),
                repeats,
            )
            total_vanilla = _median_time(
                lambda: vanilla_mean_shift(
                    emb,
                    mask,
                    bandwidth=config.bandwidth,
                    max_iters=vanilla_iters,
                    tol=0.0,
                    workers=workers,
                ),
                repeats,
            )
            results.append(
                BenchResult(
                    variant="vanilla",
                    n=n,
                    k=k,
                    d=2,
                    iterations=vanilla_iters,
                    workers=workers,
                    iter_ms=iter_vanilla * 1000.0,
                    total_ms=total_vanilla * 1000.0,
                )
            )
    return results


def fit_loglog_slope(
    sizes: Sequence[int], times: Sequence[float]
) -> float:
    """Least-squares slope of log(time) against log(size)."""
    if len(sizes) != len(times) or len(sizes) < 2:
        raise ValueError("need matching sizes and times, at least two points")
    lx = np.log(np.asarray(sizes, dtype=np.float64))
    ly = np.log(np.asarray(times, dtype=np.float64))
    lx -= lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))


def bench_results_to_csv(results: Sequence[BenchResult]) -> str:
    """Serialize results with the canonical column order."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["variant", "N", "k", "d", "T", "workers", "iter_ms", "total_ms"]
    )
    for r in results:
        writer.writerow(
            [
                r.variant,
                r.n,
                r.k,
                r.d,
                r.iterations,
                r.workers,
                f"{r.iter_ms:.3f}",
                f"{r.total_ms:.3f}",
            ]
        )
    return buffer.getvalue()
