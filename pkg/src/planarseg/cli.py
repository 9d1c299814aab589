"""Command-line front door.

Subcommands: ``cluster`` (embeddings + probabilities to labels and
assignment), ``eval`` (prediction vs reference metrics), ``synth``
(scene generation), ``gradcheck`` (finite-difference verification), and
``bench`` (timing sweep). Exit codes: 0 success, 1 computation error,
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bench import DEFAULT_SIZES, bench_clustering, bench_results_to_csv
from .clustering import MeanShiftConfig, cluster, hard_labels
from .core import (
    CameraIntrinsics,
    DepthMap,
    EmbeddingMap,
    ImageGrid,
    InstanceSegmentation,
    PlanarMask,
    PlanarProbabilityMap,
)
from .gradcheck import run_gradient_checks
from .geometry import (
    Plane,
    backproject,
    fit_plane_lsq,
    render_segment_depth,
)
from .metrics import (
    depth_metrics,
    metrics_to_json,
    plane_count_histogram,
    rand_index,
    recall_curve_to_csv,
    recall_depth,
    recall_normal,
    segmentation_covering,
    variation_of_information,
)
from .synth import (
    EmbeddingNoiseSpec,
    SceneSpec,
    corrupt_probability,
    generate_embeddings,
    generate_pixel_params,
    generate_scene,
)
from .tensor_io import TensorFormatError, read_tensor, write_tensor

__all__ = ["main", "build_parser"]

USAGE_ERROR = 2
COMPUTE_ERROR = 1


class UsageError(Exception):
    """Input or I/O problem: bad paths, malformed files, shape mismatch."""


def _resolve_workers(value: Optional[int]) -> int:
    if value is None:
        env = os.environ.get("PLANAR_WORKERS")
        if env is not None:
            try:
                value = int(env)
            except ValueError as exc:
                raise UsageError(f"PLANAR_WORKERS must be an integer, got {env!r}") from exc
        else:
            value = 1
    if value < 0:
        raise UsageError("--workers must be >= 0")
    if value == 0:
        value = os.cpu_count() or 1
    return value


def _load_tensor(path: str) -> np.ndarray:
    try:
        return read_tensor(path)
    except FileNotFoundError as exc:
        raise UsageError(f"missing file: {path}") from exc
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except TensorFormatError as exc:
        raise UsageError(str(exc)) from exc


def _intrinsics_from_args(args: argparse.Namespace) -> CameraIntrinsics:
    if args.intrinsics is not None:
        try:
            raw = json.loads(Path(args.intrinsics).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"missing file: {args.intrinsics}") from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot parse intrinsics {args.intrinsics}: {exc}") from exc
        try:
            return CameraIntrinsics(
                fx=float(raw["fx"]),
                fy=float(raw["fy"]),
                cx=float(raw["cx"]),
                cy=float(raw["cy"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(
                f"intrinsics file must supply numeric fx, fy, cx, cy: {exc}"
            ) from exc
    missing = [f for f in ("fx", "fy", "cx", "cy") if getattr(args, f) is None]
    if missing:
        raise UsageError(
            "camera intrinsics required: pass --intrinsics FILE or all of "
            "--fx --fy --cx --cy"
        )
    return CameraIntrinsics(fx=args.fx, fy=args.fy, cx=args.cx, cy=args.cy)


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory not writable: {path}")
    return out


def _cmd_cluster(args: argparse.Namespace) -> int:
    workers = _resolve_workers(args.workers)
    emb_raw = _load_tensor(args.embeddings)
    prob_raw = _load_tensor(args.probs)
    if emb_raw.ndim != 3:
        raise UsageError(
            f"embeddings must be a (H, W, d) tensor, got shape {emb_raw.shape}"
        )
    if prob_raw.ndim != 2:
        raise UsageError(
            f"probabilities must be a (H, W) tensor, got shape {prob_raw.shape}"
        )
    if emb_raw.shape[:2] != prob_raw.shape:
        raise UsageError(
            f"grid mismatch: embeddings {emb_raw.shape[:2]} vs "
            f"probabilities {prob_raw.shape}"
        )
    grid = ImageGrid(*prob_raw.shape)
    embeddings = EmbeddingMap(grid, emb_raw.reshape(grid.n_pixels, -1))
    probs = PlanarProbabilityMap(grid, prob_raw.reshape(-1).astype(np.float64))
    mask = PlanarMask(grid, probs.probs >= args.mask_threshold)
    config = MeanShiftConfig(
        anchors_per_dim=args.k,
        dim=embeddings.dim,
        bandwidth=args.bandwidth,
        iterations=args.iters,
        density_fraction=args.tau,
    )
    out = _out_dir(args.out)
    start = time.perf_counter()
    clusters, assignment = cluster(embeddings, mask, config, workers=workers)
    wall_ms = (time.perf_counter() - start) * 1000.0
    labels = hard_labels(assignment)
    write_tensor(
        out / "labels.pten",
        labels.labels.reshape(grid.height, grid.width).astype(np.int32),
    )
    write_tensor(
        out / "assignment.pten",
        assignment.weights.reshape(grid.height, grid.width, -1),
    )
    summary = {
        "cluster_count": len(clusters),
        "iterations": config.iterations,
        "wall_ms": wall_ms,
        "k": config.anchors_per_dim,
        "bandwidth": config.bandwidth,
        "tau": config.density_fraction,
        "workers": workers,
    }
    (out / "summary.json").write_text(metrics_to_json(summary) + "\n")
    print(f"clusters: {len(clusters)}  outputs: {out}")
    return 0


def _read_segmentation(path: str) -> InstanceSegmentation:
    raw = _load_tensor(path)
    if raw.ndim != 2:
        raise UsageError(f"labels must be a (H, W) tensor, got shape {raw.shape}")
    grid = ImageGrid(*raw.shape)
    return InstanceSegmentation(grid, raw.reshape(-1).astype(np.int64))


def _cmd_eval(args: argparse.Namespace) -> int:
    pred_seg = _read_segmentation(args.pred_labels)
    gt_seg = _read_segmentation(args.gt_labels)
    depth_raw = _load_tensor(args.gt_depth)
    if depth_raw.ndim != 2:
        raise UsageError(
            f"depth must be a (H, W) tensor, got shape {depth_raw.shape}"
        )
    if pred_seg.grid != gt_seg.grid or depth_raw.shape != (
        gt_seg.grid.height,
        gt_seg.grid.width,
    ):
        raise UsageError("prediction, reference, and depth grids must match")
    grid = gt_seg.grid
    gt_depth = DepthMap(grid, depth_raw.reshape(-1), depth_raw.reshape(-1) > 0)
    intr = _intrinsics_from_args(args)
    params_raw = _load_tensor(args.pred_params)
    if params_raw.ndim != 2 or params_raw.shape[1] != 3:
        raise UsageError(
            f"instance params must be a (C, 3) tensor, got shape {params_raw.shape}"
        )
    if params_raw.shape[0] != pred_seg.n_instances:
        raise UsageError(
            f"instance params rows ({params_raw.shape[0]}) must match predicted "
            f"instance count ({pred_seg.n_instances})"
        )
    pred_planes = [Plane(row) for row in params_raw]
    gt_points = backproject(gt_depth, intr)
    gt_planes = []
    for idx in range(1, gt_seg.n_instances + 1):
        members = np.nonzero((gt_seg.labels == idx) & gt_points.validity)[0]
        plane, _ = fit_plane_lsq(gt_points, members)
        gt_planes.append(plane)

    depth_curve = recall_depth(pred_seg, pred_planes, gt_seg, gt_depth, intr)
    normal_curve = recall_normal(pred_seg, pred_planes, gt_seg, gt_planes)
    pred_depth = render_segment_depth(pred_seg, pred_planes, intr)
    record = {
        "rand_index": rand_index(pred_seg, gt_seg),
        "variation_of_information": variation_of_information(pred_seg, gt_seg),
        "segmentation_covering": segmentation_covering(gt_seg, pred_seg),
        "depth_metrics": depth_metrics(pred_depth, gt_depth).as_dict(),
        "plane_count_histogram": {
            str(k): v for k, v in sorted(plane_count_histogram([pred_seg]).items())
        },
    }
    out = _out_dir(args.out)
    (out / "metrics.json").write_text(metrics_to_json(record) + "\n")
    (out / "recall_depth.csv").write_text(recall_curve_to_csv(depth_curve))
    (out / "recall_normal.csv").write_text(recall_curve_to_csv(normal_curve))
    print(
        f"RI {record['rand_index']:.4f}  "
        f"VI {record['variation_of_information']:.4f}  "
        f"SC {record['segmentation_covering']:.4f}  outputs: {out}"
    )
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    grid = ImageGrid(args.height, args.width)
    intr = CameraIntrinsics(
        fx=args.fx if args.fx is not None else 0.9 * args.width,
        fy=args.fy if args.fy is not None else 0.9 * args.width,
        cx=args.cx if args.cx is not None else (args.width - 1) / 2.0,
        cy=args.cy if args.cy is not None else (args.height - 1) / 2.0,
    )
    spec = SceneSpec(
        grid=grid,
        intr=intr,
        plane_count=args.planes,
        nonplanar_fraction=args.nonplanar_fraction,
        depth_range=(args.depth_min, args.depth_max),
        seed=args.seed,
    )
    scene = generate_scene(spec)
    noise = EmbeddingNoiseSpec(sigma=args.sigma, seed=args.seed)
    embeddings = generate_embeddings(scene, noise, dim=args.dim)
    params = generate_pixel_params(scene, args.param_noise, seed=args.seed)
    probs = corrupt_probability(scene, args.flip_rate, seed=args.seed)
    out = _out_dir(args.out)
    h, w = grid.height, grid.width
    write_tensor(
        out / "segmentation.pten",
        scene.segmentation.labels.reshape(h, w).astype(np.int32),
    )
    write_tensor(out / "depth.pten", scene.depth.depth.reshape(h, w))
    write_tensor(out / "embeddings.pten", embeddings.values.reshape(h, w, -1))
    write_tensor(out / "params.pten", params.params.reshape(h, w, 3))
    write_tensor(out / "probs.pten", probs.probs.reshape(h, w))
    manifest = {
        "spec": {
            "height": h,
            "width": w,
            "plane_count": spec.plane_count,
            "nonplanar_fraction": spec.nonplanar_fraction,
            "depth_range": list(spec.depth_range),
            "seed": spec.seed,
        },
        "intrinsics": dataclasses.asdict(intr),
        "embedding_noise": {
            "center_min_gap": noise.center_min_gap,
            "sigma": noise.sigma,
            "seed": noise.seed,
        },
        "param_noise": args.param_noise,
        "flip_rate": args.flip_rate,
        "planes": [list(p.n) for p in scene.planes],
    }
    (out / "manifest.json").write_text(metrics_to_json(manifest) + "\n")
    print(f"scene with {spec.plane_count} planes written to {out}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradient_checks(
        samples=args.samples, seed=args.seed, corrupt=args.corrupt
    )
    all_passed = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(
            f"{status} {r.name}: max rel err {r.max_rel_err:.3e} "
            f"(tolerance {r.tolerance:.1e}, {r.samples} samples)"
        )
        all_passed &= r.passed
    return 0 if all_passed else COMPUTE_ERROR


def _cmd_bench(args: argparse.Namespace) -> int:
    workers = _resolve_workers(args.workers)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--sizes must be comma-separated integers: {exc}") from exc
    if not sizes:
        raise UsageError("--sizes must name at least one size")
    results = bench_clustering(
        sizes=sizes,
        config_grid=[(args.k, args.iters)],
        repeats=args.repeats,
        workers=workers,
        vanilla_iters=args.vanilla_iters,
        rng_seed=args.seed,
    )
    text = bench_results_to_csv(results)
    if args.out is None:
        sys.stdout.write(text)
    else:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise UsageError(f"cannot write {args.out}: {exc}") from exc
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planarseg",
        description="Plane-instance segmentation toolkit: clustering, "
        "geometry, losses, metrics, synthetic scenes, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cluster = sub.add_parser(
        "cluster", help="cluster embeddings into plane instances"
    )
    p_cluster.add_argument("embeddings", help="PTEN (H, W, d) embedding tensor")
    p_cluster.add_argument("probs", help="PTEN (H, W) planar probability tensor")
    p_cluster.add_argument("--k", type=int, default=10, help="anchors per dimension")
    p_cluster.add_argument("--bandwidth", type=float, default=0.5)
    p_cluster.add_argument("--iters", type=int, default=10)
    p_cluster.add_argument("--tau", type=float, default=0.1)
    p_cluster.add_argument("--mask-threshold", type=float, default=0.5)
    p_cluster.add_argument("--workers", type=int, default=None)
    p_cluster.add_argument("--out", default=".", help="output directory")
    p_cluster.set_defaults(func=_cmd_cluster)

    p_eval = sub.add_parser("eval", help="score a prediction against reference data")
    p_eval.add_argument("--pred-labels", required=True)
    p_eval.add_argument("--pred-params", required=True, help="PTEN (C, 3) tensor")
    p_eval.add_argument("--gt-labels", required=True)
    p_eval.add_argument("--gt-depth", required=True)
    p_eval.add_argument("--intrinsics", help="JSON file with fx, fy, cx, cy")
    p_eval.add_argument("--fx", type=float)
    p_eval.add_argument("--fy", type=float)
    p_eval.add_argument("--cx", type=float)
    p_eval.add_argument("--cy", type=float)
    p_eval.add_argument("--out", default=".", help="output directory")
    p_eval.set_defaults(func=_cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic scene")
    p_synth.add_argument("--height", type=int, default=48)
    p_synth.add_argument("--width", type=int, default=64)
    p_synth.add_argument("--planes", type=int, default=4)
    p_synth.add_argument("--nonplanar-fraction", type=float, default=0.1)
    p_synth.add_argument("--depth-min", type=float, default=1.0)
    p_synth.add_argument("--depth-max", type=float, default=4.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--dim", type=int, default=2)
    p_synth.add_argument("--sigma", type=float, default=0.1)
    p_synth.add_argument("--param-noise", type=float, default=0.0)
    p_synth.add_argument("--flip-rate", type=float, default=0.0)
    p_synth.add_argument("--fx", type=float)
    p_synth.add_argument("--fy", type=float)
    p_synth.add_argument("--cx", type=float)
    p_synth.add_argument("--cy", type=float)
    p_synth.add_argument("--out", default=".", help="output directory")
    p_synth.set_defaults(func=_cmd_synth)

    p_grad = sub.add_parser("gradcheck", help="verify loss gradients numerically")
    p_grad.add_argument("--samples", type=int, default=100)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument(
        "--corrupt",
        help="inflate one loss's error to prove the harness catches it",
    )
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_bench = sub.add_parser("bench", help="time both clustering variants")
    p_bench.add_argument(
        "--sizes", default=",".join(str(s) for s in DEFAULT_SIZES)
    )
    p_bench.add_argument("--k", type=int, default=10)
    p_bench.add_argument("--iters", type=int, default=10)
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument("--vanilla-iters", type=int, default=1)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--workers", type=int, default=None)
    p_bench.add_argument("--out", help="CSV path (default: stdout)")
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return COMPUTE_ERROR


if __name__ == "__main__":
    sys.exit(main())
