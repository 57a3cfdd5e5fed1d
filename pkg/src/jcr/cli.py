"""Command-line pipeline: synth, align, calibrate, reconstruct, fields, eval.

Every stage is a standalone subcommand reading and writing auditable
artifacts; ``run`` chains them. Exit codes: 0 ok, 2 input error,
3 degenerate geometry, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .alignment import AlignConfig, align_global, extract_point_cloud
from .calibration import CalibrationConfig, CalibrationResult, calibrate
from .errors import (
    DegenerateGeometry,
    InputError,
    JCRError,
    NonConvergence,
    UncalibratedInput,
)
from .fields import (
    FieldModel,
    TrainConfig,
    query,
    train_color,
    train_occupancy,
    train_segmentation,
)
from .geometry import Pose, rotation_angle
from .reconstruction import (
    LabeledPointCloud,
    adaptive_confidence_threshold,
    estimate_height,
    join_pixel_labels,
    transform_to_base,
)
from .synth import (
    CameraConfig,
    HiddenParams,
    NoiseProfile,
    TrajectoryConfig,
    generate_dataset,
    tabletop_scene,
)

log = logging.getLogger("jcr")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE = 3
EXIT_NONCONVERGED = 4


def _setup_logging():
    level = os.environ.get("JCR_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _write_artifact(path, payload, config, seed):
    """Every artifact embeds the config and seed that produced it."""
    payload = dict(payload)
    payload["_provenance"] = {"config": config, "seed": seed}
    io.save_json(path, payload)


# ---------------------------------------------------------------------------
# Stage implementations (shared between subcommands and `run`)


def _stage_synth(cfg, out_dir, seed):
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    scene = tabletop_scene()
    traj = TrajectoryConfig(num_poses=int(cfg.get("num_poses", 10)))
    if "hidden" in cfg:
        h = cfg["hidden"]
        hidden = HiddenParams(
            Pose.from_matrix(np.array(h["calib"])), float(h["scale"])
        )
    else:
        hidden = HiddenParams.random(rng)
    noise_cfg = cfg.get("noise", {})
    if noise_cfg == "zero":
        noise = NoiseProfile.zero()
    else:
        noise = NoiseProfile(**noise_cfg)
    camera = CameraConfig(**cfg.get("camera", {}))
    ds = generate_dataset(
        scene, traj, hidden, noise, seed=seed, camera=camera
    )
    io.save_poses(out_dir / "ee_poses.json", ds.ee_poses)
    io.save_poses(out_dir / "camera_poses.json", ds.camera_poses)
    io.save_pair_set(out_dir / "pointmaps", ds.pairs, ds.graph)
    np.savez_compressed(
        out_dir / "labels.npz",
        colors=np.stack(ds.color_images),
        segmentation=np.stack(ds.segmentation_images),
    )
    gt = ds.ground_truth
    _write_artifact(
        out_dir / "ground_truth.json",
        {
            "calib": gt.calib.matrix().reshape(-1).tolist(),
            "scale": gt.scale,
            "object_heights": {str(k): v for k, v in gt.object_heights.items()},
        },
        cfg,
        seed,
    )
    return ds


def _stage_align(pairs, graph, cfg, out_dir, seed):
    keys = {"step", "tol", "max_iters"}
    result = align_global(
        pairs, graph, AlignConfig(**{k: cfg[k] for k in keys & cfg.keys()})
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    poses = [p.matrix().reshape(-1).tolist() for p in result.poses]
    _write_artifact(
        out_dir / "alignment.json",
        {
            "poses_camera_to_global": poses,
            "sigmas": result.sigmas.tolist(),
            "objective": result.objective,
            "converged": result.converged,
            "edges": [list(e) for e in result.graph.edges],
        },
        cfg,
        seed,
    )
    np.savez_compressed(
        out_dir / "alignment_maps.npz",
        **{f"pointmap_{v}": pm for v, pm in enumerate(result.pointmaps)},
        **{f"confidence_{v}": c for v, c in enumerate(result.confidences)},
    )
    return result


def _stage_calibrate(ee_poses, camera_poses, cfg, out_dir, seed):
    calib_cfg = CalibrationConfig(
        tau_t=float(cfg.get("tau_t", CalibrationConfig.tau_t)),
        tau_r=float(cfg.get("tau_r", CalibrationConfig.tau_r)),
        all_pairs=bool(cfg.get("all_pairs", False)),
    )
    result = calibrate(ee_poses, camera_poses, calib_cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_artifact(out_dir / "calibration.json", result.to_dict(), cfg, seed)
    return result


def _stage_reconstruct(align_result, ee_poses, calib, cfg, out_dir, seed,
                       color_images=None, seg_images=None, force=False):
    percentile = float(cfg.get("confidence_percentile", 65.0))
    threshold = adaptive_confidence_threshold(
        align_result.confidences, percentile
    )
    points, views, pixels, confs = extract_point_cloud(align_result, threshold)
    cloud = LabeledPointCloud(
        points=points,
        frame="camera_model",
        views=views,
        pixels=pixels,
        confidence=confs,
    )
    if color_images is not None or seg_images is not None:
        cloud = join_pixel_labels(cloud, color_images, seg_images)
    camera_poses = [p.inverse() for p in align_result.poses]  # global -> cam
    cloud = transform_to_base(cloud, camera_poses, ee_poses, calib, force=force)
    out_dir.mkdir(parents=True, exist_ok=True)
    io.save_ply(
        out_dir / "cloud.ply", cloud.points, cloud.colors, cloud.segmentation
    )
    _write_artifact(
        out_dir / "reconstruct.json",
        {"num_points": len(cloud), "confidence_threshold": threshold},
        cfg,
        seed,
    )
    return cloud


def _stage_fields(cloud, cfg, out_dir, seed):
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = TrainConfig(
        seed=seed,
        epochs=int(cfg.get("epochs", 60)),
        hidden_size=int(cfg.get("hidden_size", 256)),
        learning_rate=float(cfg.get("learning_rate", 1e-2)),
    )
    models = {}
    models["occupancy"] = train_occupancy(cloud, train_cfg)
    if cloud.segmentation is not None and len(np.unique(cloud.segmentation)) > 1:
        models["segmentation"] = train_segmentation(cloud, train_cfg)
    if cloud.colors is not None:
        color_cfg = dataclasses.replace(
            train_cfg,
            learning_rate=float(cfg.get("color_learning_rate", 0.05)),
        )
        models["color"] = train_color(cloud, color_cfg)
    for name, model in models.items():
        io.save_json(out_dir / f"field_{name}.json", model.to_dict())
    return models


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args):
    cfg = _load_manifest(args).get("synth", {}) if args.manifest else {}
    if args.num_poses:
        cfg["num_poses"] = args.num_poses
    if args.zero_noise:
        cfg["noise"] = "zero"
    _stage_synth(cfg, Path(args.out), args.seed)
    return EXIT_OK


def cmd_align(args):
    pairs, graph = io.load_pair_set(args.pointmaps)
    _stage_align(pairs, graph, {}, Path(args.out), args.seed)
    return EXIT_OK


def cmd_calibrate(args):
    ee = io.load_poses(args.ee_poses)
    cam = io.load_poses(args.camera_poses)
    result = _stage_calibrate(ee, cam, {}, Path(args.out), args.seed)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def cmd_reconstruct(args):
    align_dir = Path(args.alignment)
    align_result = _load_alignment(align_dir)
    ee = io.load_poses(args.ee_poses)
    calib = CalibrationResult.from_dict(io.load_json(args.calibration))
    colors = segs = None
    if args.labels:
        data = np.load(args.labels)
        colors = list(data["colors"])
        segs = list(data["segmentation"])
    _stage_reconstruct(
        align_result, ee, calib, {}, Path(args.out), args.seed,
        color_images=colors, seg_images=segs,
        force=args.force_uncalibrated,
    )
    return EXIT_OK


def cmd_train_field(args):
    points, colors, labels = io.load_ply(args.cloud)
    cloud = LabeledPointCloud(
        points=points,
        frame="robot_base",
        views=np.zeros(len(points), dtype=int),
        pixels=np.zeros((len(points), 2), dtype=int),
        colors=colors,
        segmentation=labels,
    )
    cfg = TrainConfig(seed=args.seed, epochs=args.epochs)
    trainer = {
        "occupancy": train_occupancy,
        "segmentation": train_segmentation,
        "color": train_color,
    }[args.kind]
    model = trainer(cloud, cfg)
    io.save_json(args.out, model.to_dict())
    return EXIT_OK


def cmd_query(args):
    model = FieldModel.from_dict(io.load_json(args.model))
    pts = np.loadtxt(args.points, delimiter=",", ndmin=2)
    out = np.atleast_2d(query(model, pts))
    if out.shape[0] != len(pts):
        out = out.reshape(len(pts), -1)
    np.savetxt(args.out, out, delimiter=",", fmt="%.8g")
    return EXIT_OK


def cmd_eval(args):
    calib = CalibrationResult.from_dict(io.load_json(args.calibration))
    report = {
        "converged": calib.converged,
        "mean_residual_t": calib.mean_residual_t,
        "max_residual_t": float(np.max(calib.residuals_t)),
        "mean_residual_r": calib.mean_residual_r,
        "max_residual_r": float(np.max(calib.residuals_r)),
        "num_pairs": calib.num_pairs,
    }
    if args.ground_truth:
        gt = io.load_json(args.ground_truth)
        gt_pose = Pose.from_matrix(np.array(gt["calib"]))
        report["rotation_error_deg"] = float(
            np.degrees(rotation_angle(calib.rotation @ gt_pose.rotation.T))
        )
        report["translation_error_m"] = float(
            np.linalg.norm(calib.translation - gt_pose.translation)
        )
        report["scale_error_percent"] = float(
            100.0 * abs(calib.scale - gt["scale"]) / gt["scale"]
        )
        if args.cloud and gt.get("object_heights"):
            pts, _, labels = io.load_ply(args.cloud)
            heights = {}
            for cid, true_h in gt["object_heights"].items():
                if labels is None or true_h <= 0:
                    continue
                mask = labels == int(cid)
                if not mask.any():
                    continue
                est = estimate_height(pts[mask, 2])
                heights[cid] = {
                    "true_m": true_h,
                    "estimated_m": est,
                    "error_percent": 100.0 * abs(est - true_h) / true_h,
                }
            report["object_heights"] = heights
    _print_report(report)
    if args.out:
        io.save_json(args.out, report)
    return EXIT_OK


def _print_report(report, indent=""):
    for key, value in report.items():
        if isinstance(value, dict):
            print(f"{indent}{key}:")
            _print_report(value, indent + "  ")
        elif isinstance(value, float):
            print(f"{indent}{key:<24} {value:.6g}")
        else:
            print(f"{indent}{key:<24} {value}")


def _load_alignment(align_dir):
    from .alignment import AlignmentResult, PairGraph

    meta = io.load_json(align_dir / "alignment.json")
    maps = np.load(align_dir / "alignment_maps.npz")
    poses = [
        Pose.from_matrix(np.array(m), frame="camera_model")
        for m in meta["poses_camera_to_global"]
    ]
    pointmaps = [maps[f"pointmap_{v}"] for v in range(len(poses))]
    confidences = [maps[f"confidence_{v}"] for v in range(len(poses))]
    return AlignmentResult(
        poses=poses,
        sigmas=np.array(meta["sigmas"]),
        pointmaps=pointmaps,
        confidences=confidences,
        objective=float(meta["objective"]),
        objective_trace=np.array([]),
        converged=bool(meta["converged"]),
        graph=PairGraph(len(poses), tuple(map(tuple, meta["edges"]))),
    )


def _load_manifest(args):
    if not args.manifest:
        raise InputError("--manifest is required")
    return io.load_json(args.manifest)


def cmd_run(args):
    """Full pipeline: (synth|load) -> align -> calibrate -> reconstruct -> fields."""
    manifest = _load_manifest(args) if args.manifest else {}
    out = Path(args.out or manifest.get("out", "jcr_out"))
    seed = args.seed if args.seed is not None else int(manifest.get("seed", 0))
    stages = (
        [args.stage]
        if args.stage
        else ["synth", "align", "calibrate", "reconstruct", "train-field"]
    )

    stage = "input"
    try:
        if "synth" in manifest or not manifest.get("ee_poses"):
            stage = "synth"
            ds = _stage_synth(manifest.get("synth", {}), out / "synth", seed)
            ee_poses = ds.ee_poses
            pairs, graph = ds.pairs, ds.graph
            colors = ds.color_images
            segs = ds.segmentation_images
        else:
            stage = "input"
            ee_poses = io.load_poses(manifest["ee_poses"])
            pairs, graph = io.load_pair_set(manifest["pointmaps"])
            colors = segs = None
            if manifest.get("labels"):
                data = np.load(manifest["labels"])
                colors = list(data["colors"])
                segs = list(data["segmentation"])

        stage = "align"
        align_result = _stage_align(
            pairs, graph, manifest.get("align", {}), out / "align", seed
        )
        stage = "calibrate"
        camera_poses = [p.inverse() for p in align_result.poses]
        calib = _stage_calibrate(
            ee_poses, camera_poses, manifest.get("calibrate", {}),
            out / "calibrate", seed,
        )
        stage = "reconstruct"
        cloud = _stage_reconstruct(
            align_result, ee_poses, calib,
            manifest.get("reconstruct", {}), out / "reconstruct", seed,
            color_images=colors, seg_images=segs,
            force=args.force_uncalibrated,
        )
        if "train-field" in stages or not args.stage:
            stage = "train-field"
            _stage_fields(cloud, manifest.get("fields", {}), out / "fields", seed)
    except JCRError as exc:
        print(f"error in stage {stage}: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    if not calib.converged:
        print("calibration did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _exit_code_for(exc):
    if isinstance(exc, DegenerateGeometry):
        return EXIT_DEGENERATE
    if isinstance(exc, (NonConvergence, UncalibratedInput)):
        return EXIT_NONCONVERGED
    return EXIT_INPUT


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jcr",
        description="Joint hand-eye calibration and scene representation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("synth", cmd_synth, help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--num-poses", type=int)
    p.add_argument("--zero-noise", action="store_true")

    p = add("align", cmd_align, help="globally align pairwise pointmaps")
    p.add_argument("--pointmaps", required=True, help="pair manifest JSON")
    p.add_argument("--out", required=True)

    p = add("calibrate", cmd_calibrate, help="solve hand-eye + scale")
    p.add_argument("--ee-poses", required=True)
    p.add_argument("--camera-poses", required=True)
    p.add_argument("--out", required=True)

    p = add("reconstruct", cmd_reconstruct, help="build metric base-frame cloud")
    p.add_argument("--alignment", required=True, help="align output directory")
    p.add_argument("--calibration", required=True)
    p.add_argument("--ee-poses", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.add_argument("--force-uncalibrated", action="store_true")

    p = add("train-field", cmd_train_field, help="train an implicit field")
    p.add_argument("--cloud", required=True, help="PLY point cloud")
    p.add_argument(
        "--kind", choices=["occupancy", "segmentation", "color"], required=True
    )
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--out", required=True)

    p = add("query", cmd_query, help="query a trained field at CSV points")
    p.add_argument("--model", required=True)
    p.add_argument("--points", required=True, help="CSV of x,y,z rows")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, help="report calibration quality")
    p.add_argument("--calibration", required=True)
    p.add_argument("--ground-truth")
    p.add_argument("--cloud", help="PLY with labels, for height errors")
    p.add_argument("--out")

    p = sub.add_parser("run", help="run the full pipeline from a manifest")
    p.set_defaults(fn=cmd_run)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--stage")
    p.add_argument("--force-uncalibrated", action="store_true")

    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except JCRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
