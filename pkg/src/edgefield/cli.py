"""Command-line surface: dataset synthesis, training, extraction, curve
fitting, evaluation, debug rendering, and one-shot end-to-end runs.

Exit codes: 0 ok, 1 usage/validation error, 2 runtime failure.
"""

import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from . import curvefit, evalmetrics, extract, field, geom, render, synth


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _resolve_workers(cfg_workers):
    if cfg_workers > 0:
        return cfg_workers
    env = os.environ.get("NEF_WORKERS", "")
    return int(env) if env.strip().isdigit() and int(env) > 0 else 1


def _load(args):
    cfg = config_mod.load_config(getattr(args, "config", None), getattr(args, "set", []) or [])
    if getattr(args, "seed", None) is not None:
        cfg.values["seed"] = args.seed
        cfg.explicit.add("seed")
    if getattr(args, "workers", None) is not None:
        cfg.values["workers"] = args.workers
    return cfg


def _guard_outputs(paths, force):
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not force:
        raise _UsageError(
            f"refusing to overwrite {existing[0]} (pass --force to allow)"
        )


def _dataset_paths(directory, n_views):
    paths = [os.path.join(directory, "scene.json")]
    for i in range(n_views):
        paths.append(os.path.join(directory, f"view_{i:03d}.pgm"))
        paths.append(os.path.join(directory, f"view_{i:03d}.cam"))
    return paths


def _build_dataset(cfg, workers):
    scene = synth.make_primitive_scene(cfg["synth.kind"], **cfg.scene_kwargs())
    intr = geom.intrinsics_from_fov(cfg["synth.width"], cfg["synth.height"], cfg["synth.fov_deg"])
    rng = np.random.default_rng(cfg.seed)
    return synth.make_view_dataset(
        scene,
        cfg["synth.n_views"],
        intr,
        radius=cfg["synth.camera_radius"],
        stroke_px=cfg["synth.stroke_px"],
        dropout=cfg["synth.dropout"],
        blur_kernel=cfg["synth.blur_kernel"],
        rng=rng,
        workers=workers,
    )


def cmd_synth(args):
    cfg = _load(args)
    paths = _dataset_paths(args.out, cfg["synth.n_views"])
    _guard_outputs(paths, args.force)
    ds = _build_dataset(cfg, _resolve_workers(cfg["workers"]))
    synth.write_dataset(ds, args.out)
    print(f"wrote {len(ds.views)} views to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load(args)
    if not os.path.isdir(args.dataset):
        raise _UsageError(f"dataset directory not found: {args.dataset}")
    ds = synth.read_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.efc")
    loss_csv = os.path.join(args.out, "loss.csv")
    params = None
    start = 0
    if args.resume:
        if not os.path.exists(ckpt):
            raise _UsageError(f"cannot resume: {ckpt} does not exist")
        params = field.load_checkpoint(ckpt)
        if os.path.exists(loss_csv):
            history = render.read_loss_csv(loss_csv)
            start = history[-1]["iteration"] if history else 0
    else:
        _guard_outputs([ckpt, loss_csv], args.force)
    params, history = render.train(
        ds, cfg.field_config(), cfg.train_config(), cfg.loss_weights(),
        out_dir=args.out, params=params, start_iteration=start,
    )
    field.save_checkpoint(params, ckpt)
    render.write_loss_csv(loss_csv, history, append=args.resume)
    print(f"trained {len(history)} iterations; checkpoint at {ckpt}")
    return 0


def cmd_extract(args):
    cfg = _load(args)
    if not os.path.exists(args.checkpoint):
        raise _UsageError(f"checkpoint not found: {args.checkpoint}")
    params = field.load_checkpoint(args.checkpoint)
    _guard_outputs([args.out], args.force)
    vol = extract.sample_grid(
        params, cfg["extract.resolution"], workers=_resolve_workers(cfg["workers"])
    )
    pc = extract.threshold_points(vol, cfg["extract.tau"])
    extract.write_ply(args.out, pc.points)
    print(f"extracted {len(pc)} points to {args.out}")
    return 0


def cmd_fit(args):
    cfg = _load(args)
    if not os.path.exists(args.points):
        raise _UsageError(f"point cloud not found: {args.points}")
    pc = extract.read_ply(args.points)
    _guard_outputs([args.out_curves, args.out_samples], args.force)
    curves = curvefit.fit_pipeline(pc.points, cfg.fit_config(), np.random.default_rng(cfg.seed))
    curvefit.write_curves(args.out_curves, curves)
    extract.write_ply(args.out_samples, curvefit.sample_curveset(curves, cfg["eval.voxel"] / 2))
    print(f"fit {len(curves)} curves to {args.out_curves}")
    return 0


def _load_cloud(path, spacing):
    """A point source for evaluation: .ply cloud, .txt curves (sampled
    densely), or a dataset directory / scene.json with ground-truth curves."""
    if os.path.isdir(path):
        path = os.path.join(path, "scene.json")
    if not os.path.exists(path):
        raise _UsageError(f"evaluation source not found: {path}")
    if path.endswith(".ply"):
        return extract.read_ply(path).points
    if path.endswith(".txt"):
        return curvefit.sample_curveset(curvefit.read_curves(path), spacing)
    if path.endswith(".json"):
        ds_dir = os.path.dirname(path)
        ds = synth.read_dataset(ds_dir)
        if not ds.gt_curves:
            raise _UsageError(f"{path}: dataset has no ground-truth curves")
        return curvefit.sample_curveset(ds.gt_curves, spacing)
    raise _UsageError(f"{path}: expected a .ply, .txt curves file, or dataset")


def cmd_eval(args):
    cfg = _load(args)
    spacing = cfg["eval.voxel"] / 2
    pred = _load_cloud(args.pred, spacing)
    gt = _load_cloud(args.gt, spacing)
    tau = args.tau if args.tau is not None else cfg["eval.tau"]
    metrics = evalmetrics.evaluate_clouds(pred, gt, tau, cfg["eval.voxel"])
    if args.out:
        csv_out = os.path.splitext(args.out)[0] + ".csv"
        _guard_outputs([args.out, csv_out], args.force)
        evalmetrics.write_report(metrics, args.out, csv_out)
    for k in evalmetrics.METRIC_FIELDS:
        print(f"{k}={getattr(metrics, k)!r}")
    return 0


def cmd_debug_render(args):
    cfg = _load(args)
    if not os.path.exists(args.checkpoint):
        raise _UsageError(f"checkpoint not found: {args.checkpoint}")
    params = field.load_checkpoint(args.checkpoint)
    ds = synth.read_dataset(args.dataset)
    if not (0 <= args.view < len(ds.views)):
        raise _UsageError(f"view index {args.view} outside 0..{len(ds.views) - 1}")
    cam = ds.views[args.view][0]
    edge_path = f"{args.out_prefix}_edge.pgm"
    depth_path = f"{args.out_prefix}_depth.pgm"
    _guard_outputs([edge_path, depth_path], args.force)
    edge, depth_raw, depth_disp = render.render_debug_view(
        params, cam, cfg["train.samples_per_ray"]
    )
    synth.write_pgm(edge_path, np.clip(edge, 0, 1))
    synth.write_pgm(depth_path, depth_disp)
    print(f"wrote {edge_path} and {depth_path}")
    return 0


def cmd_pipeline(args):
    cfg = _load(args)
    workers = _resolve_workers(cfg["workers"])
    out = args.out
    os.makedirs(out, exist_ok=True)
    ds_dir = os.path.join(out, "dataset")
    ckpt = os.path.join(out, "checkpoint.efc")
    loss_csv = os.path.join(out, "loss.csv")
    points_ply = os.path.join(out, "points.ply")
    curves_txt = os.path.join(out, "curves.txt")
    samples_ply = os.path.join(out, "curve_samples.ply")
    metrics_txt = os.path.join(out, "metrics.txt")

    def stage_done(paths):
        return all(os.path.exists(p) for p in paths) and not args.force

    if stage_done(_dataset_paths(ds_dir, cfg["synth.n_views"])):
        print("synth: outputs exist, skipping")
        ds = synth.read_dataset(ds_dir)
    else:
        ds = _build_dataset(cfg, workers)
        os.makedirs(ds_dir, exist_ok=True)
        synth.write_dataset(ds, ds_dir)
        print(f"synth: wrote {len(ds.views)} views")

    if stage_done([ckpt, loss_csv]):
        print("train: outputs exist, skipping")
        params = field.load_checkpoint(ckpt)
    else:
        params, history = render.train(
            ds, cfg.field_config(), cfg.train_config(), cfg.loss_weights(), out_dir=out
        )
        field.save_checkpoint(params, ckpt)
        render.write_loss_csv(loss_csv, history)
        print(f"train: {len(history)} iterations, final loss {history[-1]['total']:.6f}")

    if stage_done([points_ply]):
        print("extract: outputs exist, skipping")
        pc = extract.read_ply(points_ply)
    else:
        vol = extract.sample_grid(params, cfg["extract.resolution"], workers=workers)
        pc = extract.threshold_points(vol, cfg["extract.tau"])
        extract.write_ply(points_ply, pc.points)
        print(f"extract: {len(pc)} points")

    if stage_done([curves_txt, samples_ply]):
        print("fit: outputs exist, skipping")
        curves = curvefit.read_curves(curves_txt)
    else:
        curves = curvefit.fit_pipeline(
            pc.points, cfg.fit_config(), np.random.default_rng(cfg.seed)
        )
        curvefit.write_curves(curves_txt, curves)
        extract.write_ply(samples_ply, curvefit.sample_curveset(curves, cfg["eval.voxel"] / 2))
        print(f"fit: {len(curves)} curves")

    spacing = cfg["eval.voxel"] / 2
    gt_points = curvefit.sample_curveset(ds.gt_curves, spacing)
    points_metrics = evalmetrics.evaluate_clouds(pc.points, gt_points, cfg["eval.tau"], cfg["eval.voxel"])
    curve_points = curvefit.sample_curveset(curves, spacing)
    curve_metrics = evalmetrics.evaluate_clouds(curve_points, gt_points, cfg["eval.tau"], cfg["eval.voxel"])
    evalmetrics.write_report(points_metrics, os.path.join(out, "metrics_points.txt"))
    evalmetrics.write_report(curve_metrics, metrics_txt, metrics_txt.replace(".txt", ".csv"))
    print("eval (extracted points vs gt):", {k: round(v, 4) for k, v in points_metrics.as_dict().items()})
    print("eval (fitted curves vs gt):  ", {k: round(v, 4) for k, v in curve_metrics.as_dict().items()})
    return 0


def build_parser():
    parser = _Parser(
        prog="edgefield",
        description="Reconstruct 3D parametric curves from multi-view 2D edge maps.",
        epilog=config_mod.registry_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--workers", type=int, help="parallel workers (or env NEF_WORKERS)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.epilog = config_mod.registry_help()
        p.formatter_class = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("synth", help="render a synthetic multi-view edge dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="optimize an edge field on a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory (checkpoint + loss csv)")
    p.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("extract", help="threshold the field into a 3D point cloud")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("fit", help="fit parametric curves to a point cloud")
    common(p)
    p.add_argument("--points", required=True, help="input PLY point cloud")
    p.add_argument("--out-curves", required=True, help="output curves text file")
    p.add_argument("--out-samples", required=True, help="output sampled-curves PLY")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("eval", help="compare a prediction against ground truth")
    common(p)
    p.add_argument("--pred", required=True, help=".ply cloud or .txt curves")
    p.add_argument("--gt", required=True, help=".ply, .txt curves, or dataset dir")
    p.add_argument("--tau", type=float, help="match radius override")
    p.add_argument("--out", help="write metric report to this path (+ .csv)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("pipeline", help="synth + train + extract + fit + eval")
    common(p)
    p.add_argument("--out", required=True, help="output directory for all artifacts")
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("debug-render", help="render edge and depth images from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="dataset supplying the camera")
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(fn=cmd_debug_render)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
