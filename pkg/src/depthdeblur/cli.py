"""Command-line interface.

Subcommands: synth, run, complete (scene step only), deblur (image step
only, kernels from the dataset's ground-truth trajectories), energy
(evaluate the objective on a dataset's ground truth), eval (metrics
between a prediction directory and a dataset).  Exit codes: 0 success,
1 usage error, 2 data/processing error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_config(path):
    from .config import PipelineConfig

    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_file(path)


def cmd_synth(args) -> int:
    from . import synthetic as syn
    from .config import parse_kv_file

    if args.suite is not None:
        from . import suite

        if args.suite == "static":
            spec = suite.static_scene()
        else:
            spec = suite.suite_scene(int(args.suite))
    else:
        spec = syn.spec_from_kv(parse_kv_file(args.spec))
    ds = syn.generate(spec, seed=args.seed)
    syn.write_dataset(ds, args.out)
    print(f"wrote dataset to {args.out}")
    return 0


def cmd_run(args) -> int:
    from . import pipeline as pl
    from . import synthetic as syn

    config = _load_config(args.config)
    bundle = pl.load_bundle(args.input)
    dataset = None
    if (Path(args.input) / "gt_depth_1.png").exists():
        dataset = syn.read_dataset(args.input)
    result = pl.run_joint(bundle, config, dataset=dataset, with_color=not args.no_color)
    pl.write_result(args.out, result)
    print(f"wrote results to {args.out}")
    if result.metrics is not None:
        sys.stdout.write(result.metrics.as_text())
    return 0


def cmd_complete(args) -> int:
    from . import energy as en
    from . import pipeline as pl
    from . import sceneflow as sf
    from .imaging import write_depth_png
    from .scene import render_depth

    config = _load_config(args.config)
    bundle = pl.load_bundle(args.input)
    init = pl.initialize(bundle, config)
    latents = {f: init.obs.blurry[f].copy() for f in init.obs.frames}
    scene = init.scene
    breakdown = en.total_energy(scene, latents, init.obs, config.weights)
    for _ in range(config.outer_iterations):
        scene, info = sf.scene_step(
            scene,
            init.label_sets,
            init.objects,
            init.obs,
            latents,
            config.weights,
            config.trws_sweeps,
            config.trws_tol,
            breakdown_before=breakdown,
        )
        breakdown = info.breakdown_after
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_depth_png(out / "completed_depth.png", render_depth(scene, init.obs.superpixels, init.obs.K))
    print(f"wrote completed depth to {out}")
    return 0


def cmd_deblur(args) -> int:
    from . import deblur as db
    from . import pipeline as pl
    from . import synthetic as syn
    from .imaging import luminance, write_color_png

    config = _load_config(args.config)
    dataset = syn.read_dataset(args.input)
    blurry_lum = {f: luminance(dataset.blurry[f]) for f in (0, 1, 2)}
    problem = db.problem_from_flows(
        dataset.gt_frame_flows,
        blurry_lum,
        dataset.spec.exposure,
        config.weights,
        config.steps,
    )
    latents = {f: blurry_lum[f].copy() for f in (0, 1, 2)}
    restored, trace = db.deblur_sequence(
        latents, problem, config.inner_iters, config.gs_passes
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in (0, 1, 2):
        write_color_png(out / f"restored_{f}.png", np.repeat(restored[f][:, :, None], 3, axis=2))
    with open(out / "deblur_energy.txt", "w", encoding="utf-8") as fh:
        for k, e in enumerate(trace.pass_energies):
            fh.write(f"pass{k} = {e:.9g}\n")
    print(f"wrote restored frames to {out}")
    return 0


def cmd_energy(args) -> int:
    from . import energy as en
    from . import pipeline as pl
    from . import sceneflow as sf
    from . import scene as scene_mod
    from . import synthetic as syn
    from .imaging import luminance

    config = _load_config(args.config)
    dataset = syn.read_dataset(args.input)
    bundle = pl.bundle_from_dataset(dataset)
    init = pl.initialize(bundle, config)
    if args.state == "init":
        scene = init.scene
        latents = {f: init.obs.blurry[f].copy() for f in init.obs.frames}
    else:
        # ground-truth-aligned state: planes fit on the true depth, labels
        # from the dominant generating object, true apparent motions
        sp = init.obs.superpixels
        planes = sf.fit_all_planes(sp, dataset.gt_depth.values, dataset.K)
        labels = np.zeros(sp.n_labels, dtype=int)
        plane_obj = np.array([p.object_id for p in dataset.spec.planes])
        for i, (rows, cols) in enumerate(sp.regions):
            objs = plane_obj[dataset.gt_plane_idx[rows, cols]]
            labels[i] = np.bincount(objs).argmax()
        motions = {
            d: [dataset.spec.apparent(k, d) for k in range(dataset.spec.n_objects)]
            for d in init.obs.directions
        }
        scene = scene_mod.SceneState(planes, labels, motions)
        latents = {f: luminance(dataset.latents[f]) for f in init.obs.frames}
    breakdown = en.total_energy(scene, latents, init.obs, config.weights)
    sys.stdout.write(breakdown.as_text())
    return 0


def cmd_eval(args) -> int:
    from . import metrics as mx
    from . import synthetic as syn
    from .config import PipelineConfig
    from .imaging import luminance, read_color_png, read_depth_png

    config = _load_config(args.config)
    dataset = syn.read_dataset(args.gt)
    pred_dir = Path(args.pred)
    pred_depth = read_depth_png(pred_dir / "completed_depth.png")
    restored = luminance(read_color_png(pred_dir / "restored_1.png"))
    report = mx.MetricsReport(
        depth_bad_ratio=mx.depth_bad_ratio(
            pred_depth, dataset.gt_depth, dataset.K.fx, config.baseline
        ),
        flow_bad_ratio=float("nan"),
        psnr=mx.psnr(restored, luminance(dataset.latents[1])),
        ssim=mx.ssim(restored, luminance(dataset.latents[1])),
    )
    flow_path = pred_dir / "flow_1to2.png"
    if flow_path.exists():
        from .imaging import read_flow_png

        report.flow_bad_ratio = mx.flow_bad_ratio(
            read_flow_png(flow_path), dataset.gt_flows["next"]
        )
    else:
        report.flow_bad_ratio = 0.0 if args.allow_missing_flow else report.flow_bad_ratio
    sys.stdout.write(report.as_text())
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="depthdeblur", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", help="scene spec file (key = value)")
    group.add_argument("--suite", help="frozen suite scene index 0..4 or 'static'")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="joint completion + deblurring")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-color", action="store_true", help="skip per-channel color restoration")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("complete", help="depth completion only (scene steps)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("deblur", help="deblur only, kernels from GT trajectories")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("energy", help="evaluate the objective on a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--state", choices=("init", "gt"), default="init")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("eval", help="metrics for a prediction directory")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--allow-missing-flow", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except Exception as exc:  # data / processing failures
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
