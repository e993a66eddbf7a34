"""Outer alternation: initialization, scene/image half-steps, run outputs.

A run alternates the discrete scene solver with the primal-dual image
restorer on the fixed superpixelation.  The reported per-half-step
energies are exactly ``energy.total_energy`` of the emitted states, and
both half-steps guarantee non-increase of that number.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import deblur as db
from . import energy as en
from . import geometry as geo
from . import metrics as mx
from . import scene as scene_mod
from . import sceneflow as sf
from .config import PipelineConfig
from .errors import DimensionMismatchError, InsufficientAnchorsError, StageError
from .imaging import (
    DepthMap,
    luminance,
    read_color_png,
    read_depth_png,
    write_color_png,
    write_depth_png,
    write_label_png,
)
from .superpixels import extract_boundaries, slic_segment


@dataclass
class InputBundle:
    """Minimal observed inputs of a run (color images, sparse depths)."""

    K: geo.Intrinsics
    blurry: dict  # frame -> (H, W, 3) color
    sparse: dict  # frame -> DepthMap


@dataclass
class InitState:
    obs: en.Observations
    objects: dict  # direction -> list of RigidMotion, shared object order
    label_sets: list
    scene: scene_mod.SceneState
    filled: dict  # frame -> dense depth array


@dataclass
class RunResult:
    scene: scene_mod.SceneState
    init_scene: scene_mod.SceneState
    depth: DepthMap
    latents: dict  # frame -> restored luminance
    restored_color: dict  # frame -> restored color (may be None)
    energy_trace: list  # (stage, EnergyBreakdown), stage in init/scene_k/deblur_k
    metrics: mx.MetricsReport
    obs: en.Observations


def bundle_from_dataset(dataset) -> InputBundle:
    return InputBundle(K=dataset.K, blurry=dict(dataset.blurry), sparse=dict(dataset.sparse))


def initialize(bundle: InputBundle, config: PipelineConfig) -> InitState:
    """SLIC, depth fill, plane fits, anchors, RANSAC motions, label sets."""
    directions = config.directions
    frames = scene_mod.direction_frames(directions)
    ref = scene_mod.REF_FRAME
    h, w = bundle.blurry[ref].shape[:2]
    lum = {f: luminance(bundle.blurry[f]) for f in frames}

    try:
        sp = slic_segment(
            bundle.blurry[ref],
            config.slic_target_for(w, h),
            config.slic_compactness,
            config.slic_iters,
        )
    except Exception as exc:
        raise StageError("superpixels", str(exc)) from exc
    boundaries = extract_boundaries(sp)

    try:
        filled = {
            f: sf.init_depth_fill(bundle.sparse[f], config.depth_fill_beta)
            for f in frames
        }
    except Exception as exc:
        raise StageError("depth-fill", str(exc)) from exc

    anchors = {}
    motions_by_dir = {}
    for k, direction in enumerate(directions):
        frame = scene_mod.DIRECTION_FRAME[direction]
        ref_xy, tgt_xy = sf.detect_and_match(lum[ref], lum[frame], config.feature)
        anchors[direction] = (ref_xy, tgt_xy)
        try:
            motions_by_dir[direction] = sf.ransac_motions(
                ref_xy,
                tgt_xy,
                filled[ref],
                filled[frame],
                bundle.K,
                config.ransac,
                seed=config.seed + k,
            )
        except InsufficientAnchorsError:
            motions_by_dir[direction] = [geo.RigidMotion.identity()]

    objects = sf.pair_motions(
        motions_by_dir.get("prev", []), motions_by_dir.get("next", [])
    )
    objects = {d: objects[d] for d in directions}
    n_objects = len(objects[directions[0]])

    try:
        fitted = sf.fit_all_planes(sp, filled[ref], bundle.K)
    except Exception as exc:
        raise StageError("plane-fit", str(exc)) from exc
    label_sets = sf.build_label_sets(sp, boundaries, fitted, n_objects, config.l_max)
    init_scene = sf.state_from_proposals(
        label_sets, np.zeros(len(label_sets), dtype=int), objects, directions
    )
    obs = en.Observations(
        K=bundle.K,
        superpixels=sp,
        boundaries=boundaries,
        sparse={f: bundle.sparse[f] for f in frames},
        blurry=lum,
        anchors=en.AnchorSet(anchors),
        exposure=config.exposure,
        directions=tuple(directions),
    )
    return InitState(obs, objects, label_sets, init_scene, filled)


def restore_color(scene, bundle: InputBundle, obs, config: PipelineConfig) -> dict:
    """Per-channel restoration with the shared scene kernels."""
    out = {f: np.zeros_like(bundle.blurry[f]) for f in obs.frames}
    problem = db.problem_from_scene(scene, obs, config.weights, config.steps)
    for ch in range(3):
        problem.blurry = {f: bundle.blurry[f][:, :, ch] for f in obs.frames}
        latents = {f: problem.blurry[f].copy() for f in obs.frames}
        restored, _ = db.deblur_sequence(
            latents, problem, config.inner_iters, config.gs_passes
        )
        for f in obs.frames:
            out[f][:, :, ch] = restored[f]
    return out


def run_joint(
    bundle: InputBundle,
    config: PipelineConfig,
    dataset=None,
    with_color: bool = True,
) -> RunResult:
    """Full alternation; ``dataset`` (if given) supplies ground truth metrics."""
    init = initialize(bundle, config)
    obs = init.obs
    weights = config.weights
    scene = init.scene
    latents = {f: obs.blurry[f].copy() for f in obs.frames}

    trace = [("init", en.total_energy(scene, latents, obs, weights))]
    metric_trace = {"depth_bad_ratio": [], "flow_bad_ratio": [], "psnr": [], "ssim": []}

    def record_metrics():
        if dataset is None:
            return
        report = evaluate_state(scene, latents, obs, dataset, config)
        for key in metric_trace:
            metric_trace[key].append(getattr(report, key))

    record_metrics()
    for it in range(config.outer_iterations):
        try:
            scene, info = sf.scene_step(
                scene,
                init.label_sets,
                init.objects,
                obs,
                latents,
                weights,
                config.trws_sweeps,
                config.trws_tol,
                breakdown_before=trace[-1][1],
            )
        except Exception as exc:
            raise StageError(f"scene-step-{it}", str(exc)) from exc
        trace.append((f"scene_{it}", info.breakdown_after))

        try:
            problem = db.problem_from_scene(scene, obs, weights, config.steps)
            latents, _ = db.deblur_sequence(
                latents, problem, config.inner_iters, config.gs_passes, clamp=False
            )
        except Exception as exc:
            raise StageError(f"deblur-step-{it}", str(exc)) from exc
        trace.append((f"deblur_{it}", en.total_energy(scene, latents, obs, weights)))
        record_metrics()

    final_latents = {f: np.clip(latents[f], 0.0, 1.0) for f in obs.frames}
    depth = scene_mod.render_depth(scene, obs.superpixels, obs.K)
    report = None
    if dataset is not None:
        report = evaluate_state(scene, final_latents, obs, dataset, config)
        report.trace = metric_trace
    color = None
    if with_color:
        color = restore_color(scene, bundle, obs, config)
    return RunResult(
        scene=scene,
        init_scene=init.scene,
        depth=depth,
        latents=final_latents,
        restored_color=color,
        energy_trace=trace,
        metrics=report,
        obs=obs,
    )


def evaluate_state(scene, latents, obs, dataset, config: PipelineConfig) -> mx.MetricsReport:
    """Metrics of a scene/latent pair against dataset ground truth."""
    depth = scene_mod.render_depth(scene, obs.superpixels, obs.K)
    direction = "next" if "next" in obs.directions else "prev"
    flow = scene_mod.render_flow(scene, obs.superpixels, obs.K, direction)
    restored = np.clip(latents[scene_mod.REF_FRAME], 0.0, 1.0)
    return mx.evaluate(
        depth,
        flow,
        restored,
        dataset.gt_depth,
        dataset.gt_flows[direction],
        luminance(dataset.latents[scene_mod.REF_FRAME]),
        obs.K.fx,
        config.baseline,
    )


def energy_trace_text(trace) -> str:
    lines = []
    for stage, b in trace:
        parts = " ".join(
            f"{name}={getattr(b, name):.9g}"
            for name in ("psi1", "psi2", "psi3", "psi4", "theta1", "theta2", "theta3", "tv", "total")
        )
        lines.append(f"{stage}: {parts}")
    return "\n".join(lines) + "\n"


def write_result(directory, result: RunResult) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_depth_png(directory / "completed_depth.png", result.depth)
    for f in result.obs.frames:
        if result.restored_color is not None:
            img = np.clip(result.restored_color[f], 0.0, 1.0)
        else:
            img = np.repeat(result.latents[f][:, :, None], 3, axis=2)
        write_color_png(directory / f"restored_{f}.png", img)
    write_label_png(directory / "superpixels.png", result.obs.superpixels.labels)
    if "next" in result.obs.directions:
        from .imaging import write_flow_png

        flow = scene_mod.render_flow(
            result.scene, result.obs.superpixels, result.obs.K, "next"
        )
        write_flow_png(directory / "flow_1to2.png", flow)
    with open(directory / "energy_trace.txt", "w", encoding="utf-8") as fh:
        fh.write(energy_trace_text(result.energy_trace))
    if result.metrics is not None:
        with open(directory / "metrics.txt", "w", encoding="utf-8") as fh:
            fh.write(result.metrics.as_text())


def load_bundle(directory) -> InputBundle:
    """Read the dataset directory layout produced by ``synth``."""
    from .config import parse_kv_file

    directory = Path(directory)
    kv = parse_kv_file(directory / "scene_gt.cfg")
    K = geo.Intrinsics(
        float(kv["fx"]),
        float(kv["fy"]),
        float(kv["cx"]),
        float(kv["cy"]),
        int(kv["width"]),
        int(kv["height"]),
    )
    blurry = {}
    sparse = {}
    for f in (0, 1, 2):
        blurry[f] = read_color_png(directory / f"blur_{f}.png")
        sparse[f] = read_depth_png(directory / f"sparse_{f}.png")
        if blurry[f].shape[:2] != (K.height, K.width) or sparse[f].shape != (
            K.height,
            K.width,
        ):
            raise DimensionMismatchError(f"frame {f} does not match scene_gt.cfg size")
    return InputBundle(K=K, blurry=blurry, sparse=sparse)
