"""Acceptance criteria, one test per criterion, at the stated tolerances.

Run with ``pytest -v -s tests/test_acceptance.py`` to see one PASS line
per criterion.  The joint-pipeline criteria run the full solver on the
frozen 128x160 suite and take a few minutes.
"""

import itertools
import time

import numpy as np
import pytest

from depthdeblur import deblur as db
from depthdeblur import energy as en
from depthdeblur import geometry as geo
from depthdeblur import metrics as mx
from depthdeblur import pipeline as pl
from depthdeblur import sceneflow as sf
from depthdeblur import suite
from depthdeblur import synthetic as syn
from depthdeblur import trws
from depthdeblur.blur import ExposureModel, build_blur_kernel
from depthdeblur.config import PipelineConfig
from depthdeblur.imaging import bilinear_sample, luminance


def report(criterion, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance {criterion}] {status}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def suite_datasets():
    return {
        i: syn.generate(suite.suite_scene(i), seed=suite.SUITE_SEEDS[i])
        for i in range(5)
    }


@pytest.fixture(scope="module")
def joint_runs(suite_datasets):
    """Full 6-iteration joint runs on the suite (criteria 7 and 9)."""
    runs = {}
    for i, ds in suite_datasets.items():
        t0 = time.time()
        cfg = PipelineConfig(outer_iterations=6)
        res = pl.run_joint(pl.bundle_from_dataset(ds), cfg, dataset=ds, with_color=False)
        runs[i] = (res, time.time() - t0)
    return runs


def test_criterion_1_blur_operator_oracle():
    rng = np.random.default_rng(42)
    t0 = time.time()
    exposure = ExposureModel(6, 0.7)
    worst = 0.0
    worst_row = 0.0
    for _ in range(20):
        h, w = 32, 32
        latent = rng.random((h, w))
        fwd = rng.uniform(-4, 4, size=(h, w, 2))
        bwd = rng.uniform(-4, 4, size=(h, w, 2))
        kernel = build_blur_kernel(fwd, bwd, exposure, (h, w))
        via_operator = kernel.apply(latent)

        # direct evaluation of the trajectory average via bilinear sampling
        xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        acc = np.zeros((h, w))
        n_half = exposure.half_samples
        for n in range(-n_half, n_half + 1):
            if n == 0:
                px, py = xs, ys
            elif n > 0:
                s = (n / n_half) * exposure.duty_cycle / 2.0
                px, py = xs + s * fwd[:, :, 0], ys + s * fwd[:, :, 1]
            else:
                s = (-n / n_half) * exposure.duty_cycle / 2.0
                px, py = xs + s * bwd[:, :, 0], ys + s * bwd[:, :, 1]
            vals, _ = bilinear_sample(latent, px, py)
            acc += vals
        direct = acc / (2 * n_half + 1)
        worst = max(worst, float(np.abs(via_operator - direct).max()))
        sums = np.asarray(kernel.matrix.sum(axis=1)).ravel()
        worst_row = max(worst_row, float(np.abs(sums - 1.0).max()))
    elapsed = time.time() - t0
    report(
        1,
        worst < 1e-6 and worst_row < 1e-6 and elapsed < 10.0,
        f"operator vs direct {worst:.2e}, row-sum dev {worst_row:.2e}, {elapsed:.1f}s",
    )


def test_criterion_2_geometry_oracle():
    rng = np.random.default_rng(7)
    t0 = time.time()
    count = 0
    worst_px = 0.0
    worst_plane = 0.0
    while count < 1000:
        K = geo.Intrinsics(
            rng.uniform(50, 300),
            rng.uniform(50, 300),
            rng.uniform(10, 50),
            rng.uniform(10, 40),
            64,
            48,
        )
        n = rng.normal(scale=0.1, size=3) + np.array([0.0, 0.0, 0.4])
        motion = geo.motion_from_axis_angle(
            rng.normal(size=3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3, size=3)
        )
        x = np.array([rng.uniform(0, 64), rng.uniform(0, 48)])
        depths, valid = geo.plane_depth_map(K, n, x[0], x[1])
        if not valid:
            continue
        X = geo.backproject(K, x, float(depths))
        worst_plane = max(worst_plane, abs(float(n @ X) - 1.0))
        moved = motion.apply(X)
        if moved[2] <= 1e-3:
            continue
        try:
            H = geo.homography_from_plane_motion(K, n, motion)
        except geo.NonInvertibleError:
            continue
        xw, yw, ok = geo.apply_homography(H, x[0], x[1])
        assert ok
        expected = geo.project(K, moved)
        worst_px = max(worst_px, float(np.abs(np.array([xw, yw]) - expected).max()))
        count += 1
    elapsed = time.time() - t0
    report(
        2,
        worst_px < 1e-6 and worst_plane < 1e-9 and elapsed < 5.0,
        f"warp vs transform {worst_px:.2e} px, plane residual {worst_plane:.2e}, {elapsed:.1f}s",
    )


def test_criterion_3_adjointness():
    rng = np.random.default_rng(11)
    h, w = 24, 20
    fwd = rng.uniform(-5, 5, size=(h, w, 2))
    bwd = rng.uniform(-5, 5, size=(h, w, 2))
    kernel = build_blur_kernel(fwd, bwd, ExposureModel(8, 0.9), (h, w))
    worst = 0.0
    for _ in range(100):
        u = rng.standard_normal((h, w))
        v = rng.standard_normal((h, w))
        lhs = float(np.sum(kernel.apply(u) * v))
        rhs = float(np.sum(u * kernel.apply_adjoint(v)))
        worst = max(worst, abs(lhs - rhs))
    report(3, worst < 1e-9, f"max |<Au,v> - <u,A^T v>| = {worst:.2e}")


def _enumerate_map(problem):
    sizes = [len(u) for u in problem.unaries]
    best = np.inf
    for combo in itertools.product(*[range(s) for s in sizes]):
        e = trws.energy_of(problem, list(combo))
        best = min(best, e)
    return best


def test_criterion_4_trws_trees_and_bounds():
    rng = np.random.default_rng(23)
    worst_gap = 0.0
    worst_bound_step = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 11))
        sizes = [int(rng.integers(1, 5)) for _ in range(n)]
        unaries = [rng.normal(size=s) * rng.uniform(0.5, 2) for s in sizes]
        edges = []
        for j in range(1, n):
            i = int(rng.integers(0, j))
            edges.append((i, j, rng.normal(size=(sizes[i], sizes[j]))))
        p = trws.PairwiseProblem(unaries, edges)
        res = trws.solve(p, max_sweeps=80, bound_tol=0.0)
        opt = _enumerate_map(p)
        worst_gap = max(worst_gap, abs(res.energy - opt))
        steps = np.diff(res.lower_bounds)
        if len(steps):
            worst_bound_step = max(worst_bound_step, float(-steps.min()))
    # grids: bound monotone as well
    for _ in range(10):
        unaries = [rng.normal(size=3) for _ in range(9)]
        edges = []
        for r in range(3):
            for c in range(3):
                i = r * 3 + c
                if c + 1 < 3:
                    edges.append((i, i + 1, rng.normal(size=(3, 3))))
                if r + 1 < 3:
                    edges.append((i, i + 3, rng.normal(size=(3, 3))))
        p = trws.PairwiseProblem(unaries, edges)
        res = trws.solve(p, max_sweeps=60, bound_tol=0.0)
        steps = np.diff(res.lower_bounds)
        if len(steps):
            worst_bound_step = max(worst_bound_step, float(-steps.min()))
        assert res.lower_bounds[-1] <= _enumerate_map(p) + 1e-9
    report(
        4,
        worst_gap < 1e-9 and worst_bound_step < 1e-9,
        f"tree MAP gap {worst_gap:.2e}, worst bound decrease {worst_bound_step:.2e}",
    )


def test_criterion_5_primal_dual_descent(suite_datasets):
    weights = en.EnergyWeights()
    worst_rel = -np.inf
    feasible = True
    for i, ds in suite_datasets.items():
        blurry_lum = {f: luminance(ds.blurry[f]) for f in (0, 1, 2)}
        problem = db.problem_from_flows(
            ds.gt_frame_flows, blurry_lum, ds.spec.exposure, weights
        )
        latents = {f: blurry_lum[f].copy() for f in (0, 1, 2)}
        out, trace = db.deblur_sequence(latents, problem, inner_iters=30, passes=10)
        e = np.array(trace.pass_energies)
        rel = np.diff(e) / np.maximum(1.0, np.abs(e[:-1]))
        worst_rel = max(worst_rel, float(rel.max()) if len(rel) else 0.0)

        # dual feasibility after every update on an instrumented loop
        p = np.zeros(blurry_lum[1].shape + (2,))
        q = np.zeros(blurry_lum[1].shape)
        I1 = latents[1]
        for _ in range(20):
            p = db.dual_update_p(p, I1, problem.steps.gamma)
            norms = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
            feasible &= bool(norms.max() <= 1.0 + 1e-12)
            maps = problem.warps["next"]
            from depthdeblur.imaging import sample_centered

            warped, inside = sample_centered(latents[2], maps.fwd_x, maps.fwd_y)
            q = db.dual_update_q(q, I1, warped, inside & maps.fwd_valid, problem.steps.mu)
            feasible &= bool(np.abs(q).max() <= 1.0)
    report(
        5,
        worst_rel <= 1e-6 and feasible,
        f"worst relative energy increase {worst_rel:.2e}, duals feasible {feasible}",
    )


def test_criterion_6_deblurring_gain(suite_datasets):
    weights = en.EnergyWeights()
    gains = []
    times = []
    for i, ds in suite_datasets.items():
        t0 = time.time()
        blurry_lum = {f: luminance(ds.blurry[f]) for f in (0, 1, 2)}
        latent_lum = luminance(ds.latents[1])
        problem = db.problem_from_flows(
            ds.gt_frame_flows, blurry_lum, ds.spec.exposure, weights
        )
        latents = {f: blurry_lum[f].copy() for f in (0, 1, 2)}
        out, _ = db.deblur_sequence(latents, problem, inner_iters=30, passes=2)
        base = mx.psnr(blurry_lum[1], latent_lum)
        restored = mx.psnr(out[1], latent_lum)
        gains.append(restored - base)
        times.append(time.time() - t0)
    ok = all(g >= 3.0 for g in gains) and all(t < 120.0 for t in times)
    report(
        6,
        ok,
        "gains "
        + " ".join(f"{g:+.2f}" for g in gains)
        + f" dB, max {max(times):.0f}s/scene",
    )


def test_criterion_7_joint_pipeline(joint_runs):
    ok = True
    details = []
    for i, (res, elapsed) in joint_runs.items():
        totals = [b.total for _, b in res.energy_trace]
        monotone = all(
            b <= a + 1e-6 * max(1.0, abs(a)) for a, b in zip(totals, totals[1:])
        )
        dtrace = res.metrics.trace["depth_bad_ratio"]
        improved = dtrace[-1] < dtrace[0]
        plateau = abs(dtrace[3] - dtrace[6]) < 0.5
        in_time = elapsed < 600.0
        ok &= monotone and improved and plateau and in_time
        details.append(
            f"s{i}: mono={monotone} depth {dtrace[0]:.2f}->{dtrace[-1]:.2f} "
            f"plateau {abs(dtrace[3]-dtrace[6]):.3f} {elapsed:.0f}s"
        )
    report(7, ok, "; ".join(details))


def test_criterion_8_static_scene():
    ds = syn.generate(suite.static_scene(), seed=77)
    cfg = PipelineConfig(outer_iterations=2)
    res = pl.run_joint(pl.bundle_from_dataset(ds), cfg, dataset=ds, with_color=False)
    psnr_restored = mx.psnr(res.latents[1], luminance(ds.latents[1]))
    ok = res.metrics.depth_bad_ratio == 0.0 and psnr_restored >= 50.0
    report(
        8,
        ok,
        f"depth_bad {res.metrics.depth_bad_ratio:.4f}%, restored-vs-latent {psnr_restored:.1f} dB",
    )


def test_criterion_9_two_motion_recovery(suite_datasets, joint_runs):
    spec = suite.two_motion_scene()
    ds = suite_datasets[4]
    K = ds.K

    # clean anchors straight from the generating scene
    rng = np.random.default_rng(5)
    xs, ys = geo.pixel_grid(K.width, K.height)
    pick = (slice(4, None, 6), slice(4, None, 6))
    xy = np.stack([xs[pick].ravel(), ys[pick].ravel()], axis=1)
    cols = (xy[:, 0] - 0.5).astype(int)
    rows = (xy[:, 1] - 0.5).astype(int)
    plane_obj = np.array([p.object_id for p in spec.planes])
    objs = plane_obj[ds.gt_plane_idx[rows, cols]]
    depths = ds.gt_depth.values[rows, cols]
    X = geo.backproject(K, xy, depths)
    truth = {k: spec.apparent(k, "next") for k in (0, 1)}
    tgt = np.where((objs == 1)[:, None], truth[1].apply(X), truth[0].apply(X))
    tgt_xy = geo.project(K, tgt)
    # exact target-frame depth for the 3D-3D fit
    frames, _ = syn.render_ground_truth(spec)
    motions = sf.ransac_motions(
        xy, tgt_xy, ds.gt_depth.values, frames[2].depth.values, K, seed=3
    )

    def err_of(motion, true_motion):
        rel = motion.R @ true_motion.R.T
        angle = np.arccos(np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0))
        return max(float(angle), float(np.abs(motion.t - true_motion.t).max()))

    best = {k: min(err_of(m, truth[k]) for m in motions) for k in (0, 1)}
    recovery_ok = best[0] < 1e-3 and best[1] < 1e-3

    # labeling from the full joint run
    res, _ = joint_runs[4]
    sp = res.obs.superpixels
    true_obj = truth[1]
    motion_err = [
        np.abs(m.t - true_obj.t).max() + np.abs(m.R - true_obj.R).max()
        for m in res.scene.motions["next"]
    ]
    correct_k = int(np.argmin(motion_err))
    n_obj = n_correct = 0
    for i, (r, c) in enumerate(sp.regions):
        if (ds.gt_plane_idx[r, c] == 1).mean() > 0.5:
            n_obj += 1
            n_correct += int(res.scene.labels[i] == correct_k)
    label_frac = n_correct / max(1, n_obj)
    report(
        9,
        recovery_ok and label_frac >= 0.95,
        f"motion errs cam {best[0]:.2e} obj {best[1]:.2e}; labeling {100*label_frac:.0f}% of {n_obj}",
    )


def test_criterion_10_determinism(tmp_path):
    from depthdeblur import cli

    spec = suite.suite_scene(0)
    kv = syn.spec_to_kv(spec)
    kv["width"] = 80
    kv["height"] = 64
    kv["fx"] = kv["fy"] = "100"
    kv["cx"] = "40"
    kv["cy"] = "32"
    kv["exposure_n"] = 6
    spec_path = tmp_path / "scene.cfg"
    from depthdeblur.config import format_kv

    spec_path.write_text(format_kv(kv))
    cfg_path = tmp_path / "fast.cfg"
    cfg_path.write_text("outer_iterations = 1\ninner_iters = 6\ngs_passes = 1\n")

    identical = True
    for name in ("a", "b"):
        assert cli.main(["synth", "--spec", str(spec_path), "--out", str(tmp_path / f"d{name}"), "--seed", "7"]) == 0
        assert (
            cli.main(
                [
                    "run",
                    "--in",
                    str(tmp_path / f"d{name}"),
                    "--config",
                    str(cfg_path),
                    "--out",
                    str(tmp_path / f"r{name}"),
                    "--no-color",
                ]
            )
            == 0
        )
    for sub in ("d", "r"):
        for f in sorted((tmp_path / f"{sub}a").iterdir()):
            other = tmp_path / f"{sub}b" / f.name
            if f.read_bytes() != other.read_bytes():
                identical = False
    report(10, identical, "synth and run outputs byte-identical across reruns")
