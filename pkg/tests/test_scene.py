import numpy as np
import pytest

from depthdeblur import geometry as geo
from depthdeblur import scene as sc
from depthdeblur.blur import ExposureModel, build_blur_kernel

from conftest import superpixels_from_labels


def identity_motions(n=1):
    return {
        "prev": [geo.RigidMotion.identity() for _ in range(n)],
        "next": [geo.RigidMotion.identity() for _ in range(n)],
    }


class TestWarpByScene:
    def test_identity_scene_is_identity(self):
        rng = np.random.default_rng(0)
        h, w = 6, 9
        img = rng.random((h, w))
        sp = superpixels_from_labels(np.zeros((h, w), dtype=np.int32))
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        K = geo.Intrinsics(1.0, 1.0, 0.0, 0.0, w, h)
        warped, mask = sc.warp_by_scene(img, scene, sp, K, "next")
        assert np.allclose(warped, img)
        assert mask.all()

    def test_uniform_shift(self):
        # -5 px shift homography: output is the target shifted right by 5,
        # leftmost 5 columns invalid
        rng = np.random.default_rng(1)
        h, w = 6, 12
        target = rng.random((h, w))
        sp = superpixels_from_labels(np.zeros((h, w), dtype=np.int32))
        K = geo.Intrinsics(100.0, 100.0, 6.0, 3.0, w, h)
        motions = identity_motions()
        motions["next"] = [geo.RigidMotion(np.eye(3), np.array([0.1, 0.0, 0.0]))]
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), motions)
        warped, mask = sc.warp_by_scene(target, scene, sp, K, "next")
        assert np.allclose(warped[:, 5:], target[:, :-5])
        assert mask[:, 5:].all()
        assert not mask[:, :5].any()

    def test_piecewise_shift_matches_brute_force(self):
        rng = np.random.default_rng(2)
        h, w = 8, 10
        target = rng.random((h, w))
        labels = np.zeros((h, w), dtype=np.int32)
        labels[:, 5:] = 1
        sp = superpixels_from_labels(labels)
        K = geo.Intrinsics(100.0, 100.0, 5.0, 4.0, w, h)
        motions = identity_motions(2)
        motions["next"] = [
            geo.RigidMotion(np.eye(3), np.array([0.04, 0.0, 0.0])),
            geo.RigidMotion(np.eye(3), np.array([0.0, 0.02, 0.0])),
        ]
        planes = np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 0.5]])
        scene = sc.SceneState(planes, np.array([0, 1]), motions)
        warped, mask = sc.warp_by_scene(target, scene, sp, K, "next")

        homs = sc.superpixel_homographies(scene, K, "next")
        from depthdeblur.imaging import sample_centered

        for r in range(h):
            for c in range(w):
                H = homs[labels[r, c]]
                xw, yw, ok = geo.apply_homography(H, c + 0.5, r + 0.5)
                val, inside = sample_centered(target, xw, yw)
                if ok and inside:
                    assert warped[r, c] == pytest.approx(float(val))
                    assert mask[r, c]
                else:
                    assert not mask[r, c]


class TestRendering:
    def test_render_depth_per_region(self):
        h, w = 4, 6
        labels = np.zeros((h, w), dtype=np.int32)
        labels[:, 3:] = 1
        sp = superpixels_from_labels(labels)
        K = geo.Intrinsics(1.0, 1.0, 0.0, 0.0, w, h)
        planes = np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 0.25]])
        scene = sc.SceneState(planes, np.array([0, 1]), identity_motions(2))
        depth = sc.render_depth(scene, sp, K)
        assert np.allclose(depth.values[:, :3], 2.0)
        assert np.allclose(depth.values[:, 3:], 4.0)
        assert depth.valid.all()

    def test_render_flow_identity(self):
        h, w = 4, 6
        sp = superpixels_from_labels(np.zeros((h, w), dtype=np.int32))
        K = geo.Intrinsics(1.0, 1.0, 0.0, 0.0, w, h)
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        flow = sc.render_flow(scene, sp, K, "prev")
        assert np.allclose(flow.uv, 0.0)
        assert flow.valid.all()

    def test_transformed_depth(self):
        h, w = 4, 6
        sp = superpixels_from_labels(np.zeros((h, w), dtype=np.int32))
        K = geo.Intrinsics(1.0, 1.0, 0.0, 0.0, w, h)
        motions = identity_motions()
        motions["next"] = [geo.RigidMotion(np.eye(3), np.array([0.0, 0.0, -0.1]))]
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), motions)
        z, valid = sc.transformed_depth(scene, sp, K, "next")
        assert np.allclose(z, 2.1)
        assert valid.all()


class TestFrameFlowPairs:
    def test_identity_scene_zero_everywhere(self):
        h, w = 5, 7
        sp = superpixels_from_labels(np.zeros((h, w), dtype=np.int32))
        K = geo.Intrinsics(1.0, 1.0, 0.0, 0.0, w, h)
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        pairs = sc.frame_flow_pairs(scene, sp, K, ("prev", "next"))
        assert sorted(pairs) == [0, 1, 2]
        for fwd, bwd in pairs.values():
            assert np.allclose(fwd.uv, 0.0)
            assert np.allclose(bwd.uv, 0.0)

    def test_outer_frame_flows_invert_reference(self):
        # pure shift: frame 0's flow to the reference is minus the
        # reference's flow to frame 0
        h, w = 6, 10
        sp = superpixels_from_labels(np.zeros((h, w), dtype=np.int32))
        K = geo.Intrinsics(100.0, 100.0, 5.0, 3.0, w, h)
        motions = identity_motions()
        motions["prev"] = [geo.RigidMotion(np.eye(3), np.array([0.1, 0.0, 0.0]))]
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), motions)
        pairs = sc.frame_flow_pairs(scene, sp, K, ("prev", "next"))
        ref_bwd = pairs[1][1]
        assert np.allclose(ref_bwd.uv[:, :, 0], -5.0)
        frame0_fwd, frame0_bwd = pairs[0]
        assert np.allclose(frame0_fwd.uv[:, :, 0], 5.0)
        assert np.allclose(frame0_bwd.uv[:, :, 0], -5.0)

    def test_blur_from_scene_flows_is_row_stochastic(self):
        rng = np.random.default_rng(3)
        h, w = 8, 8
        sp = superpixels_from_labels(np.zeros((h, w), dtype=np.int32))
        K = geo.Intrinsics(50.0, 50.0, 4.0, 4.0, w, h)
        motions = identity_motions()
        motions["next"] = [geo.motion_from_axis_angle([0, 0, 1], 0.01, [0.05, 0.0, 0.0])]
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), motions)
        pairs = sc.frame_flow_pairs(scene, sp, K, ("next",))
        for frame, (fwd, bwd) in pairs.items():
            kernel = build_blur_kernel(fwd, bwd, ExposureModel(5, 0.5), (h, w))
            sums = np.asarray(kernel.matrix.sum(axis=1)).ravel()
            assert np.abs(sums - 1.0).max() < 1e-6
