import numpy as np
import pytest

from depthdeblur import energy as en
from depthdeblur import geometry as geo
from depthdeblur import scene as sc
from depthdeblur.blur import ExposureModel
from depthdeblur.imaging import DepthMap
from depthdeblur.superpixels import extract_boundaries

from conftest import superpixels_from_labels


def unit_K(width=8, height=6):
    return geo.Intrinsics(1.0, 1.0, 0.0, 0.0, width, height)


def identity_motions(n_objects=1):
    return {
        "prev": [geo.RigidMotion.identity() for _ in range(n_objects)],
        "next": [geo.RigidMotion.identity() for _ in range(n_objects)],
    }


def single_superpixel_obs(width=8, height=6, K=None, sparse_ref=None, **kw):
    K = K or unit_K(width, height)
    sp = superpixels_from_labels(np.zeros((height, width), dtype=np.int32))
    if sparse_ref is None:
        sparse_ref = DepthMap(np.zeros((height, width)), np.zeros((height, width), bool))
    empty = DepthMap(np.zeros((height, width)), np.zeros((height, width), bool))
    blurry = kw.pop("blurry", {f: np.zeros((height, width)) for f in (0, 1, 2)})
    return en.Observations(
        K=K,
        superpixels=sp,
        boundaries=extract_boundaries(sp),
        sparse={0: empty, 1: sparse_ref, 2: kw.pop("sparse_next", empty)},
        blurry=blurry,
        anchors=en.AnchorSet.empty(),
        exposure=kw.pop("exposure", ExposureModel(0, 1.0)),
        **kw,
    )


class TestPsi1:
    def test_exact_planes_zero(self):
        h, w = 6, 8
        values = np.full((h, w), 2.0)
        valid = np.ones((h, w), bool)
        obs = single_superpixel_obs(w, h, sparse_ref=DepthMap(values, valid))
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        assert en.psi1(scene, obs, en.EnergyWeights()) == pytest.approx(0.0)

    def test_hand_sum(self):
        # 3 measured pixels at 2.0 m, plane at 2.5 m, w1 = 1 -> 1.5
        h, w = 6, 8
        values = np.zeros((h, w))
        valid = np.zeros((h, w), bool)
        for r, c in [(0, 0), (2, 3), (5, 7)]:
            values[r, c] = 2.0
            valid[r, c] = True
        obs = single_superpixel_obs(w, h, sparse_ref=DepthMap(values, valid))
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.4]]), np.zeros(1, int), identity_motions())
        weights = en.EnergyWeights(w1=1.0)
        assert en.psi1(scene, obs, weights) == pytest.approx(1.5)

    def test_empty_measurements_zero(self):
        obs = single_superpixel_obs()
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        assert en.psi1(scene, obs, en.EnergyWeights()) == 0.0

    def test_invalid_depth_capped(self):
        h, w = 6, 8
        valid = np.zeros((h, w), bool)
        valid[1, 1] = True
        values = np.where(valid, 2.0, 0.0)
        obs = single_superpixel_obs(w, h, sparse_ref=DepthMap(values, valid))
        # plane through the camera: invalid at every pixel
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.0]]), np.zeros(1, int), identity_motions())
        weights = en.EnergyWeights(w1=2.0, alpha1=0.3)
        assert en.psi1(scene, obs, weights) == pytest.approx(2.0 * 0.3)


class TestPsi2:
    def test_static_consistent_zero(self):
        h, w = 6, 8
        values = np.full((h, w), 2.0)
        valid = np.ones((h, w), bool)
        obs = single_superpixel_obs(
            w, h, sparse_ref=DepthMap(values, valid), sparse_next=DepthMap(values, valid)
        )
        obs.sparse[0] = DepthMap(values, valid)
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        assert en.psi2(scene, obs, en.EnergyWeights()) == pytest.approx(0.0)

    def test_transformed_depth_example(self):
        # plane at 2 m; object recedes by 0.1 m (t = (0,0,-0.1) moves points
        # as X - t); target measurements 2.1 -> zero, 2.3 -> w2 * 0.2 each
        h, w = 6, 8
        K = unit_K(w, h)
        motions = identity_motions()
        motions["next"] = [geo.RigidMotion(np.eye(3), np.array([0.0, 0.0, -0.1]))]
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), motions)

        ones = np.ones((h, w), bool)
        for target_value, per_px in [(2.1, 0.0), (2.3, 0.2)]:
            obs = single_superpixel_obs(
                w, h, K=K, sparse_next=DepthMap(np.full((h, w), target_value), ones)
            )
            got = en.psi2(scene, obs, en.EnergyWeights(w2=2.0))
            assert got == pytest.approx(2.0 * per_px * h * w, abs=1e-9)

    def test_unmatched_warps_contribute_zero(self):
        h, w = 6, 8
        obs = single_superpixel_obs(w, h)  # no measurements anywhere
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        assert en.psi2(scene, obs, en.EnergyWeights()) == 0.0


def two_region_scene(n0, n1, labels=(0, 1), h=4, w=6):
    sp_labels = np.zeros((h, w), dtype=np.int32)
    sp_labels[:, w // 2 :] = 1
    sp = superpixels_from_labels(sp_labels)
    motions = {
        "prev": [geo.RigidMotion.identity(), geo.RigidMotion.identity()],
        "next": [geo.RigidMotion.identity(), geo.RigidMotion.identity()],
    }
    scene = sc.SceneState(np.array([n0, n1]), np.array(labels), motions)
    empty = DepthMap(np.zeros((h, w)), np.zeros((h, w), bool))
    obs = en.Observations(
        K=unit_K(w, h),
        superpixels=sp,
        boundaries=extract_boundaries(sp),
        sparse={0: empty, 1: empty, 2: empty},
        blurry={f: np.zeros((h, w)) for f in (0, 1, 2)},
        anchors=en.AnchorSet.empty(),
        exposure=ExposureModel(0, 1.0),
    )
    return scene, obs


class TestPsi3:
    def test_same_object_zero(self):
        scene, obs = two_region_scene([0, 0, 0.5], [0, 0, 0.25], labels=(0, 0))
        assert en.psi3(scene, obs, en.EnergyWeights()) == 0.0

    def test_agreeing_planes_full_cost(self):
        scene, obs = two_region_scene([0, 0, 0.5], [0, 0, 0.5], labels=(0, 1))
        weights = en.EnergyWeights(w3=1.7)
        assert en.psi3(scene, obs, weights) == pytest.approx(1.7)

    def test_one_meter_gap(self):
        # parallel planes at 2 m and 3 m: omega = 1 m everywhere, lambda 1
        scene, obs = two_region_scene([0, 0, 0.5], [0, 0, 1.0 / 3.0], labels=(0, 1))
        weights = en.EnergyWeights(w3=1.0, lam=1.0)
        assert en.psi3(scene, obs, weights) == pytest.approx(np.exp(-1.0))

    def test_larger_gap_cheaper(self):
        weights = en.EnergyWeights(w3=1.0, lam=0.5)
        scene_a, obs = two_region_scene([0, 0, 0.5], [0, 0, 1.0 / 3.0], labels=(0, 1))
        scene_b, _ = two_region_scene([0, 0, 0.5], [0, 0, 0.2], labels=(0, 1))
        assert en.psi3(scene_b, obs, weights) < en.psi3(scene_a, obs, weights)


class TestPsi4:
    def test_shared_plane_zero(self):
        scene, obs = two_region_scene([0, 0, 0.5], [0, 0, 0.5])
        assert en.psi4(scene, obs, en.EnergyWeights()) == pytest.approx(0.0)

    def test_scaled_normal(self):
        # n vs 2n: depths 2 and 1 -> gap 1 truncated to alpha1; normals aligned
        scene, obs = two_region_scene([0, 0, 0.5], [0, 0, 1.0])
        weights = en.EnergyWeights(alpha1=0.3, alpha3=0.4)
        n_boundary = len(obs.boundaries.pairs[(0, 1)][0])
        assert en.psi4(scene, obs, weights) == pytest.approx(0.3 * n_boundary)

    def test_perpendicular_equal_depth(self):
        # 1x2 image: both boundary pixels share y = 0.5 so a perpendicular
        # plane can match depths exactly; only the normal term remains
        sp = superpixels_from_labels(np.array([[0, 1]], dtype=np.int32))
        motions = identity_motions(2)
        scene = sc.SceneState(
            np.array([[0.0, 0.0, 0.25], [0.0, 0.5, 0.0]]), np.array([0, 1]), motions
        )
        empty = DepthMap(np.zeros((1, 2)), np.zeros((1, 2), bool))
        obs = en.Observations(
            K=unit_K(2, 1),
            superpixels=sp,
            boundaries=extract_boundaries(sp),
            sparse={0: empty, 1: empty, 2: empty},
            blurry={f: np.zeros((1, 2)) for f in (0, 1, 2)},
            anchors=en.AnchorSet.empty(),
            exposure=ExposureModel(0, 1.0),
        )
        weights = en.EnergyWeights(alpha3=0.3)
        assert en.psi4(scene, obs, weights) == pytest.approx(0.3)


class TestTheta1:
    def test_identical_frames_identity_zero(self):
        rng = np.random.default_rng(0)
        h, w = 6, 8
        img = rng.random((h, w))
        obs = single_superpixel_obs(w, h)
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        latents = {0: img, 1: img, 2: img}
        assert en.theta1(scene, latents, obs, en.EnergyWeights()) == pytest.approx(0.0)

    def test_shift_realignment(self):
        rng = np.random.default_rng(1)
        h, wide = 6, 16
        base = rng.random((h, wide))
        ref = base[:, :-5]
        target = base[:, 5:]
        w = ref.shape[1]
        K = geo.Intrinsics(100.0, 100.0, 5.0, 3.0, w, h)
        # -5 px shift homography from t = (0.1, 0, 0) on the 2 m plane
        motions = identity_motions()
        motions["next"] = [geo.RigidMotion(np.eye(3), np.array([0.1, 0.0, 0.0]))]
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), motions)
        obs = single_superpixel_obs(w, h, K=K, directions=("next",))
        latents = {1: ref, 2: target}
        assert en.theta1(scene, latents, obs, en.EnergyWeights()) == pytest.approx(0.0, abs=1e-12)

    def test_constant_offset(self):
        h, w = 6, 8
        obs = single_superpixel_obs(w, h)
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        latents = {0: np.full((h, w), 0.4), 1: np.full((h, w), 0.5), 2: np.full((h, w), 0.4)}
        got = en.theta1(scene, latents, obs, en.EnergyWeights(c1=1.0))
        assert got == pytest.approx(0.1 * h * w * 2)


class TestTheta2:
    def _obs_with_anchor(self, tgt_offset):
        h, w = 6, 8
        obs = single_superpixel_obs(w, h, directions=("next",))
        ref = np.array([[3.5, 2.5]])
        tgt = ref + np.array(tgt_offset)
        obs.anchors = en.AnchorSet({"next": (ref, tgt)})
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        return scene, obs

    def test_gt_anchors_zero(self):
        scene, obs = self._obs_with_anchor([0.0, 0.0])
        assert en.theta2(scene, obs, en.EnergyWeights()) == pytest.approx(0.0)

    def test_two_px_residual(self):
        scene, obs = self._obs_with_anchor([2.0, 0.0])
        assert en.theta2(scene, obs, en.EnergyWeights(c2=1.0, alpha2=5.0)) == pytest.approx(2.0)

    def test_truncation(self):
        scene, obs = self._obs_with_anchor([0.0, 9.0])
        assert en.theta2(scene, obs, en.EnergyWeights(c2=1.0, alpha2=5.0)) == pytest.approx(5.0)

    def test_empty_anchor_set_zero(self):
        h, w = 6, 8
        obs = single_superpixel_obs(w, h)
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        assert en.theta2(scene, obs, en.EnergyWeights()) == 0.0


class TestTheta3:
    def test_zero_flow_equal_images_zero(self):
        rng = np.random.default_rng(2)
        h, w = 6, 8
        img = rng.random((h, w))
        obs = single_superpixel_obs(w, h, blurry={f: img.copy() for f in (0, 1, 2)})
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        latents = {f: img.copy() for f in (0, 1, 2)}
        assert en.theta3(scene, latents, obs, en.EnergyWeights()) == pytest.approx(0.0)

    def test_constant_offset_identity_kernel(self):
        h, w = 6, 8
        blurry = {f: np.full((h, w), 0.3) for f in (0, 1, 2)}
        obs = single_superpixel_obs(w, h, blurry=blurry)
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        latents = {f: np.full((h, w), 0.4) for f in (0, 1, 2)}
        got = en.theta3(scene, latents, obs, en.EnergyWeights(c3=1.0))
        assert got == pytest.approx(3 * 0.01 * h * w)

    def test_convexity_in_latents(self):
        rng = np.random.default_rng(3)
        h, w = 5, 7
        obs = single_superpixel_obs(w, h, blurry={f: rng.random((h, w)) for f in (0, 1, 2)})
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        weights = en.EnergyWeights()
        for _ in range(10):
            a = {f: rng.random((h, w)) for f in (0, 1, 2)}
            b = {f: rng.random((h, w)) for f in (0, 1, 2)}
            mid = {f: 0.5 * (a[f] + b[f]) for f in (0, 1, 2)}
            ea = en.theta3(scene, a, obs, weights)
            eb = en.theta3(scene, b, obs, weights)
            em = en.theta3(scene, mid, obs, weights)
            assert em <= 0.5 * (ea + eb) + 1e-9


class TestTv:
    def test_constant_zero(self):
        assert en.tv_single(np.full((5, 5), 0.3)) == 0.0

    def test_step_edge(self):
        h, w = 7, 6
        img = np.zeros((h, w))
        img[:, 3:] = 1.5
        assert en.tv_single(img) == pytest.approx(1.5 * h)

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(4)
        img = rng.random((6, 6))
        assert en.tv_single(3.0 * img) == pytest.approx(3.0 * en.tv_single(img))


class TestTotal:
    def test_all_weights_zero(self):
        h, w = 6, 8
        obs = single_superpixel_obs(w, h)
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        weights = en.EnergyWeights(
            w1=0, w2=0, w3=0, lam=0, c1=0, c2=0, c3=0, tv_weight=0
        )
        latents = {f: np.zeros((h, w)) for f in (0, 1, 2)}
        breakdown = en.total_energy(scene, latents, obs, weights)
        assert breakdown.total == 0.0

    def test_total_is_sum_of_parts(self):
        rng = np.random.default_rng(5)
        h, w = 6, 8
        values = np.full((h, w), 2.0)
        valid = np.ones((h, w), bool)
        obs = single_superpixel_obs(
            w, h, sparse_ref=DepthMap(values, valid), blurry={f: rng.random((h, w)) for f in (0, 1, 2)}
        )
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.45]]), np.zeros(1, int), identity_motions())
        latents = {f: rng.random((h, w)) for f in (0, 1, 2)}
        b = en.total_energy(scene, latents, obs, en.EnergyWeights())
        parts = b.psi1 + b.psi2 + b.psi3 + b.psi4 + b.theta1 + b.theta2 + b.theta3 + b.tv
        assert b.total == pytest.approx(parts, abs=1e-9)
        assert all(
            getattr(b, n) >= 0
            for n in ("psi1", "psi2", "psi3", "psi4", "theta1", "theta2", "theta3", "tv")
        )

    def test_static_ground_truth_zeroes_data_terms(self):
        rng = np.random.default_rng(6)
        h, w = 6, 8
        img = rng.random((h, w))
        depth_vals = np.full((h, w), 2.0)
        ones = np.ones((h, w), bool)
        sparse = DepthMap(depth_vals, ones)
        obs = single_superpixel_obs(
            w, h, sparse_ref=sparse, blurry={f: img.copy() for f in (0, 1, 2)}
        )
        obs.sparse[0] = sparse
        obs.sparse[2] = sparse
        ref = np.array([[3.5, 2.5]])
        obs.anchors = en.AnchorSet({"prev": (ref, ref.copy()), "next": (ref, ref.copy())})
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        latents = {f: img.copy() for f in (0, 1, 2)}
        b = en.total_energy(scene, latents, obs, en.EnergyWeights())
        assert b.psi1 == pytest.approx(0.0)
        assert b.psi2 == pytest.approx(0.0)
        assert b.theta1 == pytest.approx(0.0)
        assert b.theta2 == pytest.approx(0.0)
        assert b.theta3 == pytest.approx(0.0)
        assert b.total == pytest.approx(b.psi3 + b.psi4 + b.tv)

    def test_perturbing_plane_increases_total(self):
        rng = np.random.default_rng(7)
        h, w = 6, 8
        img = rng.random((h, w))
        depth_vals = np.full((h, w), 2.0)
        ones = np.ones((h, w), bool)
        obs = single_superpixel_obs(
            w, h, sparse_ref=DepthMap(depth_vals, ones), blurry={f: img.copy() for f in (0, 1, 2)}
        )
        scene = sc.SceneState(np.array([[0.0, 0.0, 0.5]]), np.zeros(1, int), identity_motions())
        latents = {f: img.copy() for f in (0, 1, 2)}
        base = en.total_energy(scene, latents, obs, en.EnergyWeights()).total
        worse = sc.SceneState(np.array([[0.0, 0.0, 0.55]]), np.zeros(1, int), identity_motions())
        assert en.total_energy(worse, latents, obs, en.EnergyWeights()).total > base

    def test_breakdown_text(self):
        b = en.EnergyBreakdown(1, 2, 3, 4, 5, 6, 7, 8)
        text = b.as_text()
        assert "total = 36" in text
        assert text.count("=") == 9


class TestMatchSparse:
    def test_nearest_valid_within_one_pixel(self):
        # measurements on an r=4 grid: positions within 1 px of a sample
        # match it, others are unmatched
        h, w = 8, 8
        values = np.zeros((h, w))
        valid = np.zeros((h, w), bool)
        values[0::4, 0::4] = 3.0
        valid[0::4, 0::4] = True
        sparse = DepthMap(values, valid)
        got, found = en.match_sparse(
            sparse,
            np.array([0.5, 1.3, 2.6, 4.4]),  # centered x positions ~ cols
            np.array([0.5, 0.5, 0.5, 0.5]),
        )
        # col 0 sample at x=0.5; x=1.3 is 0.8 away; x=2.6 is 1.9 from col 4's 4.5
        assert found.tolist() == [True, True, False, True]
        assert got[0] == 3.0 and got[1] == 3.0 and got[3] == 3.0
