"""Scene initialization and the discrete scene-flow half-step.

Holds everything that turns raw observations into a labeled scene:
penalized-least-squares depth fill, per-superpixel plane fits, Harris/ZNCC
anchor matching, sequential RANSAC for rigid motions, proposal (label set)
construction, and the TRW-S pass over the superpixel graph.

The TRW-S objective decomposes the joint energy per superpixel; the blur
data term is evaluated on a one-pixel-padded bounding-box patch rendered
entirely under the candidate proposal, which decouples the derivative
filters across superpixel borders.  The returned scene never has higher
true energy than the incoming one (candidates include it, and the step
keeps the better of the two under the exact objective).
"""

from dataclasses import dataclass

import cv2
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linear_sum_assignment

from . import energy as en
from . import geometry as geo
from . import scene as scene_mod
from . import trws
from .errors import (
    DegenerateGeometryError,
    EmptyMeasurementsError,
    InsufficientAnchorsError,
)
from .imaging import DepthMap, bilinear_sample, derivative_filter
from .superpixels import SuperpixelMap


# ---------------------------------------------------------------------------
# depth initialization
# ---------------------------------------------------------------------------


def init_depth_fill(sparse: DepthMap, beta: float = 0.5) -> np.ndarray:
    """Fill a sparse depth map by penalized least squares.

    Minimizes sum_measured (D - D~)^2 + beta ||L D||^2 with L the 4-neighbor
    graph Laplacian, solved directly; constants are reproduced exactly and
    every output pixel is valid.
    """
    if sparse.count_valid() == 0:
        raise EmptyMeasurementsError("depth fill needs at least one measurement")
    h, w = sparse.shape
    n = h * w
    idx = np.arange(n).reshape(h, w)
    rows = []
    cols = []
    vals = []
    deg = np.zeros(n)
    for a, b in (
        (idx[:, :-1].ravel(), idx[:, 1:].ravel()),
        (idx[:-1, :].ravel(), idx[1:, :].ravel()),
    ):
        rows += [a, b]
        cols += [b, a]
        vals += [-np.ones(len(a)), -np.ones(len(b))]
        np.add.at(deg, a, 1.0)
        np.add.at(deg, b, 1.0)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(deg)
    lap = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    mask = sparse.valid.ravel().astype(float)
    system = sp.diags(mask) + beta * (lap.T @ lap)
    rhs = mask * sparse.values.ravel()
    out = spla.spsolve(system.tocsc(), rhs)
    return out.reshape(h, w)


def fit_plane(xy: np.ndarray, depths: np.ndarray, K: geo.Intrinsics) -> np.ndarray:
    """Least-squares plane n minimizing sum (n.X - 1)^2 over backprojections."""
    xy = np.asarray(xy, dtype=float)
    depths = np.asarray(depths, dtype=float)
    if len(xy) < 3:
        raise DegenerateGeometryError("plane fit needs at least 3 pixels")
    X = geo.backproject(K, xy, depths)
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] <= 1e-10 * max(s[0], 1e-300):
        raise DegenerateGeometryError("backprojected points are rank deficient")
    gram = X.T @ X
    return np.linalg.solve(gram, X.sum(axis=0))


def fallback_plane(depths: np.ndarray) -> np.ndarray:
    """Fronto-parallel plane at the median of the given depths."""
    med = float(np.median(depths))
    med = max(med, 1e-3)
    return np.array([0.0, 0.0, 1.0 / med])


# ---------------------------------------------------------------------------
# anchors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureParams:
    max_corners: int = 300
    nms_radius: int = 3
    patch_radius: int = 5  # 11x11 ZNCC patches
    search_radius: int = 32
    min_zncc: float = 0.8
    max_second_ratio: float = 0.98  # rejects exact-periodicity ties only
    harris_k: float = 0.05
    harris_sigma: float = 1.5


def harris_corners(gray: np.ndarray, params: FeatureParams) -> np.ndarray:
    """Top corners by Harris response, non-max suppressed; centered (x, y)."""
    from scipy.ndimage import gaussian_filter, maximum_filter

    gy, gx = np.gradient(gray)
    sxx = gaussian_filter(gx * gx, params.harris_sigma)
    syy = gaussian_filter(gy * gy, params.harris_sigma)
    sxy = gaussian_filter(gx * gy, params.harris_sigma)
    response = sxx * syy - sxy * sxy - params.harris_k * (sxx + syy) ** 2
    peak = maximum_filter(response, size=2 * params.nms_radius + 1)
    margin = params.patch_radius + 1
    keep = (response >= peak) & (response > 1e-12)
    keep[:margin] = keep[-margin:] = False
    keep[:, :margin] = keep[:, -margin:] = False
    rows, cols = np.nonzero(keep)
    if len(rows) == 0:
        return np.zeros((0, 2))
    order = np.argsort(response[rows, cols])[::-1][: params.max_corners]
    return geo.pixel_centers(cols[order], rows[order])


def _zncc_best(img: np.ndarray, patch: np.ndarray, center_rc, radius: int):
    """Best ZNCC score, its (row, col), and the second peak's score.

    The second peak is the best score outside a 5 px exclusion zone around
    the first; near-equal peaks mark repetitive texture.
    """
    h, w = img.shape
    pr = patch.shape[0] // 2
    r0 = max(center_rc[0] - radius - pr, 0)
    r1 = min(center_rc[0] + radius + pr + 1, h)
    c0 = max(center_rc[1] - radius - pr, 0)
    c1 = min(center_rc[1] + radius + pr + 1, w)
    window = img[r0:r1, c0:c1]
    if window.shape[0] < patch.shape[0] or window.shape[1] < patch.shape[1]:
        return -1.0, center_rc, -1.0
    scores = cv2.matchTemplate(
        window.astype(np.float32), patch.astype(np.float32), cv2.TM_CCOEFF_NORMED
    )
    best = np.unravel_index(np.argmax(scores), scores.shape)
    best_score = float(scores[best])
    br0 = max(best[0] - 5, 0)
    bc0 = max(best[1] - 5, 0)
    masked = scores.copy()
    masked[br0 : best[0] + 6, bc0 : best[1] + 6] = -1.0
    second = float(masked.max()) if masked.size else -1.0

    def parabola(idx, axis_len, sm1, s0, sp1):
        denom = sm1 - 2.0 * s0 + sp1
        if denom >= -1e-12 or not (0 < idx < axis_len - 1):
            return 0.0
        return float(np.clip(0.5 * (sm1 - sp1) / denom, -0.5, 0.5))

    dr = parabola(
        best[0],
        scores.shape[0],
        scores[max(best[0] - 1, 0), best[1]],
        best_score,
        scores[min(best[0] + 1, scores.shape[0] - 1), best[1]],
    )
    dc = parabola(
        best[1],
        scores.shape[1],
        scores[best[0], max(best[1] - 1, 0)],
        best_score,
        scores[best[0], min(best[1] + 1, scores.shape[1] - 1)],
    )
    return best_score, (r0 + best[0] + pr + dr, c0 + best[1] + pr + dc), second


def detect_and_match(ref: np.ndarray, target: np.ndarray, params: FeatureParams = FeatureParams()):
    """Mutually consistent Harris/ZNCC correspondences (possibly empty).

    Returns (ref_xy, tgt_xy) in centered coordinates.
    """
    corners = harris_corners(ref, params)
    pr = params.patch_radius
    ref_pts = []
    tgt_pts = []
    h, w = ref.shape
    for x, y in corners:
        r = int(y - 0.5)
        c = int(x - 0.5)
        patch = ref[r - pr : r + pr + 1, c - pr : c + pr + 1]
        score, (tr, tc), second = _zncc_best(
            target, patch, (r, c), params.search_radius
        )
        if score < params.min_zncc or second > params.max_second_ratio * score:
            continue
        tri = int(round(tr))
        tci = int(round(tc))
        if not (pr <= tri < h - pr and pr <= tci < w - pr):
            continue
        back_patch = target[tri - pr : tri + pr + 1, tci - pr : tci + pr + 1]
        back_score, (br, bc), back_second = _zncc_best(
            ref, back_patch, (tri, tci), params.search_radius
        )
        if back_score < params.min_zncc or abs(br - r) > 1.5 or abs(bc - c) > 1.5:
            continue
        if back_second > params.max_second_ratio * back_score:
            continue
        ref_pts.append((c + 0.5, r + 0.5))
        tgt_pts.append((tc + 0.5, tr + 0.5))
    if not ref_pts:
        return np.zeros((0, 2)), np.zeros((0, 2))
    return np.array(ref_pts), np.array(tgt_pts)


# ---------------------------------------------------------------------------
# rigid motion hypotheses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 500
    inlier_px: float = 1.5
    min_inliers: int = 8
    max_objects: int = 5
    # depth-transform gate: |z(moved) - measured target z| must stay below
    # this (meters).  Kills large-rotation compromise motions that fit two
    # depth layers' reprojections at once.
    z_gate: float = 0.15


def _depth_at(depth: np.ndarray, xy: np.ndarray) -> np.ndarray:
    vals, _ = bilinear_sample(depth, xy[:, 0] - 0.5, xy[:, 1] - 0.5)
    return vals


def refine_motion_reprojection(
    motion: geo.RigidMotion,
    X_ref: np.ndarray,
    tgt_xy: np.ndarray,
    K: geo.Intrinsics,
    iters: int = 10,
) -> geo.RigidMotion:
    """Gauss-Newton polish of (R, t) on the target reprojection error.

    Reprojection depends only on reference-frame 3D points, so this drops
    the 3D-3D fit's sensitivity to target-frame depth noise.
    """
    R = motion.R.copy()
    t = motion.t.copy()
    for _ in range(iters):
        Y = X_ref @ R.T
        Xp = Y - t
        z = Xp[:, 2]
        ok = z > 1e-6
        if ok.sum() < 3:
            break
        Y, Xp, z = Y[ok], Xp[ok], z[ok]
        proj = np.stack(
            [K.fx * Xp[:, 0] / z + K.cx, K.fy * Xp[:, 1] / z + K.cy], axis=1
        )
        res = (proj - tgt_xy[ok]).ravel()
        n = len(z)
        # d(pi)/d(X') rows, then X'(omega, dt) = X' + omega x Y - dt
        jpi = np.zeros((n, 2, 3))
        jpi[:, 0, 0] = K.fx / z
        jpi[:, 0, 2] = -K.fx * Xp[:, 0] / (z * z)
        jpi[:, 1, 1] = K.fy / z
        jpi[:, 1, 2] = -K.fy * Xp[:, 1] / (z * z)
        skew = np.zeros((n, 3, 3))
        skew[:, 0, 1] = -Y[:, 2]
        skew[:, 0, 2] = Y[:, 1]
        skew[:, 1, 0] = Y[:, 2]
        skew[:, 1, 2] = -Y[:, 0]
        skew[:, 2, 0] = -Y[:, 1]
        skew[:, 2, 1] = Y[:, 0]
        J = np.concatenate([-jpi @ skew, -jpi], axis=2).reshape(2 * n, 6)
        JtJ = J.T @ J + 1e-9 * np.eye(6)
        delta = np.linalg.solve(JtJ, -J.T @ res)
        omega, dt = delta[:3], delta[3:]
        R = geo.rotation_from_axis_angle(omega, float(np.linalg.norm(omega))) @ R if np.linalg.norm(omega) > 0 else R
        t = t + dt
        if np.linalg.norm(delta) < 1e-12:
            break
    U, _, Vt = np.linalg.svd(R)
    return geo.RigidMotion(U @ Vt, t)


def ransac_motions(
    ref_xy: np.ndarray,
    tgt_xy: np.ndarray,
    depth_ref: np.ndarray,
    depth_tgt: np.ndarray,
    K: geo.Intrinsics,
    params: RansacParams = RansacParams(),
    seed: int = 0,
) -> list:
    """Greedy sequential RANSAC over 3D-3D anchor correspondences.

    Scores by reprojection error in the target view; accepted motions
    consume their inliers.  The identity motion is always appended as the
    final candidate.  Deterministic for a fixed seed.
    """
    if len(ref_xy) < 3:
        raise InsufficientAnchorsError("need at least 3 anchors")
    X_ref = geo.backproject(K, ref_xy, _depth_at(depth_ref, ref_xy))
    X_tgt = geo.backproject(K, tgt_xy, _depth_at(depth_tgt, tgt_xy))
    z_tgt = X_tgt[:, 2]
    rng = np.random.default_rng(seed)
    remaining = np.arange(len(ref_xy))
    motions = []

    def inliers_of(motion, subset, threshold=None):
        moved = motion.apply(X_ref[subset])
        ok = moved[:, 2] > 1e-6
        proj = np.zeros((len(subset), 2))
        proj[ok] = geo.project(K, moved[ok])
        err = np.linalg.norm(proj - tgt_xy[subset], axis=1)
        z_ok = np.abs(moved[:, 2] - z_tgt[subset]) < params.z_gate
        return ok & z_ok & (err < (threshold or params.inlier_px))

    while len(remaining) >= max(3, params.min_inliers) and len(motions) < params.max_objects:
        best_count = 0
        best_motion = None
        for _ in range(params.iterations):
            pick = rng.choice(len(remaining), size=3, replace=False)
            try:
                cand = geo.rigid_from_3d_correspondences(
                    X_ref[remaining[pick]], X_tgt[remaining[pick]]
                )
            except DegenerateGeometryError:
                continue
            count = int(inliers_of(cand, remaining).sum())
            if count > best_count:
                best_count = count
                best_motion = cand
        if best_motion is None or best_count < params.min_inliers:
            break
        mask = inliers_of(best_motion, remaining)
        try:
            refined = geo.rigid_from_3d_correspondences(
                X_ref[remaining[mask]], X_tgt[remaining[mask]]
            )
            if inliers_of(refined, remaining).sum() >= best_count:
                best_motion = refined
                mask = inliers_of(best_motion, remaining)
        except DegenerateGeometryError:
            pass
        # reprojection polish removes the 3D-3D fit's target-depth bias;
        # fit on the tightest correspondences, count support at the gate
        for fit_px in (params.inlier_px, params.inlier_px / 2.0):
            fit_mask = inliers_of(best_motion, remaining, fit_px)
            if fit_mask.sum() < 3:
                continue
            polished = refine_motion_reprojection(
                best_motion, X_ref[remaining[fit_mask]], tgt_xy[remaining[fit_mask]], K
            )
            if inliers_of(polished, remaining).sum() >= mask.sum():
                best_motion = polished
                mask = inliers_of(best_motion, remaining)
        motions.append(best_motion)
        remaining = remaining[~mask]
    motions.append(geo.RigidMotion.identity())
    return motions


def pair_motions(prev_motions: list, next_motions: list) -> dict:
    """Join per-direction motion lists into per-object direction pairs.

    Under constant velocity the step to the previous frame is the inverse
    of the step to the next frame; candidates are matched by that cost and
    leftovers are completed with the mirrored inverse.
    """
    if not prev_motions and not next_motions:
        ident = geo.RigidMotion.identity()
        return {"prev": [ident], "next": [ident]}
    if not prev_motions:
        return {
            "prev": [m.inverse() for m in next_motions],
            "next": list(next_motions),
        }
    if not next_motions:
        return {
            "prev": list(prev_motions),
            "next": [m.inverse() for m in prev_motions],
        }
    cost = np.zeros((len(prev_motions), len(next_motions)))
    for a, mp in enumerate(prev_motions):
        for b, mn in enumerate(next_motions):
            mirror = mn.inverse()
            cost[a, b] = np.linalg.norm(mp.R - mirror.R) + np.linalg.norm(
                mp.t - mirror.t
            )
    rows, cols = linear_sum_assignment(cost)
    prev_list = []
    next_list = []
    for a, b in zip(rows, cols):
        prev_list.append(prev_motions[a])
        next_list.append(next_motions[b])
    for a in range(len(prev_motions)):
        if a not in rows:
            prev_list.append(prev_motions[a])
            next_list.append(prev_motions[a].inverse())
    for b in range(len(next_motions)):
        if b not in cols:
            prev_list.append(next_motions[b].inverse())
            next_list.append(next_motions[b])
    return {"prev": prev_list, "next": next_list}


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Proposal:
    plane: np.ndarray
    obj: int


PERTURB_SCALES = (0.95, 1.05, 0.9, 1.1)  # depth-scale proposals


def fit_all_planes(sp: SuperpixelMap, depth: np.ndarray, K) -> np.ndarray:
    """Per-superpixel least-squares planes with fronto-parallel fallback."""
    planes = np.zeros((sp.n_labels, 3))
    for i, (rows, cols) in enumerate(sp.regions):
        xy = geo.pixel_centers(cols, rows)
        d = depth[rows, cols]
        try:
            n = fit_plane(xy, d, K)
        except DegenerateGeometryError:
            n = fallback_plane(d)
        resp, valid = geo.plane_depth_map(K, n, sp.centroids[i, 0], sp.centroids[i, 1])
        if not valid:
            n = fallback_plane(d)
        planes[i] = n
    return planes


def build_label_sets(
    sp: SuperpixelMap,
    boundaries,
    fitted_planes: np.ndarray,
    n_objects: int,
    l_max: int = 16,
) -> list:
    """Proposal lists: own plane x motions, neighbor planes, depth scalings."""
    sets = []
    for i in range(sp.n_labels):
        own = fitted_planes[i]
        proposals = [Proposal(own.copy(), k) for k in range(n_objects)]
        neigh = sorted(
            boundaries.neighbors[i],
            key=lambda j: -boundaries.boundary_length(i, j),
        )[:4]
        proposals += [Proposal(fitted_planes[j].copy(), 0) for j in neigh]
        proposals += [Proposal(own / s, 0) for s in PERTURB_SCALES]
        sets.append(proposals[: max(1, l_max)])
    return sets


# ---------------------------------------------------------------------------
# CRF assembly and the scene half-step
# ---------------------------------------------------------------------------


class SceneContext:
    """Precomputed per-superpixel data reused across unary evaluations."""

    def __init__(self, obs: en.Observations, latents: dict, weights: en.EnergyWeights):
        self.obs = obs
        self.latents = latents
        self.weights = weights
        sp = obs.superpixels
        h, w = sp.shape
        self.region_xy = [geo.pixel_centers(cols, rows) for rows, cols in sp.regions]
        sparse_ref = obs.sparse[scene_mod.REF_FRAME]
        self.measured = []
        for rows, cols in sp.regions:
            m = sparse_ref.valid[rows, cols]
            self.measured.append(
                (
                    geo.pixel_centers(cols[m], rows[m]),
                    sparse_ref.values[rows, cols][m],
                )
            )
        # blurry-frame derivatives for the blur data term
        self.blur_grad = {
            f: {a: derivative_filter(obs.blurry[f], a) for a in ("id", "x", "y")}
            for f in obs.frames
        }
        # patch geometry: 1-px padded bounding box per region
        self.patches = []
        for rows, cols in sp.regions:
            r0 = max(int(rows.min()) - 1, 0)
            r1 = min(int(rows.max()) + 2, h)
            c0 = max(int(cols.min()) - 1, 0)
            c1 = min(int(cols.max()) + 2, w)
            inner = (rows - r0, cols - c0)
            self.patches.append((r0, r1, c0, c1, inner))
        # anchors per superpixel
        self.anchor_map = {}
        labels = sp.labels
        for direction in obs.directions:
            ref_xy, tgt_xy = obs.anchors.by_direction.get(
                direction, (np.zeros((0, 2)), np.zeros((0, 2)))
            )
            per_sp = [[] for _ in range(sp.n_labels)]
            for a in range(len(ref_xy)):
                c = int(np.clip(round(ref_xy[a, 0] - 0.5), 0, w - 1))
                r = int(np.clip(round(ref_xy[a, 1] - 0.5), 0, h - 1))
                per_sp[labels[r, c]].append(a)
            self.anchor_map[direction] = [
                (ref_xy[ids], tgt_xy[ids]) for ids in per_sp
            ]
        scales = []
        n_half = obs.exposure.half_samples
        for n in range(-n_half, n_half + 1):
            if n == 0 or n_half == 0:
                scales.append((0.0, +1))
            elif n > 0:
                scales.append(((n / n_half) * obs.exposure.duty_cycle / 2.0, +1))
            else:
                scales.append(((-n / n_half) * obs.exposure.duty_cycle / 2.0, -1))
        self.traj_scales = scales  # (magnitude, +1 forward / -1 backward)

    # -- unary pieces ------------------------------------------------------

    def _psi1(self, i, plane):
        xy, values = self.measured[i]
        if len(values) == 0:
            return 0.0
        d, valid = geo.plane_depth_map(self.obs.K, plane, xy[:, 0], xy[:, 1])
        res = np.where(valid, np.abs(values - d), self.weights.alpha1)
        return self.weights.w1 * float(res.sum())

    def _psi2_theta1(self, i, plane, motions):
        xy = self.region_xy[i]
        K = self.obs.K
        ref = self.latents[scene_mod.REF_FRAME]
        rows, cols = self.obs.superpixels.regions[i]
        ref_vals = ref[rows, cols]
        psi2 = 0.0
        theta1 = 0.0
        d, dvalid = geo.plane_depth_map(K, plane, xy[:, 0], xy[:, 1])
        X = geo.backproject(K, xy, np.where(dvalid, d, 1.0))
        for direction in self.obs.directions:
            motion = motions[direction]
            H = geo.homography_from_plane_motion(K, plane, motion)
            xw, yw, wvalid = geo.apply_homography(H, xy[:, 0], xy[:, 1])
            frame = scene_mod.DIRECTION_FRAME[direction]
            # cross-frame depth residual
            moved_z = X @ motion.R[2, :] - motion.t[2]
            measured, found = en.match_sparse(self.obs.sparse[frame], xw, yw)
            use = wvalid & dvalid & found
            psi2 += float(np.abs(moved_z - measured)[use].sum())
            # brightness residual against the current latent
            warped, inside = bilinear_sample(
                self.latents[frame], xw - 0.5, yw - 0.5
            )
            ok = wvalid & inside
            theta1 += float(np.abs(ref_vals - warped)[ok].sum())
        return self.weights.w2 * psi2, self.weights.c1 * theta1

    def _theta2(self, i, plane, motions):
        total = 0.0
        for direction in self.obs.directions:
            ref_xy, tgt_xy = self.anchor_map[direction][i]
            if len(ref_xy) == 0:
                continue
            H = geo.homography_from_plane_motion(self.obs.K, plane, motions[direction])
            xw, yw, ok = geo.apply_homography(H, ref_xy[:, 0], ref_xy[:, 1])
            err = np.hypot(xw - tgt_xy[:, 0], yw - tgt_xy[:, 1])
            err = np.where(ok, err, np.inf)
            total += float(np.minimum(err, self.weights.alpha2).sum())
        return self.weights.c2 * total

    def _theta3(self, i, plane, motions):
        """Blur data term on the padded patch rendered under this proposal."""
        K = self.obs.K
        r0, r1, c0, c1, inner = self.patches[i]
        ph, pw = r1 - r0, c1 - c0
        xs, ys = np.meshgrid(
            np.arange(c0, c1, dtype=float) + 0.5, np.arange(r0, r1, dtype=float) + 0.5
        )
        # per-direction warp displacement on the patch
        disp = {}
        for direction in self.obs.directions:
            H = geo.homography_from_plane_motion(K, plane, motions[direction])
            xw, yw, ok = geo.apply_homography(H, xs, ys)
            disp[direction] = (
                np.where(ok, xw - xs, 0.0),
                np.where(ok, yw - ys, 0.0),
            )
            Hi = np.linalg.inv(H)
            xwi, ywi, oki = geo.apply_homography(Hi, xs, ys)
            disp[direction + "_inv"] = (
                np.where(oki, xwi - xs, 0.0),
                np.where(oki, ywi - ys, 0.0),
            )
        zero = (np.zeros((ph, pw)), np.zeros((ph, pw)))
        total = 0.0
        for frame in self.obs.frames:
            if frame == scene_mod.REF_FRAME:
                fwd = disp.get("next", zero)
                bwd = disp.get("prev", zero)
            elif frame == 0:
                to_ref = disp["prev_inv"]
                fwd = to_ref
                bwd = (-to_ref[0], -to_ref[1])
            else:
                to_ref = disp["next_inv"]
                bwd = to_ref
                fwd = (-to_ref[0], -to_ref[1])
            n_samples = len(self.traj_scales)
            px = np.empty((n_samples, ph, pw))
            py = np.empty((n_samples, ph, pw))
            for s_i, (mag, side) in enumerate(self.traj_scales):
                ux, uy = fwd if side > 0 else bwd
                px[s_i] = xs + mag * ux
                py[s_i] = ys + mag * uy
            samples, _ = bilinear_sample(self.latents[frame], px - 0.5, py - 0.5)
            predicted = samples.mean(axis=0)
            for axis in ("id", "x", "y"):
                dpred = derivative_filter(predicted, axis)
                dobs = self.blur_grad[frame][axis][r0:r1, c0:c1]
                diff = (dpred - dobs)[inner]
                total += float((diff * diff).sum())
        return self.weights.c3 * total

    def unary(self, i: int, proposal: Proposal, objects: dict) -> float:
        motions = {d: objects[d][proposal.obj] for d in self.obs.directions}
        psi2, theta1 = self._psi2_theta1(i, proposal.plane, motions)
        return (
            self._psi1(i, proposal.plane)
            + psi2
            + theta1
            + self._theta2(i, proposal.plane, motions)
            + self._theta3(i, proposal.plane, motions)
        )

    # -- pairwise ----------------------------------------------------------

    def pairwise(self, i: int, j: int, props_i: list, props_j: list) -> np.ndarray:
        rows, cols = self.obs.boundaries.pairs[(i, j)]
        xy = geo.pixel_centers(cols, rows)
        K = self.obs.K
        w = self.weights

        def depths(props):
            d = np.zeros((len(props), len(rows)))
            v = np.zeros((len(props), len(rows)), bool)
            for a, p in enumerate(props):
                d[a], v[a] = geo.plane_depth_map(K, p.plane, xy[:, 0], xy[:, 1])
            return d, v

        di, vi = depths(props_i)
        dj, vj = depths(props_j)
        di = np.where(vi, di, 0.0)  # keep inf out of the masked arithmetic
        dj = np.where(vj, dj, 0.0)
        ni = np.stack([p.plane for p in props_i])
        nj = np.stack([p.plane for p in props_j])
        norm_i = np.linalg.norm(ni, axis=1)
        norm_j = np.linalg.norm(nj, axis=1)
        denom = np.outer(norm_i, norm_j)
        cos = np.abs(ni @ nj.T) / np.where(denom > 0, denom, 1.0)

        both = vi[:, None, :] & vj[None, :, :]
        gap = np.where(both, di[:, None, :] - dj[None, :, :], w.alpha1)
        psi4 = np.minimum(np.abs(gap), w.alpha1).sum(axis=2)
        psi4 = psi4 + np.minimum(1.0 - cos, w.alpha3)

        mean_sq = (gap * gap).mean(axis=2)
        ki = np.array([p.obj for p in props_i])
        kj = np.array([p.obj for p in props_j])
        differ = ki[:, None] != kj[None, :]
        psi3 = np.where(differ, w.w3 * np.exp(-w.lam * mean_sq * cos), 0.0)
        return psi3 + psi4


def build_crf(ctx: SceneContext, label_sets: list, objects: dict) -> trws.PairwiseProblem:
    unaries = [
        np.array([ctx.unary(i, p, objects) for p in props])
        for i, props in enumerate(label_sets)
    ]
    edges = []
    for (i, j) in ctx.obs.boundaries.pairs:
        edges.append((i, j, ctx.pairwise(i, j, label_sets[i], label_sets[j])))
    return trws.PairwiseProblem(unaries, edges)


def state_from_proposals(label_sets: list, choice, objects: dict, directions) -> scene_mod.SceneState:
    planes = np.stack([label_sets[i][choice[i]].plane for i in range(len(label_sets))])
    labels = np.array([label_sets[i][choice[i]].obj for i in range(len(label_sets))])
    motions = {d: list(objects[d]) for d in directions}
    return scene_mod.SceneState(planes, labels, motions)


def inject_incoming(label_sets: list, incoming: scene_mod.SceneState) -> list:
    """Prepend each superpixel's current proposal so descent is guaranteed."""
    merged = []
    for i, props in enumerate(label_sets):
        cur = Proposal(incoming.planes[i].copy(), int(incoming.labels[i]))
        rest = [
            p
            for p in props
            if not (p.obj == cur.obj and np.allclose(p.plane, cur.plane))
        ]
        merged.append([cur] + rest)
    return merged


@dataclass
class SceneStepInfo:
    crf_energy: float
    lower_bounds: list
    accepted: bool
    total_before: float
    total_after: float
    breakdown_after: en.EnergyBreakdown = None


def scene_step(
    incoming: scene_mod.SceneState,
    label_sets: list,
    objects: dict,
    obs: en.Observations,
    latents: dict,
    weights: en.EnergyWeights,
    sweeps: int = 50,
    bound_tol: float = 1e-4,
    breakdown_before: en.EnergyBreakdown = None,
):
    """One discrete half-step: TRW-S over proposals, kept only if it helps.

    Returns (scene, SceneStepInfo); the returned scene's exact total energy
    never exceeds the incoming one's.  ``breakdown_before`` skips the
    re-evaluation of the incoming state when the caller already has it.
    """
    ctx = SceneContext(obs, latents, weights)
    sets = inject_incoming(label_sets, incoming)
    problem = build_crf(ctx, sets, objects)
    result = trws.solve(
        problem,
        max_sweeps=sweeps,
        bound_tol=bound_tol,
        initial_labels=np.zeros(len(sets), dtype=np.int64),
    )
    candidate = state_from_proposals(sets, result.labels, objects, obs.directions)
    if breakdown_before is None:
        breakdown_before = en.total_energy(incoming, latents, obs, weights)
    breakdown_after = en.total_energy(candidate, latents, obs, weights)
    before = breakdown_before.total
    after = breakdown_after.total
    if after <= before:
        return candidate, SceneStepInfo(
            result.energy, result.lower_bounds, True, before, after, breakdown_after
        )
    return incoming.copy(), SceneStepInfo(
        result.energy, result.lower_bounds, False, before, before, breakdown_before
    )
