"""All terms of the joint objective and their sum.

Depth terms (psi1..psi4) tie the scene planes to the sparse measurements
and to each other; image terms (theta1..theta3) tie the scene and the
latent frames to the observed blurry frames; an isotropic TV term
regularizes the latents.  Everything here is evaluated on luminance.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from . import blur as blur_mod
from . import geometry as geo
from . import scene as scene_mod
from .imaging import DepthMap, derivative_filter, gradient, sample_centered
from .superpixels import BoundarySet, SuperpixelMap


@dataclass(frozen=True)
class EnergyWeights:
    """All scalar hyperparameters of the objective."""

    w1: float = 4.0
    w2: float = 2.0
    w3: float = 1.0
    lam: float = 0.1
    c1: float = 1.0
    c2: float = 0.5
    c3: float = 50.0
    alpha1: float = 0.3  # depth truncation (meters)
    alpha2: float = 5.0  # anchor truncation (pixels)
    alpha3: float = 0.3  # normal-angle truncation
    tv_weight: float = 0.05
    p: float = 1.0  # gradient-prior exponent; only 1 is implemented

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")
        if not (self.alpha1 > 0 and self.alpha2 > 0 and self.alpha3 > 0):
            raise ValueError("truncation thresholds must be positive")
        if self.p != 1.0:
            raise ValueError("gradient-prior exponent is fixed at 1")


@dataclass
class AnchorSet:
    """Sparse cross-frame correspondences, centered coordinates per direction."""

    by_direction: dict  # direction -> (ref_xy (N, 2), tgt_xy (N, 2))

    @staticmethod
    def empty(directions=scene_mod.ALL_DIRECTIONS) -> "AnchorSet":
        return AnchorSet({d: (np.zeros((0, 2)), np.zeros((0, 2))) for d in directions})

    def count(self) -> int:
        return sum(len(r) for r, _ in self.by_direction.values())


@dataclass
class Observations:
    """Fixed inputs of one optimization run (luminance blurry frames)."""

    K: geo.Intrinsics
    superpixels: SuperpixelMap
    boundaries: BoundarySet
    sparse: dict  # frame -> DepthMap
    blurry: dict  # frame -> (H, W) luminance
    anchors: AnchorSet
    exposure: blur_mod.ExposureModel
    directions: tuple = scene_mod.ALL_DIRECTIONS

    @property
    def frames(self):
        return scene_mod.direction_frames(self.directions)


@dataclass
class EnergyBreakdown:
    psi1: float
    psi2: float
    psi3: float
    psi4: float
    theta1: float
    theta2: float
    theta3: float
    tv: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = (
            self.psi1
            + self.psi2
            + self.psi3
            + self.psi4
            + self.theta1
            + self.theta2
            + self.theta3
            + self.tv
        )

    def as_text(self) -> str:
        lines = [
            f"{name} = {getattr(self, name):.9g}"
            for name in (
                "psi1",
                "psi2",
                "psi3",
                "psi4",
                "theta1",
                "theta2",
                "theta3",
                "tv",
                "total",
            )
        ]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# depth terms
# ---------------------------------------------------------------------------


def psi1(scene, obs: Observations, weights: EnergyWeights) -> float:
    """Sparse-measurement consistency on the reference frame (L1, meters)."""
    sparse = obs.sparse[scene_mod.REF_FRAME]
    rendered = scene_mod.render_depth(scene, obs.superpixels, obs.K)
    residual = np.where(
        rendered.valid, np.abs(sparse.values - rendered.values), weights.alpha1
    )
    return float(weights.w1 * residual[sparse.valid].sum())


def match_sparse(sparse: DepthMap, xw: np.ndarray, yw: np.ndarray):
    """Nearest valid measurement within 1 px of each warped position.

    Returns (depth, found).  Positions are centered coordinates.
    """
    h, w = sparse.shape
    cx = np.rint(xw - 0.5)
    cy = np.rint(yw - 0.5)
    best_d2 = np.full(xw.shape, np.inf)
    best_val = np.zeros(xw.shape)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            c = cx + dc
            r = cy + dr
            inb = (c >= 0) & (c < w) & (r >= 0) & (r < h)
            ci = np.clip(c, 0, w - 1).astype(np.int64)
            ri = np.clip(r, 0, h - 1).astype(np.int64)
            ok = inb & sparse.valid[ri, ci]
            d2 = (c + 0.5 - xw) ** 2 + (r + 0.5 - yw) ** 2
            take = ok & (d2 <= 1.0) & (d2 < best_d2)
            best_d2 = np.where(take, d2, best_d2)
            best_val = np.where(take, sparse.values[ri, ci], best_val)
    return best_val, np.isfinite(best_d2)


def psi2(scene, obs: Observations, weights: EnergyWeights) -> float:
    """Cross-frame depth consistency under the rigid motions."""
    total = 0.0
    for direction in obs.directions:
        frame = scene_mod.DIRECTION_FRAME[direction]
        xw, yw, warp_ok = scene_mod.warp_positions(
            scene, obs.superpixels, obs.K, direction
        )
        zmoved, depth_ok = scene_mod.transformed_depth(
            scene, obs.superpixels, obs.K, direction
        )
        measured, found = match_sparse(obs.sparse[frame], xw, yw)
        usable = warp_ok & depth_ok & found
        total += np.abs(zmoved - measured)[usable].sum()
    return float(weights.w2 * total)


def _pair_geometry(scene, obs: Observations, i: int, j: int):
    """Boundary-pixel depths for both planes plus the |cos| of the normals."""
    rows, cols = obs.boundaries.pairs[(i, j)]
    xy = geo.pixel_centers(cols, rows)
    di, vi = geo.plane_depth_map(obs.K, scene.planes[i], xy[:, 0], xy[:, 1])
    dj, vj = geo.plane_depth_map(obs.K, scene.planes[j], xy[:, 0], xy[:, 1])
    ni = scene.planes[i]
    nj = scene.planes[j]
    denom = np.linalg.norm(ni) * np.linalg.norm(nj)
    cos = abs(float(ni @ nj)) / denom if denom > 0 else 0.0
    return di, vi, dj, vj, cos


def pair_psi3(scene, obs, weights, i, j) -> float:
    """Motion-boundary cost for one adjacent pair (0 for same object label)."""
    if scene.labels[i] == scene.labels[j]:
        return 0.0
    di, vi, dj, vj, cos = _pair_geometry(scene, obs, i, j)
    gap = np.where(vi & vj, di - dj, weights.alpha1)
    mean_sq = float((gap * gap).sum()) / len(gap)
    return float(weights.w3 * np.exp(-weights.lam * mean_sq * cos))


def pair_psi4(scene, obs, weights, i, j) -> float:
    """Depth/normal compatibility for one adjacent pair (truncated L1)."""
    di, vi, dj, vj, cos = _pair_geometry(scene, obs, i, j)
    gap = np.where(vi & vj, np.abs(di - dj), weights.alpha1)
    depth_term = np.minimum(gap, weights.alpha1).sum()
    normal_term = min(1.0 - cos, weights.alpha3)
    return float(depth_term + normal_term)


def psi3(scene, obs: Observations, weights: EnergyWeights) -> float:
    return sum(pair_psi3(scene, obs, weights, i, j) for i, j in obs.boundaries.pairs)


def psi4(scene, obs: Observations, weights: EnergyWeights) -> float:
    return sum(pair_psi4(scene, obs, weights, i, j) for i, j in obs.boundaries.pairs)


# ---------------------------------------------------------------------------
# image terms
# ---------------------------------------------------------------------------


def theta1_from_positions(ref_img, target_img, xw, yw, warp_ok, c1) -> float:
    """Brightness-consistency residual for precomputed warp positions."""
    warped, ok = sample_centered(target_img, xw, yw)
    mask = ok & warp_ok
    return float(c1 * np.abs(ref_img - warped)[mask].sum())


def theta1(scene, latents: dict, obs: Observations, weights: EnergyWeights) -> float:
    """L1 brightness consistency of the reference against each warped neighbor."""
    ref = latents[scene_mod.REF_FRAME]
    total = 0.0
    for direction in obs.directions:
        frame = scene_mod.DIRECTION_FRAME[direction]
        xw, yw, ok = scene_mod.warp_positions(scene, obs.superpixels, obs.K, direction)
        total += theta1_from_positions(ref, latents[frame], xw, yw, ok, 1.0)
    return float(weights.c1 * total)


def theta2(scene, obs: Observations, weights: EnergyWeights) -> float:
    """Truncated reprojection error of the anchor correspondences."""
    total = 0.0
    labels = obs.superpixels.labels
    h, w = labels.shape
    for direction in obs.directions:
        ref_xy, tgt_xy = obs.anchors.by_direction.get(
            direction, (np.zeros((0, 2)), np.zeros((0, 2)))
        )
        if len(ref_xy) == 0:
            continue
        homs = scene_mod.superpixel_homographies(scene, obs.K, direction)
        cols = np.clip((ref_xy[:, 0] - 0.5).round(), 0, w - 1).astype(int)
        rows = np.clip((ref_xy[:, 1] - 0.5).round(), 0, h - 1).astype(int)
        sp_of_anchor = labels[rows, cols]
        for a in range(len(ref_xy)):
            H = homs[sp_of_anchor[a]]
            xw, yw, ok = geo.apply_homography(H, ref_xy[a, 0], ref_xy[a, 1])
            if ok:
                err = float(np.hypot(xw - tgt_xy[a, 0], yw - tgt_xy[a, 1]))
            else:
                err = np.inf
            total += min(err, weights.alpha2)
    return float(weights.c2 * total)


def build_scene_kernels(scene, obs: Observations) -> dict:
    """Blur operator per participating frame from the scene's trajectories."""
    pairs = scene_mod.frame_flow_pairs(scene, obs.superpixels, obs.K, obs.directions)
    shape = obs.superpixels.shape
    return {
        frame: blur_mod.build_blur_kernel(fwd, bwd, obs.exposure, shape)
        for frame, (fwd, bwd) in pairs.items()
    }


def theta3_from_kernels(latents: dict, blurry: dict, kernels: dict, c3: float) -> float:
    """Quadratic blur data term over identity + derivative filters."""
    total = 0.0
    for frame, kernel in kernels.items():
        predicted = kernel.apply(latents[frame])
        for axis in ("id", "x", "y"):
            diff = derivative_filter(predicted, axis) - derivative_filter(
                blurry[frame], axis
            )
            total += float((diff * diff).sum())
    return c3 * total


def theta3(scene, latents: dict, obs: Observations, weights: EnergyWeights) -> float:
    kernels = build_scene_kernels(scene, obs)
    return theta3_from_kernels(latents, obs.blurry, kernels, weights.c3)


def tv_single(img: np.ndarray) -> float:
    """Isotropic total variation (unweighted)."""
    g = gradient(img)
    return float(np.sqrt(g[..., 0] ** 2 + g[..., 1] ** 2).sum())


def tv(latents: dict, obs: Observations, weights: EnergyWeights) -> float:
    return float(weights.tv_weight * sum(tv_single(latents[f]) for f in obs.frames))


def total_energy(scene, latents: dict, obs: Observations, weights: EnergyWeights) -> EnergyBreakdown:
    """Evaluate every term of the joint objective; kernels are rebuilt fresh."""
    return EnergyBreakdown(
        psi1=psi1(scene, obs, weights),
        psi2=psi2(scene, obs, weights),
        psi3=psi3(scene, obs, weights),
        psi4=psi4(scene, obs, weights),
        theta1=theta1(scene, latents, obs, weights),
        theta2=theta2(scene, obs, weights),
        theta3=theta3(scene, latents, obs, weights),
        tv=tv(latents, obs, weights),
    )


def latent_image_energy(
    scene, latents: dict, obs: Observations, weights: EnergyWeights, kernels=None
) -> float:
    """The deblurring objective: theta1 + theta3 + TV with the scene fixed."""
    if kernels is None:
        kernels = build_scene_kernels(scene, obs)
    return (
        theta1(scene, latents, obs, weights)
        + theta3_from_kernels(latents, obs.blurry, kernels, weights.c3)
        + tv(latents, obs, weights)
    )
