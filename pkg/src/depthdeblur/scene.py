"""Scene state (planes, object labels, motions) and everything rendered from it.

The scene lives on the reference frame's superpixels: one plane per
superpixel, one object index per superpixel, one rigid motion per object
and temporal direction.  Depth, flows, warps and per-frame blur
trajectories are all derived views of this state.

Frame numbering: 0 = previous, 1 = reference, 2 = next.  The two outer
frames carry no superpixels of their own; their trajectories reuse the
reference label map at the same pixel coordinates and invert the
per-superpixel homographies (constant-velocity mirroring fills the
outward-facing half of each trajectory).
"""

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import NonInvertibleError
from .imaging import DepthMap, FlowField, sample_centered
from .superpixels import SuperpixelMap

REF_FRAME = 1
DIRECTION_FRAME = {"prev": 0, "next": 2}
ALL_DIRECTIONS = ("prev", "next")


def direction_frames(directions) -> list:
    """Frames participating in a run, reference always included."""
    frames = [REF_FRAME] + [DIRECTION_FRAME[d] for d in directions]
    return sorted(frames)


@dataclass
class SceneState:
    """planes: (S, 3); labels: (S,) object index; motions per direction."""

    planes: np.ndarray
    labels: np.ndarray
    motions: dict  # direction -> list of RigidMotion, one per object

    def copy(self) -> "SceneState":
        return SceneState(
            self.planes.copy(),
            self.labels.copy(),
            {d: list(ms) for d, ms in self.motions.items()},
        )

    @property
    def n_superpixels(self) -> int:
        return len(self.labels)

    @property
    def n_objects(self) -> int:
        return len(next(iter(self.motions.values())))

    def motion_of(self, superpixel: int, direction: str) -> geo.RigidMotion:
        return self.motions[direction][self.labels[superpixel]]


def superpixel_homographies(scene: SceneState, K: geo.Intrinsics, direction: str):
    """One 3x3 homography per superpixel for the given direction."""
    motions = scene.motions[direction]
    return [
        geo.homography_from_plane_motion(K, scene.planes[i], motions[scene.labels[i]])
        for i in range(scene.n_superpixels)
    ]


def _per_pixel_homography_warp(homs, labels: np.ndarray):
    """Apply per-superpixel homographies to all pixel centers at once."""
    h, w = labels.shape
    xs, ys = geo.pixel_grid(w, h)
    H = np.stack(homs)  # (S, 3, 3)
    Hm = H[labels]  # (H, W, 3, 3)
    denom = Hm[..., 2, 0] * xs + Hm[..., 2, 1] * ys + Hm[..., 2, 2]
    valid = denom > 0
    dsafe = np.where(valid, denom, 1.0)
    xw = (Hm[..., 0, 0] * xs + Hm[..., 0, 1] * ys + Hm[..., 0, 2]) / dsafe
    yw = (Hm[..., 1, 0] * xs + Hm[..., 1, 1] * ys + Hm[..., 1, 2]) / dsafe
    return xw, yw, valid


def warp_positions(scene: SceneState, sp: SuperpixelMap, K, direction: str):
    """Centered target-frame position of every reference pixel."""
    homs = superpixel_homographies(scene, K, direction)
    return _per_pixel_homography_warp(homs, sp.labels)


def render_depth(scene: SceneState, sp: SuperpixelMap, K) -> DepthMap:
    """Reference-frame depth of each pixel's superpixel plane."""
    h, w = sp.shape
    xs, ys = geo.pixel_grid(w, h)
    depths = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    for i, (rows, cols) in enumerate(sp.regions):
        d, v = geo.plane_depth_map(K, scene.planes[i], xs[rows, cols], ys[rows, cols])
        depths[rows, cols] = np.where(v, d, 0.0)
        valid[rows, cols] = v
    return DepthMap(depths, valid)


def render_flow(scene: SceneState, sp: SuperpixelMap, K, direction: str) -> FlowField:
    """Per-pixel flow to the direction's frame from the superpixel homographies."""
    xw, yw, valid = warp_positions(scene, sp, K, direction)
    h, w = sp.shape
    xs, ys = geo.pixel_grid(w, h)
    uv = np.stack([xw - xs, yw - ys], axis=-1)
    uv[~valid] = 0.0
    return FlowField(uv, valid)


def warp_by_scene(img: np.ndarray, scene: SceneState, sp: SuperpixelMap, K, direction: str):
    """Sample the target-frame image ``img`` at each reference pixel's warp.

    Returns (warped, mask); mask is False where the warp leaves the target
    image or the homography sends the pixel behind the camera.
    """
    xw, yw, ok = warp_positions(scene, sp, K, direction)
    values, inside = sample_centered(img, xw, yw)
    if img.ndim == 3:
        values = np.where((ok & inside)[..., None], values, 0.0)
    else:
        values = np.where(ok & inside, values, 0.0)
    return values, ok & inside


def frame_flow_pairs(scene: SceneState, sp: SuperpixelMap, K, directions) -> dict:
    """(forward, backward) trajectory flows for every participating frame.

    Reference frame: forward = flow to next, backward = flow to previous
    (zero flow for a missing direction).  Outer frames: the flow back to
    the reference comes from the inverted per-superpixel homography read
    through the reference label map; the outward half mirrors it.
    """
    h, w = sp.shape
    zero = FlowField.zero(h, w)
    fwd_ref = render_flow(scene, sp, K, "next") if "next" in directions else zero
    bwd_ref = render_flow(scene, sp, K, "prev") if "prev" in directions else zero
    pairs = {REF_FRAME: (fwd_ref, bwd_ref)}
    for direction in directions:
        frame = DIRECTION_FRAME[direction]
        homs = superpixel_homographies(scene, K, direction)
        inv = []
        for H in homs:
            det = np.linalg.det(H)
            if abs(det) <= geo.EPS_DET:
                raise NonInvertibleError("superpixel homography not invertible")
            inv.append(np.linalg.inv(H))
        xw, yw, valid = _per_pixel_homography_warp(inv, sp.labels)
        xs, ys = geo.pixel_grid(w, h)
        uv = np.stack([xw - xs, yw - ys], axis=-1)
        uv[~valid] = 0.0
        to_ref = FlowField(uv, valid)
        mirrored = FlowField(-uv, valid)
        if direction == "prev":
            pairs[frame] = (to_ref, mirrored)  # forward in time goes to the reference
        else:
            pairs[frame] = (mirrored, to_ref)
    return pairs


def transformed_depth(scene: SceneState, sp: SuperpixelMap, K, direction: str):
    """Depth of each pixel's plane point after applying its object motion.

    Returns (depths, valid): the z component of R X - t for the
    backprojected plane point X at every reference pixel.
    """
    h, w = sp.shape
    xs, ys = geo.pixel_grid(w, h)
    depth = render_depth(scene, sp, K)
    X = geo.backproject(K, np.stack([xs, ys], axis=-1), depth.values)
    motions = scene.motions[direction]
    rows3 = np.stack([motions[k].R[2, :] for k in range(len(motions))])
    t3 = np.array([motions[k].t[2] for k in range(len(motions))])
    lab = scene.labels[sp.labels]
    z = np.einsum("ijk,ijk->ij", X, rows3[lab]) - t3[lab]
    return z, depth.valid
