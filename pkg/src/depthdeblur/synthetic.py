"""Synthetic textured-plane scenes with exact ground truth.

A scene is a set of (optionally bounded) 3D planes, each owned by a
rigidly moving object; the camera's apparent motion is folded into
per-object apparent motions.  Frames are rendered analytically (nearest
plane along each ray, texture looked up in reference-time plane
coordinates), which makes depth, flow and the blur trajectories exact.
"""

from dataclasses import dataclass, field

import numpy as np

from . import blur as blur_mod
from . import geometry as geo
from .config import format_kv, parse_kv_file
from .errors import SpecInvalidError
from .imaging import (
    DepthMap,
    FlowField,
    read_color_png,
    read_depth_png,
    write_color_png,
    write_depth_png,
    write_flow_png,
)

VALID_DOWNSAMPLE = (1, 4, 8, 16)


# ---------------------------------------------------------------------------
# textures: deterministic functions of plane-local coordinates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TextureSpec:
    kind: str = "checker"  # checker | noise | mixed
    scale: float = 0.5  # meters per cell
    color_a: tuple = (0.15, 0.2, 0.3)
    color_b: tuple = (0.85, 0.8, 0.6)
    octaves: int = 3  # noise/mixed
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("checker", "noise", "mixed"):
            raise SpecInvalidError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0:
            raise SpecInvalidError("texture scale must be positive")


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice noise in [0, 1) from integer coordinates."""
    with np.errstate(over="ignore"):  # uint64 wraparound is the hash
        h = (
            ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
            ^ iy.astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
            ^ (np.uint64(seed % (1 << 63)) * np.uint64(0x94D049BB133111EB))
        )
        h ^= h >> np.uint64(31)
        h *= np.uint64(0x7FB5D329728EA185)
        h ^= h >> np.uint64(27)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(a: np.ndarray, b: np.ndarray, tex: TextureSpec) -> np.ndarray:
    total = np.zeros_like(a)
    amp_sum = 0.0
    for octave in range(tex.octaves):
        spacing = tex.scale / (1 << octave)
        amp = 1.0 / (1 << octave)
        u = a / spacing
        v = b / spacing
        iu = np.floor(u)
        iv = np.floor(v)
        fu = u - iu
        fv = v - iv
        fu = fu * fu * (3 - 2 * fu)  # smoothstep
        fv = fv * fv * (3 - 2 * fv)
        # offset lattice coordinates to keep uint64 hashing positive
        iu = (iu + 4096).astype(np.int64)
        iv = (iv + 4096).astype(np.int64)
        sd = tex.seed * 1013 + octave
        v00 = _hash01(iu, iv, sd)
        v01 = _hash01(iu + 1, iv, sd)
        v10 = _hash01(iu, iv + 1, sd)
        v11 = _hash01(iu + 1, iv + 1, sd)
        total += amp * ((v00 * (1 - fu) + v01 * fu) * (1 - fv) + (v10 * (1 - fu) + v11 * fu) * fv)
        amp_sum += amp
    return total / amp_sum


def texture_colors(tex: TextureSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """RGB colors for plane-local coordinates (a, b), shape (..., 3)."""
    ca = np.asarray(tex.color_a, dtype=float)
    cb = np.asarray(tex.color_b, dtype=float)
    if tex.kind == "checker":
        mix = (np.floor(a / tex.scale) + np.floor(b / tex.scale)) % 2
    elif tex.kind == "noise":
        mix = _value_noise(a, b, tex)
    else:
        # checker broken up by noise: keeps corners, kills exact periodicity
        parity = (np.floor(a / tex.scale) + np.floor(b / tex.scale)) % 2
        mix = 0.6 * parity + 0.4 * _value_noise(a, b, tex)
    return ca + (cb - ca) * mix[..., None]


# ---------------------------------------------------------------------------
# scene specification
# ---------------------------------------------------------------------------


@dataclass
class PlaneSpec:
    n: np.ndarray
    object_id: int = 0
    texture: TextureSpec = field(default_factory=TextureSpec)
    bounds: tuple = None  # ((a0, a1), (b0, b1)) in plane coordinates, or None


@dataclass
class SyntheticSceneSpec:
    width: int
    height: int
    intrinsics: geo.Intrinsics
    planes: list
    camera: dict  # direction -> apparent RigidMotion of static geometry
    object_world: dict = field(default_factory=dict)  # object id -> {dir: motion}
    downsample_r: int = 4
    depth_noise_sigma: float = 0.0
    blur_mode: str = "trajectory"  # trajectory | frame_average
    exposure: blur_mod.ExposureModel = field(
        default_factory=blur_mod.ExposureModel
    )

    def __post_init__(self):
        if self.downsample_r not in VALID_DOWNSAMPLE:
            raise SpecInvalidError(f"downsample_r must be one of {VALID_DOWNSAMPLE}")
        if self.blur_mode not in ("trajectory", "frame_average"):
            raise SpecInvalidError("blur_mode must be trajectory|frame_average")
        if not self.planes:
            raise SpecInvalidError("scene needs at least one plane")

    @property
    def n_objects(self) -> int:
        return max(p.object_id for p in self.planes) + 1

    def apparent(self, object_id: int, direction: str) -> geo.RigidMotion:
        """Camera-composed motion of one object for one temporal direction."""
        cam = self.camera[direction]
        world = self.object_world.get(object_id, {}).get(direction)
        if world is None:
            return cam
        return cam.compose(world)


def plane_frame(n: np.ndarray):
    """Deterministic in-plane orthonormal basis and base point."""
    n = np.asarray(n, dtype=float)
    nn = float(n @ n)
    if nn <= 0:
        raise SpecInvalidError("plane normal must be nonzero")
    p0 = n / nn  # closest point to the origin, satisfies n . p0 = 1
    unit = n / np.sqrt(nn)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(unit[2]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(unit, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(unit, e1)
    return p0, e1, e2


@dataclass
class RenderedFrame:
    color: np.ndarray  # (H, W, 3)
    depth: DepthMap
    plane_idx: np.ndarray  # (H, W) int


def render_frame(spec: SyntheticSceneSpec, motion_of_plane) -> RenderedFrame:
    """Ray-cast the planes with per-plane motions applied.

    motion_of_plane maps a PlaneSpec to the apparent RigidMotion moving its
    points from reference time to the rendered time (identity at the
    reference).  Texture coordinates are evaluated at reference time, so
    appearance is exactly constant across frames.
    """
    K = spec.intrinsics
    h, w = spec.height, spec.width
    xs, ys = geo.pixel_grid(w, h)
    xy = np.stack([xs, ys], axis=-1)
    best_depth = np.full((h, w), np.inf)
    best_idx = np.full((h, w), -1, dtype=np.int64)
    coords = []
    for idx, plane in enumerate(spec.planes):
        motion = motion_of_plane(plane)
        n_t = geo.transform_plane(plane.n, motion)
        depths, valid = geo.plane_depth_map(K, n_t, xs, ys)
        X_t = geo.backproject(K, xy, np.where(valid, depths, 1.0))
        X_ref = motion.inverse().apply(X_t)
        p0, e1, e2 = plane_frame(plane.n)
        rel = X_ref - p0
        a = rel @ e1
        b = rel @ e2
        if plane.bounds is not None:
            (a0, a1), (b0, b1) = plane.bounds
            valid = valid & (a >= a0) & (a <= a1) & (b >= b0) & (b <= b1)
        closer = valid & (depths < best_depth)
        best_depth = np.where(closer, depths, best_depth)
        best_idx = np.where(closer, idx, best_idx)
        coords.append((a, b))
    if (best_idx < 0).any():
        raise SpecInvalidError("planes do not cover the camera frustum")
    color = np.zeros((h, w, 3))
    for idx, plane in enumerate(spec.planes):
        mask = best_idx == idx
        if not mask.any():
            continue
        a, b = coords[idx]
        color[mask] = texture_colors(plane.texture, a[mask], b[mask])
    return RenderedFrame(color, DepthMap(best_depth, np.isfinite(best_depth)), best_idx)


def _per_pixel_motion_apply(spec, plane_idx, X, pick_motion):
    """Project each pixel's 3D point after its object's motion."""
    moved = np.zeros_like(X)
    for idx, plane in enumerate(spec.planes):
        mask = plane_idx == idx
        if not mask.any():
            continue
        moved[mask] = pick_motion(plane).apply(X[mask])
    valid = moved[..., 2] > 1e-6
    proj = np.zeros(X.shape[:-1] + (2,))
    proj[valid] = geo.project(spec.intrinsics, moved[valid])
    return proj, valid


def flow_between(spec, frame: RenderedFrame, pick_motion) -> FlowField:
    """Exact flow of a rendered frame under per-plane motions."""
    K = spec.intrinsics
    h, w = spec.height, spec.width
    xs, ys = geo.pixel_grid(w, h)
    X = geo.backproject(K, np.stack([xs, ys], axis=-1), frame.depth.values)
    proj, valid = _per_pixel_motion_apply(spec, frame.plane_idx, X, pick_motion)
    uv = np.stack([proj[..., 0] - xs, proj[..., 1] - ys], axis=-1)
    uv[~valid] = 0.0
    return FlowField(uv, valid & frame.depth.valid)


@dataclass
class SyntheticDataset:
    """Everything one run consumes, plus exact ground truth."""

    spec: SyntheticSceneSpec
    latents: dict  # frame -> color image
    blurry: dict
    sparse: dict  # frame -> DepthMap
    gt_depth: DepthMap  # reference frame
    gt_flows: dict  # direction -> FlowField on the reference frame
    gt_frame_flows: dict  # frame -> (fwd FlowField, bwd FlowField)
    gt_plane_idx: np.ndarray

    @property
    def K(self) -> geo.Intrinsics:
        return self.spec.intrinsics


def render_ground_truth(spec: SyntheticSceneSpec):
    """Rendered frames and exact per-frame trajectory flow pairs."""
    ident = geo.RigidMotion.identity()
    frames = {
        1: render_frame(spec, lambda p: ident),
        0: render_frame(spec, lambda p: spec.apparent(p.object_id, "prev")),
        2: render_frame(spec, lambda p: spec.apparent(p.object_id, "next")),
    }

    # exact trajectory flow pairs per frame (constant velocity outward)
    def ap(direction):
        return lambda p: spec.apparent(p.object_id, direction)

    def ap_inv(direction):
        return lambda p: spec.apparent(p.object_id, direction).inverse()

    gt_frame_flows = {
        1: (
            flow_between(spec, frames[1], ap("next")),
            flow_between(spec, frames[1], ap("prev")),
        ),
        0: (
            flow_between(spec, frames[0], ap_inv("prev")),
            flow_between(spec, frames[0], ap("prev")),
        ),
        2: (
            flow_between(spec, frames[2], ap("next")),
            flow_between(spec, frames[2], ap_inv("next")),
        ),
    }
    return frames, gt_frame_flows


def generate(spec: SyntheticSceneSpec, seed: int = 0) -> SyntheticDataset:
    """Render the three-frame dataset with exact ground truth."""
    rng = np.random.default_rng(seed)
    frames, gt_frame_flows = render_ground_truth(spec)

    blurry = {}
    if spec.blur_mode == "trajectory":
        for f in (0, 1, 2):
            fwd, bwd = gt_frame_flows[f]
            kernel = blur_mod.build_blur_kernel(
                fwd, bwd, spec.exposure, (spec.height, spec.width)
            )
            blurry[f] = kernel.apply(frames[f].color)
    else:
        # average of three consecutive frames; the outer windows need the
        # constant-velocity extrapolated frames at -1 and +3
        def twice(direction):
            return lambda p: spec.apparent(p.object_id, direction).compose(
                spec.apparent(p.object_id, direction)
            )

        outer = {
            -1: render_frame(spec, twice("prev")),
            3: render_frame(spec, twice("next")),
        }
        seq = {**{f: fr for f, fr in frames.items()}, **outer}
        for f in (0, 1, 2):
            blurry[f] = blur_mod.frame_average(
                [seq[f - 1].color, seq[f].color, seq[f + 1].color]
            )

    sparse = {}
    r = spec.downsample_r
    for f in (0, 1, 2):
        depth = frames[f].depth
        keep = np.zeros(depth.shape, dtype=bool)
        keep[::r, ::r] = True
        keep &= depth.valid
        values = depth.values.copy()
        if spec.depth_noise_sigma > 0:
            noise = rng.normal(scale=spec.depth_noise_sigma, size=depth.shape)
            values = np.where(keep, np.maximum(values + noise, 0.05), values)
        sparse[f] = DepthMap(np.where(keep, values, 0.0), keep)

    return SyntheticDataset(
        spec=spec,
        latents={f: frames[f].color for f in (0, 1, 2)},
        blurry=blurry,
        sparse=sparse,
        gt_depth=frames[1].depth,
        gt_flows={"prev": gt_frame_flows[1][1], "next": gt_frame_flows[1][0]},
        gt_frame_flows=gt_frame_flows,
        gt_plane_idx=frames[1].plane_idx,
    )


# ---------------------------------------------------------------------------
# scene spec <-> flat kv serialization, dataset directory layout
# ---------------------------------------------------------------------------


def _motion_to_str(m: geo.RigidMotion) -> str:
    return " ".join(f"{v:.17g}" for v in np.concatenate([m.R.ravel(), m.t]))


def _motion_from_str(s: str) -> geo.RigidMotion:
    vals = np.array([float(v) for v in s.split()])
    if len(vals) != 12:
        raise SpecInvalidError("motion needs 12 numbers (row-major R, then t)")
    return geo.RigidMotion(vals[:9].reshape(3, 3), vals[9:])


def spec_to_kv(spec: SyntheticSceneSpec) -> dict:
    K = spec.intrinsics
    out = {
        "width": spec.width,
        "height": spec.height,
        "fx": f"{K.fx:.17g}",
        "fy": f"{K.fy:.17g}",
        "cx": f"{K.cx:.17g}",
        "cy": f"{K.cy:.17g}",
        "downsample_r": spec.downsample_r,
        "depth_noise_sigma": f"{spec.depth_noise_sigma:.17g}",
        "blur_mode": spec.blur_mode,
        "exposure_n": spec.exposure.half_samples,
        "exposure_tau": f"{spec.exposure.duty_cycle:.17g}",
        "camera_prev": _motion_to_str(spec.camera["prev"]),
        "camera_next": _motion_to_str(spec.camera["next"]),
        "n_planes": len(spec.planes),
        "n_objects": spec.n_objects,
    }
    for i, p in enumerate(spec.planes):
        out[f"plane{i}_n"] = " ".join(f"{v:.17g}" for v in p.n)
        out[f"plane{i}_object"] = p.object_id
        t = p.texture
        out[f"plane{i}_texture"] = " ".join(
            [t.kind, f"{t.scale:.17g}"]
            + [f"{v:.17g}" for v in t.color_a]
            + [f"{v:.17g}" for v in t.color_b]
            + [str(t.octaves), str(t.seed)]
        )
        if p.bounds is not None:
            (a0, a1), (b0, b1) = p.bounds
            out[f"plane{i}_bounds"] = f"{a0:.17g} {a1:.17g} {b0:.17g} {b1:.17g}"
    for k, dirs in sorted(spec.object_world.items()):
        for d, m in sorted(dirs.items()):
            out[f"object{k}_{d}"] = _motion_to_str(m)
    return out


def spec_from_kv(kv: dict) -> SyntheticSceneSpec:
    width = int(kv["width"])
    height = int(kv["height"])
    K = geo.Intrinsics(
        float(kv["fx"]), float(kv["fy"]), float(kv["cx"]), float(kv["cy"]), width, height
    )
    planes = []
    for i in range(int(kv["n_planes"])):
        tex_parts = kv[f"plane{i}_texture"].split()
        texture = TextureSpec(
            kind=tex_parts[0],
            scale=float(tex_parts[1]),
            color_a=tuple(float(v) for v in tex_parts[2:5]),
            color_b=tuple(float(v) for v in tex_parts[5:8]),
            octaves=int(tex_parts[8]),
            seed=int(tex_parts[9]),
        )
        bounds = None
        if f"plane{i}_bounds" in kv:
            b = [float(v) for v in kv[f"plane{i}_bounds"].split()]
            bounds = ((b[0], b[1]), (b[2], b[3]))
        planes.append(
            PlaneSpec(
                n=np.array([float(v) for v in kv[f"plane{i}_n"].split()]),
                object_id=int(kv[f"plane{i}_object"]),
                texture=texture,
                bounds=bounds,
            )
        )
    object_world = {}
    for key, value in kv.items():
        if key.startswith("object") and ("_prev" in key or "_next" in key):
            k, d = key[len("object") :].split("_")
            object_world.setdefault(int(k), {})[d] = _motion_from_str(value)
    return SyntheticSceneSpec(
        width=width,
        height=height,
        intrinsics=K,
        planes=planes,
        camera={
            "prev": _motion_from_str(kv["camera_prev"]),
            "next": _motion_from_str(kv["camera_next"]),
        },
        object_world=object_world,
        downsample_r=int(kv["downsample_r"]),
        depth_noise_sigma=float(kv["depth_noise_sigma"]),
        blur_mode=kv["blur_mode"],
        exposure=blur_mod.ExposureModel(int(kv["exposure_n"]), float(kv["exposure_tau"])),
    )


def write_dataset(ds: SyntheticDataset, directory) -> None:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for f in (0, 1, 2):
        write_color_png(directory / f"latent_{f}.png", ds.latents[f])
        write_color_png(directory / f"blur_{f}.png", np.clip(ds.blurry[f], 0, 1))
        write_depth_png(directory / f"sparse_{f}.png", ds.sparse[f])
    write_depth_png(directory / "gt_depth_1.png", ds.gt_depth)
    write_flow_png(directory / "gt_flow_1to0.png", ds.gt_flows["prev"])
    write_flow_png(directory / "gt_flow_1to2.png", ds.gt_flows["next"])
    with open(directory / "scene_gt.cfg", "w", encoding="utf-8") as fh:
        fh.write(format_kv(spec_to_kv(ds.spec)))


def read_dataset(directory) -> SyntheticDataset:
    """Reload a dataset directory; ground truth is regenerated exactly
    from scene_gt.cfg where the PNGs are lossy (flows, plane index)."""
    from pathlib import Path

    directory = Path(directory)
    spec = spec_from_kv(parse_kv_file(directory / "scene_gt.cfg"))
    frames, gt_frame_flows = render_ground_truth(spec)
    latents = {}
    blurry = {}
    sparse = {}
    for f in (0, 1, 2):
        latents[f] = read_color_png(directory / f"latent_{f}.png")
        blurry[f] = read_color_png(directory / f"blur_{f}.png")
        sparse[f] = read_depth_png(directory / f"sparse_{f}.png")
    return SyntheticDataset(
        spec=spec,
        latents=latents,
        blurry=blurry,
        sparse=sparse,
        gt_depth=frames[1].depth,
        gt_flows={"prev": gt_frame_flows[1][1], "next": gt_frame_flows[1][0]},
        gt_frame_flows=gt_frame_flows,
        gt_plane_idx=frames[1].plane_idx,
    )
