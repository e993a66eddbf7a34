"""Primal-dual restoration of the latent frames with the scene held fixed.

The nonsmooth terms are dualized: p (per-pixel 2-vector, unit L2 ball)
carries the isotropic TV term, one scalar dual q per temporal pairing
(unit interval) carries the brightness-consistency residual anchored on
the reference grid.  The quadratic blur data term stays in the primal and
is solved exactly per step by a conjugate-residual iteration, whose
residual norm is non-increasing by construction.

Frames are updated Gauss-Seidel style.  When the reference frame is
updated its pairing duals enter directly; when a neighbor frame is
updated, its pairing's dual is pulled back through the inverse warp with
a negative sign (it sits on the negative side of the residual).
"""

from dataclasses import dataclass, field

import numpy as np

from . import scene as scene_mod
from .energy import EnergyWeights, theta3_from_kernels, tv_single
from .errors import CGDivergedError
from .imaging import (
    derivative_adjoint,
    derivative_filter,
    gradient,
    gradient_adjoint,
    sample_centered,
)


@dataclass(frozen=True)
class StepSizes:
    """Dual ascent (gamma, mu) and primal proximal (eta) step sizes.

    eta trades data-fit speed against stability of the dual coupling: the
    anchor moves by up to eta * c1 per inner iteration where the q duals
    saturate, so eta must stay well below the image range for the
    Gauss-Seidel loop to descend.  0.005 is stable for the default
    weights; 0.125 (matching the pure-TV bound) measurably diverges.
    """

    gamma: float = 0.125
    mu: float = 0.125
    eta: float = 0.005

    def __post_init__(self):
        if min(self.gamma, self.mu, self.eta) <= 0:
            raise ValueError("step sizes must be positive")


@dataclass
class WarpMaps:
    """Sampling maps for one temporal pairing (reference <-> neighbor)."""

    fwd_x: np.ndarray  # target-frame position of each reference pixel
    fwd_y: np.ndarray
    fwd_valid: np.ndarray
    inv_x: np.ndarray  # reference-grid position of each target pixel
    inv_y: np.ndarray
    inv_valid: np.ndarray


@dataclass
class DeblurProblem:
    """Everything the image half-step needs, frame-indexed."""

    blurry: dict  # frame -> (H, W) image
    kernels: dict  # frame -> BlurKernel
    warps: dict  # direction -> WarpMaps
    weights: EnergyWeights
    steps: StepSizes = StepSizes()
    directions: tuple = scene_mod.ALL_DIRECTIONS

    @property
    def frames(self):
        return scene_mod.direction_frames(self.directions)


def problem_from_scene(
    scene, obs, weights: EnergyWeights, steps: StepSizes = StepSizes()
) -> DeblurProblem:
    """Build kernels and warp maps from a scene state (shared with energy)."""
    from .energy import build_scene_kernels

    warps = {}
    h, w = obs.superpixels.shape
    xs = np.arange(w, dtype=float)[None, :] + 0.5 + np.zeros((h, 1))
    ys = np.arange(h, dtype=float)[:, None] + 0.5 + np.zeros((1, w))
    flows = scene_mod.frame_flow_pairs(scene, obs.superpixels, obs.K, obs.directions)
    for direction in obs.directions:
        fx, fy, fvalid = scene_mod.warp_positions(
            scene, obs.superpixels, obs.K, direction
        )
        frame = scene_mod.DIRECTION_FRAME[direction]
        fwd_flow, bwd_flow = flows[frame]
        to_ref = fwd_flow if direction == "prev" else bwd_flow
        warps[direction] = WarpMaps(
            fx, fy, fvalid,
            xs + to_ref.uv[:, :, 0], ys + to_ref.uv[:, :, 1], to_ref.valid,
        )
    return DeblurProblem(
        blurry=dict(obs.blurry),
        kernels=build_scene_kernels(scene, obs),
        warps=warps,
        weights=weights,
        steps=steps,
        directions=obs.directions,
    )


def problem_from_flows(
    frame_flows: dict,
    blurry: dict,
    exposure,
    weights: EnergyWeights,
    steps: StepSizes = StepSizes(),
    directions: tuple = scene_mod.ALL_DIRECTIONS,
) -> DeblurProblem:
    """Build the image half-step from explicit per-frame trajectory flows.

    frame_flows maps frame -> (forward FlowField, backward FlowField) as
    produced by the synthetic ground truth or scene rendering; the
    reference's own pair doubles as the warp maps (forward flow to 'next',
    backward to 'prev'; outer frames' flow-to-reference gives the inverse).
    """
    from .blur import build_blur_kernel

    ref_fwd, ref_bwd = frame_flows[scene_mod.REF_FRAME]
    h, w = ref_fwd.shape
    xs = np.arange(w, dtype=float)[None, :] + 0.5 + np.zeros((h, 1))
    ys = np.arange(h, dtype=float)[:, None] + 0.5 + np.zeros((1, w))
    frames = scene_mod.direction_frames(directions)
    kernels = {
        f: build_blur_kernel(frame_flows[f][0], frame_flows[f][1], exposure, (h, w))
        for f in frames
    }
    warps = {}
    for direction in directions:
        frame = scene_mod.DIRECTION_FRAME[direction]
        ref_flow = ref_bwd if direction == "prev" else ref_fwd
        to_ref = frame_flows[frame][0] if direction == "prev" else frame_flows[frame][1]
        warps[direction] = WarpMaps(
            xs + ref_flow.uv[:, :, 0], ys + ref_flow.uv[:, :, 1], ref_flow.valid,
            xs + to_ref.uv[:, :, 0], ys + to_ref.uv[:, :, 1], to_ref.valid,
        )
    return DeblurProblem(
        blurry={f: blurry[f] for f in frames},
        kernels=kernels,
        warps=warps,
        weights=weights,
        steps=steps,
        directions=directions,
    )


def dual_update_p(p: np.ndarray, img: np.ndarray, gamma: float) -> np.ndarray:
    """Ascend along the gradient, project onto the pointwise unit L2 ball."""
    cand = p + gamma * gradient(img)
    norm = np.sqrt(cand[..., 0] ** 2 + cand[..., 1] ** 2)
    return cand / np.maximum(1.0, norm)[..., None]


def dual_update_q(q, ref_img, warped, valid, mu: float) -> np.ndarray:
    """Scalar ascent on the brightness residual, clamped to [-1, 1].

    Pixels whose warp is invalid keep q = 0 (they carry no residual).
    """
    cand = np.clip(q + mu * (ref_img - warped), -1.0, 1.0)
    return np.where(valid, cand, 0.0)


def conjugate_residual(apply_op, b: np.ndarray, x0: np.ndarray, tol: float = 1e-6, max_iter: int = 50):
    """Solve the SPD system op(x) = b; residual norms are non-increasing.

    Raises CGDivergedError when the iteration cannot proceed: the residual
    grew 10x over its initial value, or the operator revealed non-positive
    curvature while the residual is still large.  Both signal bad step
    sizes upstream (the operator is SPD for any valid eta > 0).
    """
    x = x0.copy()
    r = b - apply_op(x)
    norm_b = float(np.linalg.norm(b))
    norms = [float(np.linalg.norm(r))]
    if norms[0] == 0.0 or norm_b == 0.0:
        return x, norms
    p = r.copy()
    mr = apply_op(r)
    mp = mr.copy()
    rmr = float(np.sum(r * mr))

    def check_curvature(value, res_norm):
        if value <= 0.0 and res_norm > tol * norm_b:
            raise CGDivergedError("inner solve hit non-positive curvature")

    check_curvature(rmr, norms[0])
    for _ in range(max_iter):
        denom = float(np.sum(mp * mp))
        if denom <= 0.0:
            break
        alpha = rmr / denom
        x = x + alpha * p
        r = r - alpha * mp
        norms.append(float(np.linalg.norm(r)))
        if norms[-1] > 10.0 * norms[0]:
            raise CGDivergedError("inner solve residual grew 10x")
        if norms[-1] <= tol * norm_b:
            break
        mr = apply_op(r)
        rmr_new = float(np.sum(r * mr))
        check_curvature(rmr_new, norms[-1])
        beta = rmr_new / rmr
        rmr = rmr_new
        p = r + beta * p
        mp = mr + beta * mp
    return x, norms


def primal_update_I(
    I: np.ndarray,
    p: np.ndarray,
    q_field: np.ndarray,
    kernel,
    blurry: np.ndarray,
    eta: float,
    c3: float,
    tv_weight: float,
    cg_tol: float = 1e-6,
    cg_iters: int = 50,
):
    """Proximal primal step: quadratic blur data term + proximity to the
    dual-adjusted anchor, solved on the normal equations.

    q_field is the already-weighted sum of brightness duals acting on this
    frame.  Returns (new latent, residual norms of the inner solve).
    """

    def data_normal(v):
        av = kernel.apply(v)
        acc = np.zeros_like(v)
        for axis in ("id", "x", "y"):
            acc += derivative_adjoint(derivative_filter(av, axis), axis)
        return kernel.apply_adjoint(acc)

    def apply_op(v):
        return 2.0 * c3 * data_normal(v) + v / eta

    anchor = I - eta * (tv_weight * gradient_adjoint(p) + q_field)
    if c3 == 0.0:
        return anchor, [0.0]
    rhs_data = np.zeros_like(I)
    for axis in ("id", "x", "y"):
        rhs_data += derivative_adjoint(derivative_filter(blurry, axis), axis)
    rhs = 2.0 * c3 * kernel.apply_adjoint(rhs_data) + anchor / eta
    return conjugate_residual(apply_op, rhs, I, tol=cg_tol, max_iter=cg_iters)


def latent_energy(latents: dict, problem: DeblurProblem) -> float:
    """theta1 + theta3 + TV for the fixed warps/kernels of this problem."""
    w = problem.weights
    total = theta3_from_kernels(latents, problem.blurry, problem.kernels, w.c3)
    ref = latents[scene_mod.REF_FRAME]
    for direction in problem.directions:
        frame = scene_mod.DIRECTION_FRAME[direction]
        maps = problem.warps[direction]
        warped, inside = sample_centered(latents[frame], maps.fwd_x, maps.fwd_y)
        mask = inside & maps.fwd_valid
        total += w.c1 * float(np.abs(ref - warped)[mask].sum())
    total += w.tv_weight * sum(tv_single(latents[f]) for f in problem.frames)
    return total


@dataclass
class DeblurTrace:
    pass_energies: list = field(default_factory=list)  # incoming + one per pass
    raw_pass_energies: list = field(default_factory=list)
    cg_norm_history: list = field(default_factory=list)
    nonmonotone_passes: int = 0


def deblur_sequence(
    latents: dict,
    problem: DeblurProblem,
    inner_iters: int = 30,
    passes: int = 2,
    clamp: bool = True,
):
    """Gauss-Seidel primal-dual over the frames.

    Each frame runs `inner_iters` p/q/I updates with its neighbors fixed.
    Primal-dual iterations are not pointwise monotone, so the emitted
    state after each pass is the best-objective state seen so far (the
    internal iteration keeps running from the unrolled state);
    ``pass_energies`` records the emitted states and is non-increasing by
    construction, ``raw_pass_energies`` the unguarded per-pass values.
    Latents are clamped to [0, 1] only after the full loop.
    """
    w = problem.weights
    steps = problem.steps
    frames = problem.frames
    I = {f: latents[f].astype(float).copy() for f in frames}
    shape = I[scene_mod.REF_FRAME].shape
    p = {f: np.zeros(shape + (2,)) for f in frames}
    q = {d: np.zeros(shape) for d in problem.directions}
    trace = DeblurTrace()
    trace.pass_energies.append(latent_energy(I, problem))

    def warped_neighbor(direction):
        frame = scene_mod.DIRECTION_FRAME[direction]
        maps = problem.warps[direction]
        values, inside = sample_centered(I[frame], maps.fwd_x, maps.fwd_y)
        return values, inside & maps.fwd_valid

    def q_field_for(frame):
        if frame == scene_mod.REF_FRAME:
            return w.c1 * sum(q[d] for d in problem.directions) if problem.directions else np.zeros(shape)
        direction = next(
            d for d in problem.directions if scene_mod.DIRECTION_FRAME[d] == frame
        )
        maps = problem.warps[direction]
        pulled, inside = sample_centered(q[direction], maps.inv_x, maps.inv_y)
        pulled = np.where(inside & maps.inv_valid, pulled, 0.0)
        return -w.c1 * pulled

    best = {f: I[f].copy() for f in frames}
    best_energy = trace.pass_energies[0]
    for _ in range(passes):
        for frame in frames:
            involved = (
                list(problem.directions)
                if frame == scene_mod.REF_FRAME
                else [d for d in problem.directions if scene_mod.DIRECTION_FRAME[d] == frame]
            )
            for _ in range(inner_iters):
                p[frame] = dual_update_p(p[frame], I[frame], steps.gamma)
                for d in involved:
                    warped, valid = warped_neighbor(d)
                    q[d] = dual_update_q(
                        q[d], I[scene_mod.REF_FRAME], warped, valid, steps.mu
                    )
                I[frame], norms = primal_update_I(
                    I[frame],
                    p[frame],
                    q_field_for(frame),
                    problem.kernels[frame],
                    problem.blurry[frame],
                    steps.eta,
                    w.c3,
                    w.tv_weight,
                )
                trace.cg_norm_history.append(norms)
        e = latent_energy(I, problem)
        trace.raw_pass_energies.append(e)
        if e < best_energy:
            best_energy = e
            best = {f: I[f].copy() for f in frames}
        else:
            trace.nonmonotone_passes += 1
        trace.pass_energies.append(best_energy)

    if clamp:
        best = {f: np.clip(best[f], 0.0, 1.0) for f in frames}
    return best, trace
