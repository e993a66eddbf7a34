"""Evaluation metrics: bad-pixel ratios, PSNR and SSIM.

Depth errors are converted to disparity through a virtual stereo rig
(d = f * baseline / Z) so the usual 3 px / 5 % bad-pixel rule applies to
depth maps; flow uses the endpoint error with the same double gate.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionMismatchError
from .imaging import DepthMap, FlowField

PSNR_CAP = 99.0
BAD_PIXEL_ABS = 3.0  # pixels (disparity / endpoint error)
BAD_PIXEL_REL = 0.05


@dataclass
class MetricsReport:
    depth_bad_ratio: float  # percent
    flow_bad_ratio: float  # percent
    psnr: float
    ssim: float
    trace: dict = field(default_factory=dict)  # per-iteration lists

    def as_text(self) -> str:
        lines = [
            f"depth_bad_ratio = {self.depth_bad_ratio:.6f}",
            f"flow_bad_ratio = {self.flow_bad_ratio:.6f}",
            f"psnr = {self.psnr:.6f}",
            f"ssim = {self.ssim:.6f}",
        ]
        for key in sorted(self.trace):
            series = " ".join(f"{v:.6f}" for v in self.trace[key])
            lines.append(f"trace_{key} = {series}")
        return "\n".join(lines) + "\n"


def psnr(pred: np.ndarray, truth: np.ndarray, cap: float = PSNR_CAP) -> float:
    """10 log10(1 / MSE) for unit-range images, capped for exact matches."""
    if pred.shape != truth.shape:
        raise DimensionMismatchError("psnr shapes differ")
    mse = float(np.mean((pred - truth) ** 2))
    if mse <= 0.0:
        return cap
    return min(10.0 * np.log10(1.0 / mse), cap)


def ssim(pred: np.ndarray, truth: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5)."""
    if pred.shape != truth.shape:
        raise DimensionMismatchError("ssim shapes differ")
    k1, k2 = 0.01, 0.03
    c1, c2 = k1 * k1, k2 * k2  # unit data range
    # truncate at 5 pixels -> 11-tap kernel
    smooth = lambda a: gaussian_filter(a, 1.5, truncate=3.5, mode="reflect")
    mu_p = smooth(pred)
    mu_t = smooth(truth)
    var_p = smooth(pred * pred) - mu_p * mu_p
    var_t = smooth(truth * truth) - mu_t * mu_t
    cov = smooth(pred * truth) - mu_p * mu_t
    num = (2 * mu_p * mu_t + c1) * (2 * cov + c2)
    den = (mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2)
    return float(np.mean(num / den))


def depth_to_disparity(depth: np.ndarray, focal: float, baseline: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(depth > 0, focal * baseline / np.maximum(depth, 1e-12), np.inf)


def depth_bad_ratio(
    pred: DepthMap, truth: DepthMap, focal: float, baseline: float
) -> float:
    """Percent of ground-truth-valid pixels failing the 3 px AND 5 % rule.

    Invalid predictions at valid ground truth count as bad.
    """
    if pred.shape != truth.shape:
        raise DimensionMismatchError("depth map shapes differ")
    mask = truth.valid
    if not mask.any():
        return 0.0
    d_pred = depth_to_disparity(pred.values, focal, baseline)
    d_true = depth_to_disparity(truth.values, focal, baseline)
    err = np.abs(d_pred - d_true)
    bad = (err > BAD_PIXEL_ABS) & (err > BAD_PIXEL_REL * d_true)
    bad |= ~pred.valid
    return 100.0 * float(bad[mask].sum()) / float(mask.sum())


def flow_bad_ratio(pred: FlowField, truth: FlowField) -> float:
    """Percent of valid pixels with endpoint error > 3 px and > 5 % of GT."""
    if pred.shape != truth.shape:
        raise DimensionMismatchError("flow field shapes differ")
    mask = truth.valid
    if not mask.any():
        return 0.0
    err = np.linalg.norm(pred.uv - truth.uv, axis=-1)
    mag = np.linalg.norm(truth.uv, axis=-1)
    bad = (err > BAD_PIXEL_ABS) & (err > BAD_PIXEL_REL * mag)
    bad |= ~pred.valid
    return 100.0 * float(bad[mask].sum()) / float(mask.sum())


def evaluate(
    pred_depth: DepthMap,
    pred_flow: FlowField,
    restored: np.ndarray,
    gt_depth: DepthMap,
    gt_flow: FlowField,
    gt_latent: np.ndarray,
    focal: float,
    baseline: float,
) -> MetricsReport:
    """Full report on the reference frame."""
    return MetricsReport(
        depth_bad_ratio=depth_bad_ratio(pred_depth, gt_depth, focal, baseline),
        flow_bad_ratio=flow_bad_ratio(pred_flow, gt_flow),
        psnr=psnr(restored, gt_latent),
        ssim=ssim(restored, gt_latent),
    )
