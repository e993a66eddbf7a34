"""Sparse spatially-variant blur operator built from per-pixel trajectories.

A blurry frame is the average of the latent frame sampled along each
pixel's motion trajectory over the open-shutter interval: 2N+1 samples at
x + (|n|/N) * (tau/2) * u, using the forward flow for n > 0 and the
backward flow for n < 0.  Rows of the operator are convex combinations
(border-clamped bilinear taps), so constant images are fixed points.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError
from .imaging import FlowField, bilinear_weights


@dataclass(frozen=True)
class ExposureModel:
    """Trajectory sampling: 2N+1 samples spanning +-tau/2 of the frame interval."""

    half_samples: int = 20
    duty_cycle: float = 0.23

    def __post_init__(self):
        if self.half_samples < 0:
            raise ValueError("half_samples must be >= 0")
        if not (0.0 < self.duty_cycle <= 1.0):
            raise ValueError("duty_cycle must be in (0, 1]")


class BlurKernel:
    """Row-stochastic (W*H) x (W*H) sparse operator mapping latent to blurry."""

    def __init__(self, matrix: sp.csr_matrix, height: int, width: int):
        self.matrix = matrix
        self.height = height
        self.width = width
        self._adjoint = None

    @property
    def shape(self):
        return (self.height, self.width)

    def apply(self, img: np.ndarray) -> np.ndarray:
        if img.shape[:2] != (self.height, self.width):
            raise DimensionMismatchError("image does not match kernel grid")
        if img.ndim == 3:
            flat = img.reshape(-1, img.shape[2])
            return (self.matrix @ flat).reshape(img.shape)
        return (self.matrix @ img.ravel()).reshape(img.shape)

    def apply_adjoint(self, img: np.ndarray) -> np.ndarray:
        if img.shape[:2] != (self.height, self.width):
            raise DimensionMismatchError("image does not match kernel grid")
        if self._adjoint is None:
            self._adjoint = self.matrix.T.tocsr()
        if img.ndim == 3:
            flat = img.reshape(-1, img.shape[2])
            return (self._adjoint @ flat).reshape(img.shape)
        return (self._adjoint @ img.ravel()).reshape(img.shape)

    @staticmethod
    def identity(height: int, width: int) -> "BlurKernel":
        return BlurKernel(sp.identity(height * width, format="csr"), height, width)


def _flow_array(flow, height, width) -> np.ndarray:
    if flow is None:
        return np.zeros((height, width, 2))
    if isinstance(flow, FlowField):
        uv = np.where(flow.valid[..., None], flow.uv, 0.0)
        return uv
    return np.asarray(flow, dtype=float)


def build_blur_kernel(flow_fwd, flow_bwd, exposure: ExposureModel, shape) -> BlurKernel:
    """Assemble the blur operator for one frame from its two half-trajectories.

    flow_fwd / flow_bwd are FlowFields (or (H, W, 2) arrays) toward the
    later / earlier neighbor frame; invalid pixels contribute zero flow.
    """
    height, width = shape
    fwd = _flow_array(flow_fwd, height, width)
    bwd = _flow_array(flow_bwd, height, width)
    if fwd.shape != (height, width, 2) or bwd.shape != (height, width, 2):
        raise DimensionMismatchError("flow fields do not match kernel grid")

    n_half = exposure.half_samples
    n_samples = 2 * n_half + 1
    n_px = height * width
    xs, ys = np.meshgrid(
        np.arange(width, dtype=float), np.arange(height, dtype=float)
    )

    rows_idx = np.arange(n_px, dtype=np.int64)
    data = np.empty((n_samples, 4, n_px))
    cols = np.empty((n_samples, 4, n_px), dtype=np.int64)
    for i, n in enumerate(range(-n_half, n_half + 1)):
        if n == 0 or n_half == 0:
            scale, uv = 0.0, fwd
        elif n > 0:
            scale, uv = (n / n_half) * (exposure.duty_cycle / 2.0), fwd
        else:
            scale, uv = (-n / n_half) * (exposure.duty_cycle / 2.0), bwd
        px = xs + scale * uv[:, :, 0]
        py = ys + scale * uv[:, :, 1]
        col0, row0, fx, fy, _ = bilinear_weights(px, py, width, height)
        col1 = np.minimum(col0 + 1, width - 1)
        row1 = np.minimum(row0 + 1, height - 1)
        base00 = (row0 * width + col0).ravel()
        base01 = (row0 * width + col1).ravel()
        base10 = (row1 * width + col0).ravel()
        base11 = (row1 * width + col1).ravel()
        fx = fx.ravel()
        fy = fy.ravel()
        cols[i, 0] = base00
        cols[i, 1] = base01
        cols[i, 2] = base10
        cols[i, 3] = base11
        data[i, 0] = (1 - fx) * (1 - fy)
        data[i, 1] = fx * (1 - fy)
        data[i, 2] = (1 - fx) * fy
        data[i, 3] = fx * fy

    rows = np.broadcast_to(rows_idx, (n_samples, 4, n_px)).ravel()
    matrix = sp.coo_matrix(
        (data.ravel() / n_samples, (rows, cols.ravel())), shape=(n_px, n_px)
    ).tocsr()
    matrix.sum_duplicates()
    # clamped taps already sum to one per row; renormalize to keep the
    # row-stochastic contract exact against accumulated rounding
    row_sums = np.asarray(matrix.sum(axis=1)).ravel()
    matrix = sp.diags(1.0 / row_sums) @ matrix
    return BlurKernel(matrix.tocsr(), height, width)


def synthesize_trajectory(latent: np.ndarray, flow_fwd, flow_bwd, exposure) -> np.ndarray:
    """Blur one latent frame along its trajectories (equals apply(build(...)))."""
    kernel = build_blur_kernel(flow_fwd, flow_bwd, exposure, latent.shape[:2])
    return kernel.apply(latent)


def frame_average(frames) -> np.ndarray:
    """Alternative blur model: plain mean of consecutive frames."""
    frames = list(frames)
    first = frames[0]
    for f in frames[1:]:
        if f.shape != first.shape:
            raise DimensionMismatchError("frames differ in shape")
    return np.mean(frames, axis=0)


def kernel_row_text(kernel: BlurKernel, row: int, col: int) -> str:
    """Debug dump of one pixel's kernel row as '(row, col) weight' lines."""
    idx = row * kernel.width + col
    m = kernel.matrix
    start, stop = m.indptr[idx], m.indptr[idx + 1]
    lines = [f"# kernel row for pixel ({row}, {col})"]
    for k in range(start, stop):
        target = int(m.indices[k])
        lines.append(
            f"({target // kernel.width}, {target % kernel.width}) {m.data[k]:.9g}"
        )
    return "\n".join(lines) + "\n"
