"""Image containers, sampling, derivative filters, warping and PNG I/O.

Images are numpy float64 arrays in [0, 1], shape (H, W) or (H, W, 3)
row-major.  Sampling functions take index coordinates: (x, y) = (0, 0) is
the center of pixel [0, 0].  Geometry functions use pixel-center
coordinates shifted by +0.5; ``sample_centered`` does the conversion.
"""

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import DimensionMismatchError, MalformedFileError

# ITU-R BT.601 luma weights (sum to 1)
_LUMA = np.array([0.299, 0.587, 0.114])

DEPTH_SCALE = 256.0  # stored raw = depth_m * 256, raw 0 = missing
FLOW_SCALE = 64.0  # stored raw = flow_px * 64 + 2^15
FLOW_OFFSET = 32768.0


@dataclass
class DepthMap:
    """Per-pixel depth in meters with an explicit validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.valid.shape:
            raise DimensionMismatchError("depth/mask shape mismatch")

    @property
    def shape(self):
        return self.values.shape

    def count_valid(self) -> int:
        return int(self.valid.sum())


@dataclass
class FlowField:
    """Per-pixel 2-vector flow (pixels) with a validity mask."""

    uv: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.uv.shape[:2] != self.valid.shape or self.uv.shape[2:] != (2,):
            raise DimensionMismatchError("flow/mask shape mismatch")

    @property
    def shape(self):
        return self.valid.shape

    @staticmethod
    def zero(height: int, width: int) -> "FlowField":
        return FlowField(
            np.zeros((height, width, 2)), np.ones((height, width), dtype=bool)
        )


def luminance(img: np.ndarray) -> np.ndarray:
    """BT.601 luminance of a color image; grayscale passes through."""
    if img.ndim == 2:
        return img
    return img @ _LUMA


def bilinear_weights(xs: np.ndarray, ys: np.ndarray, width: int, height: int):
    """Border-clamped bilinear stencil for index coordinates.

    Returns (col0, row0, fx, fy, inside): integer base indices, fractional
    weights and a flag marking positions that were inside the image before
    clamping.  col0+1/row0+1 are always valid indices.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    inside = (xs >= 0) & (xs <= width - 1) & (ys >= 0) & (ys <= height - 1)
    xc = np.clip(xs, 0.0, width - 1.0)
    yc = np.clip(ys, 0.0, height - 1.0)
    col0 = np.minimum(np.floor(xc), width - 2).astype(np.int64) if width > 1 else np.zeros_like(xc, dtype=np.int64)
    row0 = np.minimum(np.floor(yc), height - 2).astype(np.int64) if height > 1 else np.zeros_like(yc, dtype=np.int64)
    fx = xc - col0
    fy = yc - row0
    if width == 1:
        fx = np.zeros_like(fx)
    if height == 1:
        fy = np.zeros_like(fy)
    return col0, row0, fx, fy, inside


def bilinear_sample(img: np.ndarray, xs, ys):
    """Sample img at index coordinates with border clamp.

    Returns (values, inside); out-of-bounds positions are clamped to the
    border but flagged inside=False for occlusion masking.
    """
    h, w = img.shape[:2]
    col0, row0, fx, fy, inside = bilinear_weights(xs, ys, w, h)
    col1 = np.minimum(col0 + 1, w - 1)
    row1 = np.minimum(row0 + 1, h - 1)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = img[row0, col0]
    v01 = img[row0, col1]
    v10 = img[row1, col0]
    v11 = img[row1, col1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy, inside


def sample_centered(img: np.ndarray, xs, ys):
    """Sample at pixel-center coordinates (geometry convention)."""
    return bilinear_sample(img, np.asarray(xs, float) - 0.5, np.asarray(ys, float) - 0.5)


def derivative_filter(img: np.ndarray, axis: str) -> np.ndarray:
    """Forward difference with replicate boundary (last row/col -> 0).

    axis is one of 'x' (horizontal), 'y' (vertical), 'id'.
    """
    if axis == "id":
        return img.copy()
    out = np.zeros_like(img)
    if axis == "x":
        out[:, :-1] = img[:, 1:] - img[:, :-1]
    elif axis == "y":
        out[:-1, :] = img[1:, :] - img[:-1, :]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return out


def derivative_adjoint(img: np.ndarray, axis: str) -> np.ndarray:
    """Adjoint of derivative_filter: <D u, v> == <u, D^T v> exactly."""
    if axis == "id":
        return img.copy()
    out = np.zeros_like(img)
    if axis == "x":
        out[:, 1:] += img[:, :-1]
        out[:, :-1] -= img[:, :-1]
    elif axis == "y":
        out[1:, :] += img[:-1, :]
        out[:-1, :] -= img[:-1, :]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return out


def gradient(img: np.ndarray) -> np.ndarray:
    """Forward-difference gradient, shape (H, W, 2) ordered (dx, dy)."""
    return np.stack([derivative_filter(img, "x"), derivative_filter(img, "y")], axis=-1)


def gradient_adjoint(p: np.ndarray) -> np.ndarray:
    """Adjoint of ``gradient`` (equals minus the matching divergence)."""
    return derivative_adjoint(p[..., 0], "x") + derivative_adjoint(p[..., 1], "y")


def warp_image(img: np.ndarray, xw: np.ndarray, yw: np.ndarray, valid=None):
    """Sample ``img`` at centered target positions; mask leaves of the image.

    Returns (warped, mask): mask is False where the position falls outside
    ``img`` or ``valid`` (if given) is False.
    """
    values, inside = sample_centered(img, xw, yw)
    mask = inside if valid is None else (inside & valid)
    return values, mask


# ---------------------------------------------------------------------------
# PNG I/O.  Color: 8-bit RGB.  Depth: 16-bit gray, depth = raw / 256,
# raw 0 = missing.  Flow: 16-bit RGB channels (u*64 + 2^15, v*64 + 2^15,
# valid), all KITTI-style.
# ---------------------------------------------------------------------------


def write_color_png(path, img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatchError("color image must be (H, W, 3)")
    raw = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), raw[:, :, ::-1]):
        raise MalformedFileError(f"cannot write {path}")


def read_color_png(path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise MalformedFileError(f"cannot read {path}")
    if raw.dtype != np.uint8 or raw.ndim != 3 or raw.shape[2] != 3:
        raise MalformedFileError(f"{path} is not an 8-bit color PNG")
    return raw[:, :, ::-1].astype(np.float64) / 255.0


def write_depth_png(path, depth: DepthMap) -> None:
    raw = np.rint(depth.values * DEPTH_SCALE)
    raw = np.clip(raw, 1.0, 65535.0)  # keep valid pixels distinguishable from missing
    raw = np.where(depth.valid, raw, 0.0).astype(np.uint16)
    if not cv2.imwrite(str(path), raw):
        raise MalformedFileError(f"cannot write {path}")


def read_depth_png(path) -> DepthMap:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise MalformedFileError(f"cannot read {path}")
    if raw.dtype != np.uint16 or raw.ndim != 2:
        raise MalformedFileError(f"{path} is not a 16-bit grayscale PNG")
    valid = raw > 0
    return DepthMap(raw.astype(np.float64) / DEPTH_SCALE, valid)


def write_flow_png(path, flow: FlowField) -> None:
    h, w = flow.shape
    raw = np.zeros((h, w, 3), dtype=np.uint16)
    enc = np.clip(np.rint(flow.uv * FLOW_SCALE + FLOW_OFFSET), 0, 65535)
    raw[:, :, 0] = np.where(flow.valid, enc[:, :, 0], FLOW_OFFSET).astype(np.uint16)
    raw[:, :, 1] = np.where(flow.valid, enc[:, :, 1], FLOW_OFFSET).astype(np.uint16)
    raw[:, :, 2] = flow.valid.astype(np.uint16)
    # cv2 stores BGR; keep channel 0 = u in the file's red channel
    if not cv2.imwrite(str(path), raw[:, :, ::-1]):
        raise MalformedFileError(f"cannot write {path}")


def read_flow_png(path) -> FlowField:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise MalformedFileError(f"cannot read {path}")
    if raw.dtype != np.uint16 or raw.ndim != 3 or raw.shape[2] != 3:
        raise MalformedFileError(f"{path} is not a 16-bit 3-channel PNG")
    raw = raw[:, :, ::-1].astype(np.float64)
    uv = (raw[:, :, :2] - FLOW_OFFSET) / FLOW_SCALE
    valid = raw[:, :, 2] > 0
    uv[~valid] = 0.0
    return FlowField(uv, valid)


def write_label_png(path, labels: np.ndarray) -> None:
    """Debug output: superpixel label map as 16-bit PNG."""
    if not cv2.imwrite(str(path), labels.astype(np.uint16)):
        raise MalformedFileError(f"cannot write {path}")


def require_same_shape(*arrays) -> None:
    shapes = {a.shape[:2] for a in arrays}
    if len(shapes) > 1:
        raise DimensionMismatchError(f"shape mismatch: {sorted(shapes)}")
