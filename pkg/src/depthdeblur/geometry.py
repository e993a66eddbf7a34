"""Camera model, plane / rigid-motion parameterizations and induced warps.

Planes are stored as 3-vectors ``n`` with ``n . X = 1`` for 3D points X on
the plane (units 1/meter).  Pixel coordinates throughout this module are
pixel centers: the pixel at array index [row, col] has homogeneous
coordinates (col + 0.5, row + 0.5, 1).

Motion convention: a rigid motion (R, t) moves scene points between
frames as X' = R X - t.  This is the unique action consistent with the
plane-induced homography H = K (R - t n^T) K^-1: for n . X = 1,
H projects x to the pixel of R X - t.  All warps, flows, depth
transforms and motion estimates in this package use this one action.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    InvalidDepthError,
    NonInvertibleError,
)

EPS_DEPTH = 1e-6  # minimum inverse-depth response n.K^-1.x for a valid depth
EPS_DET = 1e-12  # homography determinant guard


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inv_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class RigidMotion:
    """SE(3) transform acting on points as apply(X) = R @ X - t.

    See the module docstring: the sign on t matches the homography
    formula K (R - t n^T) K^-1 so that geometric and photometric warps
    agree exactly.
    """

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if R.shape != (3, 3):
            raise ValueError("R must be 3x3")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("R is not orthogonal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("det(R) != 1 within 1e-9")

    @staticmethod
    def identity() -> "RigidMotion":
        return RigidMotion(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3) as R X - t."""
        return points @ self.R.T - self.t

    def inverse(self) -> "RigidMotion":
        return RigidMotion(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "RigidMotion") -> "RigidMotion":
        """Return the motion X -> self(other(X))."""
        return RigidMotion(self.R @ other.R, self.R @ other.t + self.t)

    def is_identity(self, tol: float = 1e-12) -> bool:
        return (
            np.abs(self.R - np.eye(3)).max() <= tol and np.abs(self.t).max() <= tol
        )


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        return np.eye(3)
    k = axis / norm
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def motion_from_axis_angle(axis, angle: float, t) -> RigidMotion:
    return RigidMotion(rotation_from_axis_angle(axis, angle), np.asarray(t, float))


def pixel_grid(width: int, height: int):
    """Centered pixel coordinates of every pixel, each of shape (H, W)."""
    xs = np.arange(width, dtype=float) + 0.5
    ys = np.arange(height, dtype=float) + 0.5
    return np.meshgrid(xs, ys)


def pixel_centers(cols: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Stack (col, row) indices into centered (x, y) coordinates, shape (..., 2)."""
    return np.stack(
        [np.asarray(cols, float) + 0.5, np.asarray(rows, float) + 0.5], axis=-1
    )


def homography_from_plane_motion(
    K: Intrinsics, n: np.ndarray, motion: RigidMotion
) -> np.ndarray:
    """Homography K (R - t n^T) K^-1 mapping pixels on plane n across frames."""
    n = np.asarray(n, dtype=float).reshape(3)
    H = K.matrix @ (motion.R - np.outer(motion.t, n)) @ K.inv_matrix
    if abs(np.linalg.det(H)) <= EPS_DET:
        raise NonInvertibleError("homography determinant below guard")
    return H


def plane_depth_map(K: Intrinsics, n: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Plane depth 1 / (n . K^-1 . x) at centered coordinates.

    Returns (depths, valid); depths are meaningless where valid is False.
    """
    n = np.asarray(n, dtype=float).reshape(3)
    Kinv = K.inv_matrix
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    # n^T K^-1 (x, y, 1) expanded to avoid building the homogeneous stack
    resp = (
        n[0] * (Kinv[0, 0] * xs + Kinv[0, 2])
        + n[1] * (Kinv[1, 1] * ys + Kinv[1, 2])
        + n[2]
    )
    valid = resp > EPS_DEPTH
    with np.errstate(divide="ignore", over="ignore"):
        depths = np.where(valid, 1.0 / np.where(valid, resp, 1.0), np.inf)
    return depths, valid


def plane_depth_at(K: Intrinsics, n: np.ndarray, x) -> float:
    """Depth of plane n along the ray of centered pixel x = (x, y)."""
    x = np.asarray(x, dtype=float).reshape(2)
    depth, valid = plane_depth_map(K, n, x[0], x[1])
    if not valid:
        raise InvalidDepthError("plane has non-positive inverse depth at pixel")
    return float(depth)


def backproject(K: Intrinsics, xy: np.ndarray, depth) -> np.ndarray:
    """Lift centered pixel coordinates (..., 2) at given depths to 3D points."""
    xy = np.asarray(xy, dtype=float)
    depth = np.asarray(depth, dtype=float)
    X = (xy[..., 0] - K.cx) / K.fx * depth
    Y = (xy[..., 1] - K.cy) / K.fy * depth
    return np.stack([X, Y, depth + np.zeros_like(X)], axis=-1)


def project(K: Intrinsics, points: np.ndarray) -> np.ndarray:
    """Project 3D points (..., 3) to centered pixel coordinates (..., 2)."""
    points = np.asarray(points, dtype=float)
    z = points[..., 2]
    return np.stack(
        [K.fx * points[..., 0] / z + K.cx, K.fy * points[..., 1] / z + K.cy], axis=-1
    )


def apply_homography(H: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Warp centered coordinates by H.  Returns (xw, yw, valid_w_positive)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    w = H[2, 0] * xs + H[2, 1] * ys + H[2, 2]
    valid = w > 0
    wsafe = np.where(valid, w, 1.0)
    xw = (H[0, 0] * xs + H[0, 1] * ys + H[0, 2]) / wsafe
    yw = (H[1, 0] * xs + H[1, 1] * ys + H[1, 2]) / wsafe
    return xw, yw, valid


def flow_from_homography(H: np.ndarray, x) -> np.ndarray:
    """Displacement pi(H x) - x of a single centered pixel x = (x, y)."""
    x = np.asarray(x, dtype=float).reshape(2)
    xw, yw, valid = apply_homography(H, x[0], x[1])
    if not valid:
        raise BehindCameraError("warped point has non-positive w")
    return np.array([float(xw) - x[0], float(yw) - x[1]])


def rigid_from_3d_correspondences(src: np.ndarray, dst: np.ndarray) -> RigidMotion:
    """Least-squares SE(3) aligning src -> dst (Procrustes, reflection-guarded).

    Exact when dst is a noise-free rigid transform of src.  Raises
    DegenerateGeometryError when the points are collinear within tolerance.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise DegenerateGeometryError("need matching (N, 3) point arrays")
    if src.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 correspondences")
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    A = src - c_src
    B = dst - c_dst
    # collinear points leave the covariance rank-deficient
    s_src = np.linalg.svd(A, compute_uv=False)
    if s_src[1] <= 1e-9 * max(s_src[0], 1e-300):
        raise DegenerateGeometryError("source points collinear")
    U, _, Vt = np.linalg.svd(A.T @ B)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    # re-orthonormalize so RigidMotion's strict validation passes
    Ur, _, Vtr = np.linalg.svd(R)
    R = Ur @ Vtr
    # dst = R src - t  =>  t = R c_src - c_dst
    t = R @ c_src - c_dst
    return RigidMotion(R, t)


def transform_plane(n: np.ndarray, motion: RigidMotion) -> np.ndarray:
    """Plane parameters after moving its points by ``motion``.

    If n.X = 1 for X on the plane, the returned n' satisfies n'.X' = 1 for
    X' = R X - t.
    """
    n = np.asarray(n, dtype=float).reshape(3)
    denom = 1.0 - n @ (motion.R.T @ motion.t)
    if abs(denom) < 1e-12:
        raise InvalidDepthError("transformed plane passes through the origin")
    return (motion.R @ n) / denom
