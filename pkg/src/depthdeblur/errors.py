"""Exception types shared across the package."""


class NonInvertibleError(ValueError):
    """Matrix (homography) is singular beyond the determinant guard."""


class InvalidDepthError(ValueError):
    """Plane has no positive finite depth at the queried pixel."""


class BehindCameraError(ValueError):
    """Warped point has non-positive homogeneous w component."""


class DegenerateGeometryError(ValueError):
    """Input points are rank-deficient (collinear / coplanar with origin)."""


class DimensionMismatchError(ValueError):
    """Operands have incompatible shapes."""


class MalformedFileError(ValueError):
    """File failed magic-byte, bit-depth, or channel validation."""


class EmptyMeasurementsError(ValueError):
    """Depth completion requested with no valid measurements."""


class InsufficientAnchorsError(ValueError):
    """Fewer correspondences than the minimal solver needs."""


class CGDivergedError(RuntimeError):
    """Inner linear solve residual grew by 10x (bad step sizes)."""


class SpecInvalidError(ValueError):
    """Synthetic scene specification violates its invariants."""


class StageError(RuntimeError):
    """Pipeline failure carrying the stage where it happened."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
