"""The frozen synthetic evaluation suite (128 x 160, trajectory blur).

Five moving scenes plus a static sanity scene.  Scene 4 carries an
independently moving object; all motions have constant velocity (the
backward step is the exact inverse of the forward step).  These specs are
frozen: the acceptance tests pin their behavior.
"""

import numpy as np

from . import geometry as geo
from .blur import ExposureModel
from .synthetic import PlaneSpec, SyntheticSceneSpec, TextureSpec

WIDTH = 160
HEIGHT = 128
SUITE_SEEDS = (101, 202, 303, 404, 505)


def _intrinsics() -> geo.Intrinsics:
    return geo.Intrinsics(200.0, 200.0, 80.0, 64.0, WIDTH, HEIGHT)


def _camera(next_motion: geo.RigidMotion) -> dict:
    return {"prev": next_motion.inverse(), "next": next_motion}


def _spec(planes, cam_next, object_world=None, **kw):
    defaults = dict(
        width=WIDTH,
        height=HEIGHT,
        intrinsics=_intrinsics(),
        planes=planes,
        camera=_camera(cam_next),
        object_world=object_world or {},
        downsample_r=4,
        depth_noise_sigma=0.02,
        blur_mode="trajectory",
        exposure=ExposureModel(20, 0.23),
    )
    defaults.update(kw)
    return SyntheticSceneSpec(**defaults)


def _world_for_apparent(cam_next: geo.RigidMotion, apparent_next: geo.RigidMotion) -> dict:
    """Object world motion whose camera-composed apparent motion is given."""
    world_next = cam_next.inverse().compose(apparent_next)
    return {"prev": world_next.inverse(), "next": world_next}


def suite_scene(index: int) -> SyntheticSceneSpec:
    """One of the five frozen moving scenes."""
    if index == 0:
        planes = [
            PlaneSpec(
                n=np.array([0.0, 0.0, 0.2]),
                texture=TextureSpec("mixed", 0.8, (0.2, 0.25, 0.45), (0.75, 0.8, 0.85), seed=10),
            ),
            PlaneSpec(
                n=np.array([0.0, 0.0, 1 / 2.2]),
                texture=TextureSpec("noise", 0.35, (0.55, 0.3, 0.2), (0.95, 0.85, 0.55), seed=11),
                bounds=((-0.55, 0.6), (-0.5, 0.45)),
            ),
        ]
        cam = geo.RigidMotion(np.eye(3), np.array([0.28, 0.0, 0.0]))
        return _spec(planes, cam)
    if index == 1:
        planes = [
            PlaneSpec(
                n=np.array([0.025, 0.012, 0.18]),
                texture=TextureSpec("noise", 0.9, (0.2, 0.4, 0.3), (0.8, 0.9, 0.75), seed=21),
            ),
            PlaneSpec(
                n=np.array([-0.02, 0.0, 0.42]),
                texture=TextureSpec("mixed", 0.3, (0.7, 0.4, 0.25), (0.25, 0.15, 0.1), seed=22),
                bounds=((-0.6, 0.5), (-0.45, 0.5)),
            ),
        ]
        cam = geo.motion_from_axis_angle([0, 0, 1], 0.0035, [0.2, 0.12, 0.0])
        return _spec(planes, cam)
    if index == 2:
        planes = [
            PlaneSpec(
                n=np.array([0.0, -0.01, 1 / 6.0]),
                texture=TextureSpec("mixed", 1.1, (0.35, 0.3, 0.5), (0.85, 0.85, 0.7), seed=31),
            ),
            PlaneSpec(
                n=np.array([0.01, 0.0, 1 / 3.5]),
                texture=TextureSpec("noise", 0.5, (0.25, 0.5, 0.55), (0.8, 0.95, 0.9), seed=32),
                bounds=((-1.0, 0.35), (-0.8, 0.8)),
            ),
            PlaneSpec(
                n=np.array([0.0, 0.02, 0.5]),
                texture=TextureSpec("noise", 0.24, (0.6, 0.55, 0.3), (0.95, 0.9, 0.7), seed=33),
                bounds=((-0.35, 0.6), (-0.5, 0.42)),
            ),
        ]
        cam = geo.RigidMotion(np.eye(3), np.array([0.12, 0.0, 0.3]))
        return _spec(planes, cam)
    if index == 3:
        planes = [
            PlaneSpec(
                n=np.array([-0.015, 0.02, 0.21]),
                texture=TextureSpec("noise", 0.8, (0.3, 0.3, 0.35), (0.85, 0.8, 0.75), seed=41),
            ),
            PlaneSpec(
                n=np.array([0.05, -0.03, 0.45]),
                texture=TextureSpec("mixed", 0.28, (0.2, 0.5, 0.65), (0.9, 0.75, 0.4), seed=42),
                bounds=((-0.5, 0.55), (-0.42, 0.48)),
            ),
        ]
        cam = geo.motion_from_axis_angle([0, 1, 0], -0.006, [0.22, -0.1, 0.0])
        return _spec(planes, cam)
    if index == 4:
        # camera motion plus one independently moving foreground object
        cam = geo.RigidMotion(np.eye(3), np.array([0.22, 0.0, 0.0]))
        apparent_obj = geo.RigidMotion(np.eye(3), np.array([-0.26, 0.06, 0.0]))
        planes = [
            PlaneSpec(
                n=np.array([0.0, 0.008, 1 / 4.5]),
                texture=TextureSpec("mixed", 0.55, (0.25, 0.35, 0.5), (0.8, 0.85, 0.8), seed=51),
            ),
            PlaneSpec(
                n=np.array([0.0, 0.0, 0.5]),
                object_id=1,
                texture=TextureSpec("noise", 0.3, (0.65, 0.35, 0.25), (1.0, 0.85, 0.6), seed=52),
                bounds=((-0.42, 0.5), (-0.4, 0.38)),
            ),
        ]
        return _spec(planes, cam, object_world={1: _world_for_apparent(cam, apparent_obj)})
    raise ValueError(f"suite has scenes 0..4, got {index}")


def static_scene() -> SyntheticSceneSpec:
    """Noiseless, motionless single-plane scene (exact-recovery sanity)."""
    planes = [
        PlaneSpec(
            n=np.array([0.02, 0.015, 0.4]),
            texture=TextureSpec("noise", 0.6, (0.25, 0.3, 0.4), (0.8, 0.85, 0.75), seed=7),
        )
    ]
    return _spec(
        planes,
        geo.RigidMotion.identity(),
        downsample_r=1,
        depth_noise_sigma=0.0,
    )


def two_motion_scene() -> SyntheticSceneSpec:
    return suite_scene(4)
