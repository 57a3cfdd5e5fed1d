"""Shared helpers for the test suite."""

import numpy as np

from jcr.geometry import Pose, exp_map, random_rotation
from jcr.synth import (
    HiddenParams,
    NoiseProfile,
    TrajectoryConfig,
    generate_dataset,
    tabletop_scene,
)


def pose_dataset(seed, num_poses=10, noise=None, hidden=None,
                 with_pointmaps=False, camera=None):
    """Synthetic dataset with a random hidden calibration."""
    rng = np.random.default_rng(seed)
    hidden = hidden or HiddenParams.random(rng)
    noise = noise or NoiseProfile.zero()
    return generate_dataset(
        tabletop_scene(),
        TrajectoryConfig(num_poses=num_poses),
        hidden,
        noise,
        seed=seed,
        camera=camera,
        with_pointmaps=with_pointmaps,
    )


def consistent_motion_pairs(rng, num_pairs, calib: Pose, scale,
                            rot_scale=0.8, trans_scale=0.3):
    """Motion pairs satisfying T_E X = X T_P(scale) exactly.

    Camera motions are drawn at random; the matching end-effector motion
    is X T_P(scale) X^-1.
    """
    from jcr.calibration import MotionPair

    pairs = []
    for _ in range(num_pairs):
        R_p = random_rotation(rng, max_angle=rot_scale * np.pi)
        t_p = rng.uniform(-trans_scale, trans_scale, size=3)
        T_P = Pose(R_p, t_p)
        T_E = calib.compose(T_P.scaled_translation(scale)).compose(
            calib.inverse()
        )
        pairs.append(MotionPair(T_E=T_E, T_P=T_P))
    return pairs


def rotation_error(Ra, Rb):
    """Angle between two rotations, radians."""
    from jcr.geometry import rotation_angle

    return rotation_angle(Ra @ Rb.T)


def small_rotation(rng, max_deg=10.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_map(axis * np.deg2rad(rng.uniform(0, max_deg)))
