"""Transform aligned model-frame points into the metric robot base frame.

Each point x in the shared model frame is moved into its source view's
camera frame, scaled to meters, and pushed through the calibrated chain:

    x_base = E_v^-1 ( X ( lam * P_v(x) ) )

with P_v the model-to-camera pose of view v, X the camera-to-end-effector
transform and E_v the base-to-end-effector pose of view v.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calibration import CalibrationResult
from .errors import DimensionMismatch, InputError, MissingView, UncalibratedInput
from .geometry import ROBOT_BASE

DEFAULT_CONFIDENCE_PERCENTILE = 65.0


@dataclass
class LabeledPointCloud:
    points: np.ndarray            # (N, 3)
    frame: str                    # "camera_model" (unscaled) or "robot_base"
    views: np.ndarray             # (N,) source view index
    pixels: np.ndarray            # (N, 2) source pixel as (w, h)
    colors: np.ndarray | None = None        # (N, 3) in [0, 1]
    segmentation: np.ndarray | None = None  # (N,) int class labels
    confidence: np.ndarray | None = None    # (N,)

    def __post_init__(self):
        n = len(self.points)
        for name in ("views", "pixels", "colors", "segmentation", "confidence"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise InputError(f"{name} has length {len(arr)}, expected {n}")

    def __len__(self):
        return len(self.points)


def transform_to_base(
    cloud: LabeledPointCloud,
    camera_poses: dict | list,
    ee_poses: dict | list,
    calib: CalibrationResult,
    force: bool = False,
) -> LabeledPointCloud:
    """Map a model-frame cloud into meters in the robot base frame.

    ``camera_poses`` are model-to-camera (model units) and ``ee_poses``
    base-to-end-effector, both indexed by view. Label arrays are carried
    through untouched. Refuses a non-converged calibration unless
    ``force`` is set.
    """
    if cloud.frame == ROBOT_BASE:
        raise InputError("cloud is already in the robot base frame")
    if not calib.converged and not force:
        raise UncalibratedInput(
            "calibration did not converge; pass force=True to override"
        )
    if not isinstance(camera_poses, dict):
        camera_poses = dict(enumerate(camera_poses))
    if not isinstance(ee_poses, dict):
        ee_poses = dict(enumerate(ee_poses))

    X = calib.pose
    out = np.empty_like(cloud.points)
    for v in np.unique(cloud.views):
        if v not in camera_poses or v not in ee_poses:
            raise MissingView(f"no pose pair for view {v}")
        mask = cloud.views == v
        cam = camera_poses[v].apply(cloud.points[mask])   # model camera frame
        ee = X.apply(calib.scale * cam)                   # metric, ee frame
        out[mask] = ee_poses[v].inverse().apply(ee)       # robot base frame
    return replace(cloud, points=out, frame=ROBOT_BASE)


def join_pixel_labels(
    cloud: LabeledPointCloud,
    color_images=None,
    segmentation_images=None,
) -> LabeledPointCloud:
    """Attach per-pixel labels via each point's (view, w, h) provenance."""

    def lookup(images, channels):
        if not isinstance(images, dict):
            images = dict(enumerate(images))
        shape = (len(cloud), channels) if channels else (len(cloud),)
        dtype = float if channels else int
        out = np.zeros(shape, dtype=dtype)
        for v in np.unique(cloud.views):
            if v not in images:
                raise MissingView(f"no label image for view {v}")
            img = np.asarray(images[v])
            if channels and (img.ndim != 3 or img.shape[2] != channels):
                raise DimensionMismatch(
                    f"view {v}: expected (H, W, {channels}), got {img.shape}"
                )
            mask = cloud.views == v
            w = cloud.pixels[mask, 0]
            h = cloud.pixels[mask, 1]
            if (h >= img.shape[0]).any() or (w >= img.shape[1]).any():
                raise DimensionMismatch(
                    f"view {v}: pixels exceed image shape {img.shape[:2]}"
                )
            out[mask] = img[h, w]
        return out

    colors = cloud.colors
    segmentation = cloud.segmentation
    if color_images is not None:
        colors = lookup(color_images, 3)
    if segmentation_images is not None:
        segmentation = lookup(segmentation_images, 0)
    return replace(cloud, colors=colors, segmentation=segmentation)


def estimate_height(z_values, band_percentile=80.0):
    """Robust top-surface height from per-point z in the base frame.

    Objects seen from above carry a dense cluster of points on the top
    face, so the median z of the upper band is nearly unbiased under
    symmetric point noise, unlike a max or high percentile which ride
    the noise tail.
    """
    z = np.asarray(z_values, dtype=float).reshape(-1)
    if z.size == 0:
        raise InputError("no points to estimate a height from")
    band = z[z >= np.percentile(z, band_percentile)]
    return float(np.median(band))


def adaptive_confidence_threshold(
    confidences, percentile=DEFAULT_CONFIDENCE_PERCENTILE
):
    """Percentile of all positive confidences; the default filter level."""
    conf = np.concatenate([np.asarray(c).reshape(-1) for c in confidences])
    conf = conf[conf > 0]
    if conf.size == 0:
        return 0.0
    return float(np.percentile(conf, percentile))
