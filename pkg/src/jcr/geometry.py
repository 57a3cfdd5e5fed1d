"""SO(3)/SE(3) primitives used throughout the calibration pipeline.

Conventions:
    * A rotation matrix R acts on column vectors, p_out = R @ p.
    * A ``Pose`` (R, t) maps p_out = R @ p + t.  Which frames the map
      connects is carried in the ``frame`` tag and documented at the call
      sites; composition is ``A @ B`` meaning "apply B first".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMatrix

# Frame tags used by the pipeline.
ROBOT_BASE = "robot_base"
END_EFFECTOR = "end_effector"
CAMERA_MODEL = "camera_model"
CAMERA_METRIC = "camera_metric"

_EPS_ANGLE_ZERO = 1e-8
_EPS_ANGLE_PI = 1e-6


def skew(v):
    """Cross-product matrix: skew(v) @ u == np.cross(v, u)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def project_to_rotation(M):
    """Nearest rotation matrix (polar decomposition via SVD, det +1)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R


def is_rotation(R, tol=1e-9):
    R = np.asarray(R)
    return (
        R.shape == (3, 3)
        and np.linalg.norm(R.T @ R - np.eye(3)) < tol
        and abs(np.linalg.det(R) - 1.0) < tol
    )


def exp_map(v):
    """Rodrigues' formula: axis-angle 3-vector -> rotation matrix."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v)
    K = skew(v)
    if theta < _EPS_ANGLE_ZERO:
        # Second-order Taylor; exact to machine precision at these angles.
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta**2) * (K @ K)
    )


def log_map(R):
    """Axis-angle 3-vector of a rotation matrix (angle in [0, pi]).

    The generic formula divides by sin(angle), so the angle ~ 0 and
    angle ~ pi neighbourhoods get dedicated branches.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    cos_w = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    off = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    # atan2 of (sin, cos) is far better conditioned near the ends of the
    # angle range than arccos of the trace alone.
    sin_w = 0.5 * np.linalg.norm(off)
    w = np.arctan2(sin_w, cos_w)
    if w < _EPS_ANGLE_ZERO:
        return 0.5 * off
    if np.pi - w < _EPS_ANGLE_PI:
        # Near pi the off-diagonal differences vanish. The symmetric part
        # (R + R^T)/2 = cos(w) I + (1 - cos(w)) a a^T exposes the axis.
        aaT = ((R + R.T) / 2.0 - cos_w * np.eye(3)) / (1.0 - cos_w)
        axis = np.sqrt(np.clip(np.diag(aaT), 0.0, None))
        k = int(np.argmax(axis))
        for j in range(3):
            if j != k and aaT[k, j] < 0:
                axis[j] = -axis[j]
        axis /= np.linalg.norm(axis)
        # The residual antisymmetric part still carries sin(w) > 0 sign.
        if np.dot(axis, off) < 0:
            axis = -axis
        return w * axis
    return (w / (2.0 * np.sin(w))) * off


def inv_sqrt_psd(A, eps_min=1e-12):
    """Inverse matrix square root of a symmetric positive-definite matrix.

    Uses a symmetric eigendecomposition; raises DegenerateMatrix when the
    smallest eigenvalue is at or below ``eps_min`` (upstream this signals
    insufficient rotation diversity).
    """
    A = np.asarray(A, dtype=float)
    A = (A + A.T) / 2.0
    evals, evecs = np.linalg.eigh(A)
    if evals.min() <= eps_min:
        raise DegenerateMatrix(
            f"smallest eigenvalue {evals.min():.3e} <= {eps_min:.1e}"
        )
    return (evecs / np.sqrt(evals)) @ evecs.T


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_out = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    frame: str | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "rotation", np.asarray(self.rotation, dtype=float)
        )
        object.__setattr__(
            self,
            "translation",
            np.asarray(self.translation, dtype=float).reshape(3),
        )

    @staticmethod
    def identity(frame=None):
        return Pose(np.eye(3), np.zeros(3), frame)

    @staticmethod
    def from_matrix(M, frame=None, renormalize=True):
        """Build from a 4x4 homogeneous matrix, re-orthonormalizing R.

        Serialized matrices accumulate rounding error, so ingestion goes
        through a polar projection by default.
        """
        M = np.asarray(M, dtype=float).reshape(4, 4)
        R = M[:3, :3]
        if renormalize:
            R = project_to_rotation(R)
        return Pose(R, M[:3, 3], frame)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self.compose(other))(p) == self(other(p))."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            self.frame,
        )

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation, self.frame)

    def apply(self, points):
        """Apply to one 3-vector or an (N, 3) array."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def scaled_translation(self, scale) -> "Pose":
        """Same rotation, translation multiplied by ``scale``."""
        return Pose(self.rotation, scale * self.translation, self.frame)


def relative_transform(a: Pose, b: Pose) -> Pose:
    """T with b == T.compose(a), i.e. T = b . a^-1."""
    return b.compose(a.inverse())


def random_rotation(rng, max_angle=np.pi):
    """Uniform random axis, angle uniform in (0, max_angle)."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_map(axis * rng.uniform(0.0, max_angle))


def rotation_angle(R):
    """Rotation angle in [0, pi]."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))
