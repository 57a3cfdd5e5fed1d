"""Marker-free hand-eye calibration with joint metric-scale recovery.

Inputs are index-aligned pose lists:
    * end-effector poses E_i mapping robot-base coordinates into the
      end-effector frame (so base points are recovered via E^-1),
    * camera poses P_n mapping the shared model frame into each camera
      frame, in unscaled model units.

With relative motions T_E = E_{i+1} E_i^-1 and T_P = P_{n+1} P_n^-1 the
estimate X (camera -> end-effector) and scale lam satisfy the classical
hand-eye equation T_E X = X T_P(lam), where T_P(lam) keeps the rotation
and multiplies the translation by lam.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateMatrix,
    DegenerateMotion,
    LengthMismatch,
    RankDeficientC,
    ScaleAtBound,
    TooFewPoses,
)
from .geometry import Pose, inv_sqrt_psd, log_map, project_to_rotation

log = logging.getLogger(__name__)

DEFAULT_TAU_T = 0.1   # meters, convergence gate on mean translation residual
DEFAULT_TAU_R = 0.15  # Frobenius, convergence gate on mean rotation residual


@dataclass(frozen=True)
class MotionPair:
    """Relative end-effector motion (meters) and camera motion (model units)."""

    T_E: Pose
    T_P: Pose

    def angle_gap(self):
        """|angle(T_E) - angle(T_P)|; a diagnostic, never enforced."""
        from .geometry import rotation_angle

        return abs(
            rotation_angle(self.T_E.rotation) - rotation_angle(self.T_P.rotation)
        )


@dataclass(frozen=True)
class ScaleSearchConfig:
    lam_lo: float = 1e-3
    lam_hi: float = 1e3
    rel_tol: float = 1e-8
    num_prescan: int = 20
    bound_margin: float = 0.01  # raise if lam* within 1% of a bound
    flat_rel_spread: float = 1e-10


@dataclass(frozen=True)
class CalibrationConfig:
    scale_search: ScaleSearchConfig = field(default_factory=ScaleSearchConfig)
    tau_t: float = DEFAULT_TAU_T
    tau_r: float = DEFAULT_TAU_R
    all_pairs: bool = False  # use all (i, j) motions instead of consecutive


@dataclass
class CalibrationResult:
    rotation: np.ndarray        # camera -> end-effector
    translation: np.ndarray     # meters
    scale: float                # meters per model unit
    residuals_t: np.ndarray     # per pair, L2 norm of translation block
    residuals_r: np.ndarray     # per pair, Frobenius norm of rotation block
    converged: bool
    num_pairs: int
    tau_t: float = DEFAULT_TAU_T
    tau_r: float = DEFAULT_TAU_R

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.translation, frame="camera_metric")

    @property
    def mean_residual_t(self):
        return float(np.mean(self.residuals_t))

    @property
    def mean_residual_r(self):
        return float(np.mean(self.residuals_r))

    def to_dict(self):
        return {
            "rotation": self.rotation.reshape(-1).tolist(),
            "translation": self.translation.tolist(),
            "scale": self.scale,
            "residuals_t": np.asarray(self.residuals_t).tolist(),
            "residuals_r": np.asarray(self.residuals_r).tolist(),
            "converged": bool(self.converged),
            "num_pairs": self.num_pairs,
            "tau_t": self.tau_t,
            "tau_r": self.tau_r,
        }

    @staticmethod
    def from_dict(d):
        return CalibrationResult(
            rotation=np.array(d["rotation"], dtype=float).reshape(3, 3),
            translation=np.array(d["translation"], dtype=float),
            scale=float(d["scale"]),
            residuals_t=np.array(d["residuals_t"], dtype=float),
            residuals_r=np.array(d["residuals_r"], dtype=float),
            converged=bool(d["converged"]),
            num_pairs=int(d["num_pairs"]),
            tau_t=float(d.get("tau_t", DEFAULT_TAU_T)),
            tau_r=float(d.get("tau_r", DEFAULT_TAU_R)),
        )


def motion_pairs(end_effector, camera, all_pairs=False):
    """Relative motions from index-aligned pose lists.

    Consecutive (i, i+1) pairs by default; ``all_pairs`` adds every (i, j)
    with i < j for robustness experiments.
    """
    if len(end_effector) != len(camera):
        raise LengthMismatch(
            f"{len(end_effector)} end-effector poses vs {len(camera)} camera poses"
        )
    n = len(end_effector)
    if n < 3:
        raise TooFewPoses(f"need at least 3 poses, got {n}")
    if all_pairs:
        index_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    else:
        index_pairs = [(i, i + 1) for i in range(n - 1)]
    pairs = []
    for i, j in index_pairs:
        T_E = end_effector[j].compose(end_effector[i].inverse())
        T_P = camera[j].compose(camera[i].inverse())
        pairs.append(MotionPair(T_E=T_E, T_P=T_P))
    return pairs


def solve_rotation(pairs, rank_tol=1e-8):
    """Best-fit camera-to-end-effector rotation from motion pairs.

    The rotation axes satisfy alpha_i = R beta_i with alpha = LogMap of the
    end-effector rotation and beta = LogMap of the camera rotation; the
    least-squares rotation is (M^T M)^{-1/2} M^T with M = sum beta alpha^T.
    Requires at least two non-parallel rotation axes.
    """
    M = np.zeros((3, 3))
    for p in pairs:
        alpha = log_map(p.T_E.rotation)
        beta = log_map(p.T_P.rotation)
        M += np.outer(beta, alpha)
    svals = np.linalg.svd(M, compute_uv=False)
    if svals[2] <= rank_tol * max(svals[0], 1.0):
        raise DegenerateMotion(
            "rotation axes span fewer than 3 directions "
            f"(singular values {svals}); vary the trajectory axes"
        )
    try:
        R = inv_sqrt_psd(M.T @ M) @ M.T
    except DegenerateMatrix as exc:
        raise DegenerateMotion(str(exc)) from exc
    if np.linalg.det(R) < 0:
        R = project_to_rotation(R)
    return R


def _golden_section(f, lo, hi, rel_tol):
    """Golden-section minimum of a unimodal f on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rel_tol * (abs(a) + abs(b)) / 2.0:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def _stack_translation_system(pairs, R):
    """C (3k x 3), a (3k,), b (3k,) with C t = a - lam * b per pair."""
    C_blocks, a_parts, b_parts = [], [], []
    for p in pairs:
        C_blocks.append(np.eye(3) - p.T_E.rotation)
        a_parts.append(p.T_E.translation)
        b_parts.append(R @ p.T_P.translation)
    return np.vstack(C_blocks), np.concatenate(a_parts), np.concatenate(b_parts)


def solve_translation_scale(pairs, R, search: ScaleSearchConfig | None = None):
    """Joint translation + scale: closed-form t for fixed lam, 1-D search on lam.

    For fixed lam the residual ||C t - d(lam)||^2 with d = t_E - lam R t_P
    is minimized by t*(lam) = (C^T C)^-1 C^T d(lam); lam is found by a
    log-domain pre-scan followed by golden-section search.
    """
    search = search or ScaleSearchConfig()
    C, a_vec, b_vec = _stack_translation_system(pairs, R)
    svals = np.linalg.svd(C, compute_uv=False)
    if svals[2] <= 1e-8 * max(svals[0], 1.0):
        raise RankDeficientC(
            "stacked (I - R_E) blocks are rank deficient "
            "(rotation axes share a direction); translation is unobservable"
        )
    # Precompute the projector residual: r(lam) = Q (a - lam b) with
    # Q = I - C (C^T C)^-1 C^T, so the 1-D objective is a cheap quadratic.
    CtC_inv = np.linalg.inv(C.T @ C)
    P_hat = C @ CtC_inv @ C.T

    def t_star(lam):
        return CtC_inv @ (C.T @ (a_vec - lam * b_vec))

    def residual(lam):
        d = a_vec - lam * b_vec
        r = d - P_hat @ d
        return float(r @ r)

    probes = np.geomspace(search.lam_lo, search.lam_hi, search.num_prescan)
    values = np.array([residual(l) for l in probes])
    spread = values.max() - values.min()
    if spread <= search.flat_rel_spread * (1.0 + values.max()):
        raise ScaleAtBound(
            "residual is flat in the scale factor (camera translations "
            "carry no scale information); scale is unidentifiable"
        )
    k = int(np.argmin(values))
    lo = probes[max(k - 1, 0)]
    hi = probes[min(k + 1, len(probes) - 1)]
    lam = _golden_section(residual, lo, hi, search.rel_tol)
    if (
        lam <= search.lam_lo * (1.0 + search.bound_margin)
        or lam >= search.lam_hi / (1.0 + search.bound_margin)
    ):
        raise ScaleAtBound(
            f"scale optimum {lam:.4g} sits at the search bound "
            f"[{search.lam_lo:g}, {search.lam_hi:g}]"
        )
    return t_star(lam), float(lam)


def residuals(pairs, R, t, lam):
    """Per-pair consistency residuals of the hand-eye equation.

    delta = T_E X - X T_P(lam) as a 4x4 difference; returns (delta_t,
    delta_R) with delta_t the L2 norm of the translation block and
    delta_R the Frobenius norm of the rotation block.
    """
    X = np.eye(4)
    X[:3, :3] = R
    X[:3, 3] = t
    out = []
    for p in pairs:
        Tp = p.T_P.scaled_translation(lam).matrix()
        delta = p.T_E.matrix() @ X - X @ Tp
        out.append(
            (
                float(np.linalg.norm(delta[:3, 3])),
                float(np.linalg.norm(delta[:3, :3])),
            )
        )
    return out


def calibrate(end_effector, camera, config: CalibrationConfig | None = None):
    """Full hand-eye solve: motions -> rotation -> (translation, scale) -> residuals."""
    config = config or CalibrationConfig()
    pairs = motion_pairs(end_effector, camera, all_pairs=config.all_pairs)
    R = solve_rotation(pairs)
    t, lam = solve_translation_scale(pairs, R, config.scale_search)
    res = residuals(pairs, R, t, lam)
    res_t = np.array([r[0] for r in res])
    res_r = np.array([r[1] for r in res])
    converged = bool(
        res_t.mean() < config.tau_t and res_r.mean() < config.tau_r
    )
    log.info(
        "calibrated %d pairs: scale=%.6g mean_dt=%.4g mean_dR=%.4g converged=%s",
        len(pairs), lam, res_t.mean(), res_r.mean(), converged,
    )
    return CalibrationResult(
        rotation=R,
        translation=np.asarray(t, dtype=float),
        scale=lam,
        residuals_t=res_t,
        residuals_r=res_r,
        converged=converged,
        num_pairs=len(pairs),
        tau_t=config.tau_t,
        tau_r=config.tau_r,
    )
