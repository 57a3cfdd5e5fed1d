"""Global alignment of pairwise pointmap predictions.

Each pairwise prediction for an ordered pair (n, m) carries pointmaps for
both images expressed in camera n's frame, plus per-pixel confidences.
``align_global`` recovers per-view camera-to-global poses P_n, per-edge
scales sigma_e and per-view global pointmaps Xhat^n by minimizing

    sum_e sum_{i in e} sum_{w,h} C^{n,i}_{wh} || Xhat^i_{wh}
                                   - sigma_e P_n X^{n,i}_{wh} ||_2

with first-order gradient descent on a good closed-form initialization.
Gauge: P_1 = identity and sigma of the first edge = 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DisconnectedGraph, EmptyCloud, InputError
from .geometry import Pose, exp_map, project_to_rotation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairwisePrediction:
    """Foundation-model output for one ordered image pair (n, m).

    All arrays are (H, W, ...) row-major; both pointmaps live in camera
    n's frame and model units.
    """

    n: int
    m: int
    pointmap_self: np.ndarray    # (H, W, 3), view n in frame n
    pointmap_other: np.ndarray   # (H, W, 3), view m in frame n
    confidence_self: np.ndarray  # (H, W)
    confidence_other: np.ndarray  # (H, W)

    def __post_init__(self):
        shapes = {
            self.pointmap_self.shape[:2],
            self.pointmap_other.shape[:2],
            self.confidence_self.shape,
            self.confidence_other.shape,
        }
        if len(shapes) != 1:
            raise InputError(f"pair ({self.n},{self.m}): inconsistent shapes {shapes}")
        if (self.confidence_self < 0).any() or (self.confidence_other < 0).any():
            raise InputError(f"pair ({self.n},{self.m}): negative confidence")

    @property
    def height(self):
        return self.pointmap_self.shape[0]

    @property
    def width(self):
        return self.pointmap_self.shape[1]


@dataclass(frozen=True)
class PairGraph:
    num_views: int
    edges: tuple  # ordered (n, m) pairs

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))

    def is_connected(self):
        adj = {v: set() for v in range(self.num_views)}
        for n, m in self.edges:
            adj[n].add(m)
            adj[m].add(n)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.num_views


def default_pair_graph(num_views, window=5, complete_up_to=12):
    """Complete graph for small N, sliding window of fixed width beyond."""
    edges = []
    for n in range(num_views):
        for m in range(num_views):
            if n == m:
                continue
            if num_views <= complete_up_to or abs(n - m) < window:
                edges.append((n, m))
    return PairGraph(num_views, tuple(edges))


@dataclass(frozen=True)
class AlignConfig:
    step: float = 1e-2
    tol: float = 1e-6
    max_iters: int = 2000
    max_halvings: int = 40
    # Objective floor per residual term; noiseless problems stop here.
    abs_floor_per_term: float = 1e-16
    # The L2 residual norm is smoothed as sqrt(|r|^2 + eps^2) - eps so the
    # kink at exactly-zero residuals does not stall the descent.
    norm_eps: float = 1e-8


@dataclass
class AlignmentResult:
    poses: list          # per-view Pose, camera -> global, model units
    sigmas: np.ndarray   # per-edge positive scales, ordered like graph.edges
    pointmaps: list      # per-view (H, W, 3) global pointmaps
    confidences: list    # per-view (H, W) confidence
    objective: float
    objective_trace: np.ndarray
    converged: bool
    graph: PairGraph


def _weighted_umeyama(src, dst, w):
    """Similarity (s, R, t) with dst ~= s R src + t, confidence-weighted."""
    w = w.reshape(-1)
    wsum = w.sum()
    if wsum <= 0:
        return 1.0, np.eye(3), np.zeros(3)
    mu_s = (w[:, None] * src).sum(0) / wsum
    mu_d = (w[:, None] * dst).sum(0) / wsum
    src_c = src - mu_s
    dst_c = dst - mu_d
    cov = (w[:, None] * dst_c).T @ src_c / wsum
    U, S, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt
    var_s = (w * (src_c**2).sum(1)).sum() / wsum
    s = float(np.trace(np.diag(S) @ D) / var_s) if var_s > 0 else 1.0
    t = mu_d - s * (R @ mu_s)
    return s, R, t


def _initialize(preds, graph):
    """Spanning-tree initialization of poses, scales, and global maps.

    For an edge (n, m) the prediction holds view m's pixels in frame n;
    corresponding them with view m's self-map (from any edge referenced
    by m) gives the frame-m -> frame-n similarity via weighted Umeyama.
    """
    by_ref = {}
    for p in preds:
        by_ref.setdefault(p.n, []).append(p)
    num_views = graph.num_views

    # Edge weights for tree selection: total confidence mass.
    def edge_weight(p):
        return float(p.confidence_self.sum() + p.confidence_other.sum())

    # sim[v] = (s, R, t) mapping frame v into the global (frame-0) frame.
    sims = {0: (1.0, np.eye(3), np.zeros(3))}
    candidates = sorted(preds, key=edge_weight, reverse=True)
    changed = True
    while changed:
        changed = False
        for p in candidates:
            known, new = None, None
            if p.n in sims and p.m not in sims:
                known, new = p.n, p.m
            elif p.m in sims and p.n not in sims:
                known, new = p.m, p.n
            else:
                continue
            if p.m not in by_ref:
                continue  # no self-map for m; try another edge
            self_m = by_ref[p.m][0]
            src = self_m.pointmap_self.reshape(-1, 3)
            dst = p.pointmap_other.reshape(-1, 3)
            w = (
                self_m.confidence_self.reshape(-1)
                * p.confidence_other.reshape(-1)
            )
            s_rel, R_rel, t_rel = _weighted_umeyama(src, dst, w)  # m -> n
            s_k, R_k, t_k = sims[known]
            if new == p.m:
                # global <- n <- m
                sims[new] = (
                    s_k * s_rel,
                    R_k @ R_rel,
                    s_k * (R_k @ t_rel) + t_k,
                )
            else:
                # global <- m <- n : invert the m -> n similarity
                s_inv = 1.0 / s_rel
                R_inv = R_rel.T
                t_inv = -s_inv * (R_inv @ t_rel)
                sims[new] = (
                    s_k * s_inv,
                    R_k @ R_inv,
                    s_k * (R_k @ t_inv) + t_k,
                )
            changed = True
    for v in range(num_views):
        sims.setdefault(v, (1.0, np.eye(3), np.zeros(3)))

    rotations = [sims[v][1] for v in range(num_views)]
    # The model predicts sigma_e (R x + t), so with sigma_e ~ s_n the pose
    # translation is the similarity translation divided by the view scale.
    translations = [sims[v][2] / sims[v][0] for v in range(num_views)]
    # Global pointmaps: confidence-weighted average of every edge's
    # prediction of the view (the squared-loss optimum given the poses).
    num = [None] * num_views
    den = [None] * num_views
    conf_acc = [[] for _ in range(num_views)]
    for p in preds:
        s, R, t = sims[p.n]
        for view, pm, conf in (
            (p.n, p.pointmap_self, p.confidence_self),
            (p.m, p.pointmap_other, p.confidence_other),
        ):
            pred = (s * (pm.reshape(-1, 3) @ R.T) + t).reshape(pm.shape)
            if num[view] is None:
                num[view] = np.zeros_like(pred)
                den[view] = np.zeros(pm.shape[:2])
            num[view] += conf[..., None] * pred
            den[view] += conf
            if view == p.n:
                conf_acc[view].append(conf)
    pointmaps, confidences = [], []
    for v in range(num_views):
        safe = np.maximum(den[v], 1e-12)[..., None]
        pointmaps.append(num[v] / safe)
        if conf_acc[v]:
            confidences.append(np.mean(conf_acc[v], axis=0))
        else:
            donor = next(p for p in preds if p.m == v)
            confidences.append(donor.confidence_other.copy())

    # Per-edge scale: the reference view's similarity scale (the model's
    # pair frame is view n's frame up to that scale).
    sigmas = np.array([sims[p.n][0] for p in preds])
    return rotations, translations, sigmas, pointmaps, confidences


def _objective_and_grads(preds, rotations, translations, log_sigmas,
                         pointmaps, want_grads=True, norm_eps=1e-8):
    """Objective sum C ||r||_2 (eps-smoothed) and gradients.

    Rotation gradients are taken w.r.t. a left-multiplied axis-angle
    increment delta: R <- exp(delta) R.
    """
    nv = len(rotations)
    obj = 0.0
    if want_grads:
        g_rot = [np.zeros(3) for _ in range(nv)]
        g_trn = [np.zeros(3) for _ in range(nv)]
        g_sig = np.zeros(len(preds))
        g_pm = [np.zeros_like(pm) for pm in pointmaps]
    for e, p in enumerate(preds):
        sigma = np.exp(log_sigmas[e])
        R, t = rotations[p.n], translations[p.n]
        for view, pm, conf in (
            (p.n, p.pointmap_self, p.confidence_self),
            (p.m, p.pointmap_other, p.confidence_other),
        ):
            x = pm.reshape(-1, 3)
            c = conf.reshape(-1)
            y = x @ R.T  # rotated source points
            pred = sigma * (y + t)
            r = pointmaps[view].reshape(-1, 3) - pred
            smooth = np.sqrt((r**2).sum(axis=1) + norm_eps**2)
            obj += float((c * (smooth - norm_eps)).sum())
            if not want_grads:
                continue
            rhat = r / smooth[:, None]
            cw = c[:, None] * rhat  # d obj / d r per point
            # d r / d Xhat = I
            g_pm[view] += cw.reshape(pointmaps[view].shape)
            # d r / d t = -sigma I
            g_trn[p.n] += -sigma * cw.sum(0)
            # pred = sigma (exp(delta) y + t); d(exp(delta) y)/d delta at
            # delta=0 is -skew(y), so d r/d delta = sigma skew(y) and the
            # chain rule gives -sigma sum_i y_i x (c_i rhat_i).
            g_rot[p.n] += -sigma * np.cross(y, cw).sum(0)
            # d r / d log sigma = -sigma (y + t)
            g_sig[e] += float(-(cw * (sigma * (y + t))).sum())
    if want_grads:
        return obj, (g_rot, g_trn, g_sig, g_pm)
    return obj, None


def align_global(preds, graph: PairGraph | None = None,
                 config: AlignConfig | None = None):
    """Recover globally consistent poses, scales, and pointmaps.

    Returns an AlignmentResult; ``converged`` is False when the iteration
    budget runs out while the objective is still moving by more than
    100x the tolerance.
    """
    config = config or AlignConfig()
    if graph is None:
        num_views = max(max(p.n, p.m) for p in preds) + 1
        graph = PairGraph(num_views, tuple((p.n, p.m) for p in preds))
    if graph.num_views < 2:
        raise InputError("need at least 2 views")
    have = {(p.n, p.m) for p in preds}
    missing = [e for e in graph.edges if e not in have]
    if missing:
        raise InputError(f"graph edges without predictions: {missing[:5]}")
    if not graph.is_connected():
        raise DisconnectedGraph("pair graph does not connect all views")
    preds = [next(p for p in preds if (p.n, p.m) == e) for e in graph.edges]

    rotations, translations, sigmas, pointmaps, confidences = _initialize(
        preds, graph
    )
    # Gauge: view 0 pose = identity, first edge scale = 1. The initializer
    # anchors view 0; rescaling the global frame by 1/sigma_0 fixes the
    # scale gauge and leaves the pose parameters untouched.
    s0 = sigmas[0]
    sigmas = sigmas / s0
    pointmaps = [pm / s0 for pm in pointmaps]
    log_sigmas = np.log(np.maximum(sigmas, 1e-12))

    n_terms = sum(2 * p.height * p.width for p in preds)
    floor = config.abs_floor_per_term * n_terms
    step = config.step
    obj, grads = _objective_and_grads(
        preds, rotations, translations, log_sigmas, pointmaps,
        norm_eps=config.norm_eps,
    )
    trace = [obj]
    converged = True
    last_rel = 0.0
    for it in range(config.max_iters):
        if obj <= floor:
            break
        g_rot, g_trn, g_sig, g_pm = grads
        accepted = False
        for _ in range(config.max_halvings):
            new_rot = list(rotations)
            new_trn = list(translations)
            for v in range(1, graph.num_views):  # view 0 pinned
                new_rot[v] = exp_map(-step * g_rot[v]) @ rotations[v]
                new_trn[v] = translations[v] - step * g_trn[v]
            new_ls = log_sigmas - step * g_sig
            new_ls[0] = log_sigmas[0]  # first edge pinned
            new_pm = [pm - step * g for pm, g in zip(pointmaps, g_pm)]
            new_obj, new_grads = _objective_and_grads(
                preds, new_rot, new_trn, new_ls, new_pm,
                norm_eps=config.norm_eps,
            )
            if new_obj < obj:
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break
        last_rel = (obj - new_obj) / max(obj, 1e-300)
        rotations, translations = new_rot, new_trn
        log_sigmas, pointmaps = new_ls, new_pm
        obj, grads = new_obj, new_grads
        trace.append(obj)
        step = min(step * 1.5, config.step)
        if last_rel < config.tol:
            break
    else:
        if last_rel > 100.0 * config.tol:
            converged = False
            log.warning(
                "alignment hit max_iters=%d with relative change %.3g",
                config.max_iters, last_rel,
            )

    # Re-orthonormalize after many small increments.
    poses = [
        Pose(project_to_rotation(R), t, frame="camera_model")
        for R, t in zip(rotations, translations)
    ]
    return AlignmentResult(
        poses=poses,
        sigmas=np.exp(log_sigmas),
        pointmaps=pointmaps,
        confidences=confidences,
        objective=obj,
        objective_trace=np.array(trace),
        converged=converged,
        graph=graph,
    )


def extract_point_cloud(result: AlignmentResult, threshold):
    """Confidence-filtered points with (view, pixel) provenance.

    Returns (points (N,3), views (N,), pixels (N,2) as (w, h) columns,
    confidences (N,)). Raises EmptyCloud when nothing passes.
    """
    if threshold < 0:
        raise InputError("threshold must be >= 0")
    pts, views, pixels, confs = [], [], [], []
    for v, (pm, conf) in enumerate(zip(result.pointmaps, result.confidences)):
        mask = conf >= threshold
        if not mask.any():
            continue
        hh, ww = np.nonzero(mask)
        pts.append(pm[mask])
        views.append(np.full(len(hh), v))
        pixels.append(np.column_stack([ww, hh]))
        confs.append(conf[mask])
    if not pts:
        raise EmptyCloud(f"no point exceeds confidence threshold {threshold}")
    return (
        np.concatenate(pts),
        np.concatenate(views),
        np.concatenate(pixels),
        np.concatenate(confs),
    )
