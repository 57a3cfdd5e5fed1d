"""Implicit scene fields: occupancy, segmentation, and color.

A small fully connected network (one hidden ReLU layer) over sinusoidally
encoded, box-normalized 3D coordinates. Training is deterministic
mini-batch gradient descent with momentum; the backward pass is written
out by hand and validated against finite differences (``gradient_check``).
"""

from __future__ import annotations

import base64
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateBounds,
    EmptyCloud,
    InputError,
    SingleClass,
)

log = logging.getLogger(__name__)

HEAD_OCCUPANCY = "occupancy"      # sigmoid scalar
HEAD_SEGMENTATION = "segmentation"  # softmax over K classes
HEAD_COLOR = "color"              # linear 3-vector


@dataclass(frozen=True)
class PositionalEncoding:
    """Per-axis (sin, cos) lifting at frequencies 2^k pi, k = 0..L-1."""

    num_frequencies: int = 6
    include_raw: bool = True

    @property
    def output_dim(self):
        return 3 * self.include_raw + 6 * self.num_frequencies

    def encode(self, x):
        """Encode (N, 3) coordinates already normalized to [-1, 1]^3."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        parts = [x] if self.include_raw else []
        for k in range(self.num_frequencies):
            ang = (2.0**k) * np.pi * x
            parts.append(np.sin(ang))
            parts.append(np.cos(ang))
        return np.concatenate(parts, axis=1)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 512
    epochs: int = 200
    seed: int = 0
    hidden_size: int = 256
    num_frequencies: int = 6
    include_raw: bool = True
    # Occupancy-only: negative sampling box (defaults to the positive
    # cloud's bounding box inflated by 20% per axis) and ratio.
    neg_bounds: tuple | None = None
    negatives_per_positive: float = 1.0
    bounds_inflation: float = 0.2


@dataclass
class FieldModel:
    head: str
    encoding: PositionalEncoding
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    norm_center: np.ndarray   # coordinate normalization, stored with the model
    norm_half: np.ndarray
    num_classes: int = 1
    class_values: np.ndarray | None = None  # original labels, argmax-indexed
    final_loss: float = float("nan")
    initial_loss: float = float("nan")
    train_config: TrainConfig | None = None

    def normalize(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        # Clamp to the modeled box: the sinusoidal features are periodic,
        # so far-away queries would otherwise alias back into the scene.
        # Clamped queries read the field at the nearest boundary instead.
        return np.clip((p - self.norm_center) / self.norm_half, -1.0, 1.0)

    def forward(self, points):
        """Raw head output (pre-activation) for (N, 3) coordinates."""
        feat = self.encoding.encode(self.normalize(points))
        h = np.maximum(feat @ self.W1 + self.b1, 0.0)
        return h @ self.W2 + self.b2

    def to_dict(self):
        def blob(a):
            return base64.b64encode(
                np.ascontiguousarray(a, dtype=np.float32).tobytes()
            ).decode("ascii")

        return {
            "head": self.head,
            "encoding": {
                "num_frequencies": self.encoding.num_frequencies,
                "include_raw": self.encoding.include_raw,
            },
            "shapes": {
                "W1": list(self.W1.shape),
                "W2": list(self.W2.shape),
            },
            "weights": {
                "W1": blob(self.W1),
                "b1": blob(self.b1),
                "W2": blob(self.W2),
                "b2": blob(self.b2),
            },
            "norm_center": self.norm_center.tolist(),
            "norm_half": self.norm_half.tolist(),
            "num_classes": self.num_classes,
            "class_values": (
                None
                if self.class_values is None
                else np.asarray(self.class_values).tolist()
            ),
            "final_loss": self.final_loss,
            "initial_loss": self.initial_loss,
            "train_config": (
                vars(self.train_config).copy() if self.train_config else None
            ),
        }

    @staticmethod
    def from_dict(d):
        def unblob(s, shape):
            a = np.frombuffer(base64.b64decode(s), dtype=np.float32)
            return a.reshape(shape).astype(float)

        enc = PositionalEncoding(**d["encoding"])
        w1_shape = d["shapes"]["W1"]
        w2_shape = d["shapes"]["W2"]
        cfg = d.get("train_config")
        if cfg is not None:
            if cfg.get("neg_bounds") is not None:
                cfg = dict(cfg, neg_bounds=tuple(map(tuple, cfg["neg_bounds"])))
            cfg = TrainConfig(**cfg)
        return FieldModel(
            head=d["head"],
            encoding=enc,
            W1=unblob(d["weights"]["W1"], w1_shape),
            b1=unblob(d["weights"]["b1"], (w1_shape[1],)),
            W2=unblob(d["weights"]["W2"], w2_shape),
            b2=unblob(d["weights"]["b2"], (w2_shape[1],)),
            norm_center=np.array(d["norm_center"], dtype=float),
            norm_half=np.array(d["norm_half"], dtype=float),
            num_classes=int(d["num_classes"]),
            class_values=(
                None
                if d.get("class_values") is None
                else np.array(d["class_values"])
            ),
            final_loss=float(d["final_loss"]),
            initial_loss=float(d["initial_loss"]),
            train_config=cfg,
        )


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_dz(head, z, y):
    """Mean loss and its gradient w.r.t. the pre-activation output."""
    n = len(z)
    if head == HEAD_OCCUPANCY:
        p = _sigmoid(z[:, 0])
        yv = y.reshape(-1)
        eps = 1e-12
        loss = -np.mean(yv * np.log(p + eps) + (1 - yv) * np.log(1 - p + eps))
        dz = ((p - yv) / n)[:, None]
    elif head == HEAD_SEGMENTATION:
        p = _softmax(z)
        idx = y.astype(int).reshape(-1)
        loss = -np.mean(np.log(p[np.arange(n), idx] + 1e-12))
        dz = p.copy()
        dz[np.arange(n), idx] -= 1.0
        dz /= n
    elif head == HEAD_COLOR:
        # Squared L2 per sample, averaged over the batch. Note the MSE
        # gradients run much smaller than the classification heads', so
        # this head wants a learning rate around 0.05 rather than 1e-2.
        diff = z - y
        loss = float(np.mean((diff**2).sum(axis=1)))
        dz = 2.0 * diff / n
    else:
        raise InputError(f"unknown head {head!r}")
    return float(loss), dz


def _forward_backward(params, feat, y, head):
    W1, b1, W2, b2 = params
    z1 = feat @ W1 + b1
    a = np.maximum(z1, 0.0)
    z2 = a @ W2 + b2
    loss, dz2 = _loss_and_dz(head, z2, y)
    dW2 = a.T @ dz2
    db2 = dz2.sum(axis=0)
    da = dz2 @ W2.T
    dz1 = da * (z1 > 0)
    dW1 = feat.T @ dz1
    db1 = dz1.sum(axis=0)
    return loss, (dW1, db1, dW2, db2)


def _init_params(rng, in_dim, hidden, out_dim):
    W1 = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, hidden))
    b1 = np.zeros(hidden)
    W2 = rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, out_dim))
    b2 = np.zeros(out_dim)
    return [W1, b1, W2, b2]


def _norm_box(points, inflation=0.0):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0 * (1.0 + inflation)
    half = np.maximum(half, 1e-6)
    return center, half


def _train(points, y, head, out_dim, cfg: TrainConfig, resample_negatives=None):
    """Shared training loop; ``resample_negatives`` refreshes part of the
    dataset each epoch (NCE-style) when provided."""
    rng = np.random.default_rng(cfg.seed)
    enc = PositionalEncoding(cfg.num_frequencies, cfg.include_raw)
    center, half = _norm_box(points, inflation=0.05)
    params = _init_params(rng, enc.output_dim, cfg.hidden_size, out_dim)
    velocity = [np.zeros_like(p) for p in params]

    def encode(p):
        return enc.encode((p - center) / half)

    initial_loss = None
    loss = float("nan")
    for epoch in range(cfg.epochs):
        if resample_negatives is not None:
            pts, targets = resample_negatives(rng)
        else:
            pts, targets = points, y
        feat = encode(pts)
        order = rng.permutation(len(feat))
        epoch_loss = 0.0
        nb = 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            loss, grads = _forward_backward(params, feat[idx], targets[idx], head)
            epoch_loss += loss
            nb += 1
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p += v
        loss = epoch_loss / max(nb, 1)
        if initial_loss is None:
            initial_loss = loss
    log.info("trained %s head: loss %.4g -> %.4g", head, initial_loss, loss)
    return FieldModel(
        head=head,
        encoding=enc,
        W1=params[0],
        b1=params[1],
        W2=params[2],
        b2=params[3],
        norm_center=center,
        norm_half=half,
        num_classes=out_dim if head == HEAD_SEGMENTATION else 1,
        final_loss=loss,
        initial_loss=initial_loss,
        train_config=cfg,
    )


def _positive_points(cloud):
    pts = np.asarray(cloud.points if hasattr(cloud, "points") else cloud)
    if len(pts) == 0:
        raise EmptyCloud("no points to train on")
    return pts


def train_occupancy(cloud, cfg: TrainConfig | None = None) -> FieldModel:
    """Occupancy classifier: cloud points vs uniform free-space negatives.

    Negatives are redrawn every epoch from the configured box (default:
    cloud bounding box inflated by 20% per axis).
    """
    cfg = cfg or TrainConfig()
    pos = _positive_points(cloud)
    if cfg.neg_bounds is not None:
        lo = np.asarray(cfg.neg_bounds[0], dtype=float)
        hi = np.asarray(cfg.neg_bounds[1], dtype=float)
    else:
        center, half = _norm_box(pos, inflation=cfg.bounds_inflation)
        lo, hi = center - half, center + half
    if (hi <= lo).any():
        raise DegenerateBounds(f"negative-sample box [{lo}, {hi}] is degenerate")
    if (pos.min(axis=0) < lo - 1e-9).any() or (pos.max(axis=0) > hi + 1e-9).any():
        raise DegenerateBounds("negative-sample box does not contain the cloud")
    n_neg = max(int(len(pos) * cfg.negatives_per_positive), 1)

    def resample(rng):
        neg = rng.uniform(lo, hi, size=(n_neg, 3))
        pts = np.vstack([pos, neg])
        targets = np.concatenate([np.ones(len(pos)), np.zeros(n_neg)])
        return pts, targets

    # Normalization must cover negatives too; train on the box extents.
    box_corners = np.vstack([pos, lo[None, :], hi[None, :]])
    model = _train(box_corners, None, HEAD_OCCUPANCY, 1, cfg, resample)
    return model


def train_segmentation(cloud, cfg: TrainConfig | None = None) -> FieldModel:
    """Multi-class field over per-point integer labels."""
    cfg = cfg or TrainConfig()
    pts = _positive_points(cloud)
    labels = np.asarray(cloud.segmentation).astype(int)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise SingleClass(f"only class {classes} present; nothing to separate")
    remap = {c: i for i, c in enumerate(classes)}
    y = np.array([remap[c] for c in labels])
    model = _train(pts, y, HEAD_SEGMENTATION, len(classes), cfg)
    model.class_values = classes
    return model


def train_color(cloud, cfg: TrainConfig | None = None) -> FieldModel:
    """RGB regression field; colors must lie in [0, 1]."""
    cfg = cfg or TrainConfig()
    pts = _positive_points(cloud)
    if getattr(cloud, "colors", None) is None:
        raise EmptyCloud("cloud carries no colors")
    colors = np.asarray(cloud.colors, dtype=float)
    if colors.min() < -1e-9 or colors.max() > 1 + 1e-9:
        raise InputError("colors must lie in [0, 1]")
    return _train(pts, colors, HEAD_COLOR, 3, cfg)


def query(model: FieldModel, points):
    """Batch evaluation: occupancy probability, class distribution, or RGB."""
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        shape = {HEAD_OCCUPANCY: (0,), HEAD_SEGMENTATION: (0, model.num_classes)}
        return np.zeros(shape.get(model.head, (0, 3)))
    z = model.forward(points)
    if model.head == HEAD_OCCUPANCY:
        return _sigmoid(z[:, 0])
    if model.head == HEAD_SEGMENTATION:
        return _softmax(z)
    return z


def gradient_check(head, seed=0, hidden=8, n_samples=20, fd_step=1e-5):
    """Analytic backprop vs central finite differences; max relative error."""
    rng = np.random.default_rng(seed)
    enc = PositionalEncoding(num_frequencies=2)
    pts = rng.uniform(-1, 1, size=(n_samples, 3))
    feat = enc.encode(pts)
    out_dim = {HEAD_OCCUPANCY: 1, HEAD_SEGMENTATION: 3, HEAD_COLOR: 3}[head]
    if head == HEAD_OCCUPANCY:
        y = rng.integers(0, 2, n_samples).astype(float)
    elif head == HEAD_SEGMENTATION:
        y = rng.integers(0, out_dim, n_samples)
    else:
        y = rng.uniform(0, 1, size=(n_samples, 3))
    params = _init_params(rng, enc.output_dim, hidden, out_dim)
    _, grads = _forward_backward(params, feat, y, head)

    max_rel = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            lp, _ = _forward_backward(params, feat, y, head)
            flat[i] = orig - fd_step
            lm, _ = _forward_backward(params, feat, y, head)
            flat[i] = orig
            fd = (lp - lm) / (2 * fd_step)
            denom = max(abs(fd), abs(gflat[i]), 1e-6)
            max_rel = max(max_rel, abs(fd - gflat[i]) / denom)
    return max_rel
