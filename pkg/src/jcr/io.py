"""File formats: pose lists, pairwise pointmap containers, PLY clouds.

Formats:
    * Pose list: JSON array of {"frame": str, "matrix": [16 floats]}
      (row-major 4x4).
    * Pointmap container ("JCRPM1"): per-pair binary file with a header of
      magic bytes plus W, H, n, m as little-endian int32, followed by four
      float32 arrays in row-major order (pointmap_self, pointmap_other,
      confidence_self, confidence_other). A sidecar JSON manifest lists
      the pair files and the view count.
    * PLY: binary little-endian, x/y/z float32, red/green/blue uchar,
      optional label int32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .alignment import PairGraph, PairwisePrediction
from .errors import InputError
from .geometry import Pose

PM_MAGIC = b"JCRPM1"


# ---------------------------------------------------------------------------
# Pose lists


def save_poses(path, poses):
    data = [
        {"frame": p.frame or "", "matrix": p.matrix().reshape(-1).tolist()}
        for p in poses
    ]
    Path(path).write_text(json.dumps(data, indent=1))


def load_poses(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read pose file {path}: {exc}") from exc
    poses = []
    for i, entry in enumerate(data):
        m = entry.get("matrix")
        if m is None or len(m) != 16:
            raise InputError(f"{path}: entry {i} lacks a 16-number matrix")
        poses.append(Pose.from_matrix(np.array(m), frame=entry.get("frame") or None))
    return poses


# ---------------------------------------------------------------------------
# Pairwise pointmap containers


def save_pair(path, pair: PairwisePrediction):
    h, w = pair.pointmap_self.shape[:2]
    with open(path, "wb") as f:
        f.write(PM_MAGIC)
        f.write(struct.pack("<4i", w, h, pair.n, pair.m))
        for arr in (
            pair.pointmap_self,
            pair.pointmap_other,
            pair.confidence_self,
            pair.confidence_other,
        ):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_pair(path):
    raw = Path(path).read_bytes()
    if raw[: len(PM_MAGIC)] != PM_MAGIC:
        raise InputError(f"{path}: bad magic, not a pointmap container")
    w, h, n, m = struct.unpack_from("<4i", raw, len(PM_MAGIC))
    off = len(PM_MAGIC) + 16
    sizes = [(h, w, 3), (h, w, 3), (h, w), (h, w)]
    arrays = []
    for shape in sizes:
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        arrays.append(arr.reshape(shape).astype(float))
        off += count * 4
    if off != len(raw):
        raise InputError(f"{path}: trailing bytes ({len(raw) - off})")
    return PairwisePrediction(
        n=n,
        m=m,
        pointmap_self=arrays[0],
        pointmap_other=arrays[1],
        confidence_self=arrays[2],
        confidence_other=arrays[3],
    )


def save_pair_set(directory, pairs, graph: PairGraph):
    """All pairs as JCRPM1 files plus the JSON manifest; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for pair in pairs:
        name = f"pair_{pair.n:03d}_{pair.m:03d}.jcrpm"
        save_pair(directory / name, pair)
        entries.append({"n": pair.n, "m": pair.m, "file": name})
    manifest = {"num_views": graph.num_views, "pairs": entries}
    path = directory / "pairs.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_pair_set(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read pair manifest {manifest_path}: {exc}") from exc
    pairs = [
        load_pair(manifest_path.parent / e["file"]) for e in manifest["pairs"]
    ]
    graph = PairGraph(
        int(manifest["num_views"]), tuple((p.n, p.m) for p in pairs)
    )
    return pairs, graph


# ---------------------------------------------------------------------------
# PLY point clouds


def save_ply(path, points, colors=None, labels=None):
    points = np.asarray(points, dtype="<f4")
    n = len(points)
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
    ]
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if colors is not None:
        header += [
            "property uchar red",
            "property uchar green",
            "property uchar blue",
        ]
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if labels is not None:
        header.append("property int label")
        fields.append(("label", "<i4"))
    header.append("end_header")
    rec = np.empty(n, dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = points[:, 0], points[:, 1], points[:, 2]
    if colors is not None:
        c = np.clip(np.asarray(colors, dtype=float), 0.0, 1.0)
        c = np.round(c * 255).astype("u1")
        rec["red"], rec["green"], rec["blue"] = c[:, 0], c[:, 1], c[:, 2]
    if labels is not None:
        rec["label"] = np.asarray(labels, dtype="<i4")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def load_ply(path):
    """Read back the subset of PLY this package writes.

    Returns (points, colors or None, labels or None).
    """
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise InputError(f"{path}: missing PLY header terminator")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n") :]
    n = None
    fields = []
    type_map = {"float": "<f4", "uchar": "u1", "int": "<i4"}
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            fields.append((parts[2], type_map[parts[1]]))
    if n is None:
        raise InputError(f"{path}: no vertex element")
    rec = np.frombuffer(body, dtype=np.dtype(fields), count=n)
    points = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(float)
    colors = None
    labels = None
    names = rec.dtype.names
    if "red" in names:
        colors = (
            np.column_stack([rec["red"], rec["green"], rec["blue"]]).astype(float)
            / 255.0
        )
    if "label" in names:
        labels = rec["label"].astype(int)
    return points, colors, labels


# ---------------------------------------------------------------------------
# JSON helpers


def save_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True))


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
