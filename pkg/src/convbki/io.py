"""Frame, pose and config file formats."""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .voxel import GridSpec, as_label_matrix

FRAME_MAGIC = b"CBKIFRM1"
_FRAME_HEADER = struct.Struct("<8sII")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class FrameRecord:
    index: int
    positions: np.ndarray  # (N, 3) sensor frame
    labels: np.ndarray  # (N,) class ids or (N, C) probabilities
    pose: np.ndarray | None = None  # (4, 4)

    @property
    def hard(self):
        return self.labels.ndim == 1

    def label_matrix(self, num_classes):
        return as_label_matrix(self.labels, num_classes)

    def classes(self):
        return self.labels if self.hard else np.argmax(self.labels, axis=1)


def _check_class_ids(labels, num_classes, where):
    if num_classes is not None and labels.size and labels.max() >= num_classes:
        bad = int(np.flatnonzero(labels >= num_classes)[0])
        raise DataError(f"{where}: point {bad} has label {int(labels[bad])} >= {num_classes} classes")
    if labels.size and labels.min() < 0:
        raise DataError(f"{where}: negative label id")


def read_frame_csv(path, num_classes=None, index=0):
    """``x,y,z,label`` or ``x,y,z,p0,...,p{C-1}`` per line."""
    rows, width = [], None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric field in {raw!r}") from None
        if len(vals) < 4 or (width is not None and len(vals) != width):
            raise DataError(f"{path}:{lineno}: expected {width or '>= 4'} fields, got {len(vals)}")
        width = len(vals)
        rows.append(vals)
    arr = np.array(rows, dtype=np.float64).reshape(-1, width or 4)
    pos = arr[:, :3]
    if arr.shape[1] == 4:
        lab = arr[:, 3]
        if np.any(lab != np.round(lab)):
            raise DataError(f"{path}: class ids must be integers")
        labels = lab.astype(np.int64)
        _check_class_ids(labels, num_classes, path)
    else:
        labels = arr[:, 3:]
        if num_classes is not None and labels.shape[1] != num_classes:
            raise DataError(f"{path}: {labels.shape[1]} probabilities per point, expected {num_classes}")
    return FrameRecord(index, pos, labels)


def write_frame_csv(frame: FrameRecord, path):
    with open(path, "w") as fh:
        for p, y in zip(frame.positions, frame.labels):
            tail = str(int(y)) if frame.hard else ",".join(repr(float(v)) for v in y)
            fh.write(f"{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},{tail}\n")


def read_frame_bin(path, num_classes=None, index=0):
    data = Path(path).read_bytes()
    if len(data) < _FRAME_HEADER.size:
        raise DataError(f"{path}: truncated frame header")
    magic, n, c = _FRAME_HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise DataError(f"{path}: bad frame magic {magic!r}")
    width = 4 if c == 0 else 3 + c
    size = len(data) - _FRAME_HEADER.size
    if size != 4 * n * width:
        complete = size // (4 * width)
        if complete < n:
            raise DataError(f"{path}: record {complete} of {n} is truncated")
        raise DataError(f"{path}: {size - 4 * n * width} unexpected bytes after record {n - 1}")
    body = np.frombuffer(data, dtype="<f4", count=n * width, offset=_FRAME_HEADER.size)
    rec = body.reshape(n, width).astype(np.float64)
    if c == 0:
        lab = rec[:, 3]
        if np.any(lab != np.round(lab)):
            raise DataError(f"{path}: class ids must be integers")
        labels = lab.astype(np.int64)
        _check_class_ids(labels, num_classes, path)
    else:
        if num_classes is not None and c != num_classes:
            raise DataError(f"{path}: frame has {c} classes, expected {num_classes}")
        labels = rec[:, 3:]
    return FrameRecord(index, rec[:, :3], labels)


def write_frame_bin(frame: FrameRecord, path):
    n = len(frame.positions)
    c = 0 if frame.hard else frame.labels.shape[1]
    lab = frame.labels.reshape(n, 1 if frame.hard else c)
    body = np.hstack([frame.positions, lab]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_FRAME_HEADER.pack(FRAME_MAGIC, n, c))
        fh.write(body.tobytes())


def read_frame(path, num_classes=None, index=0):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(FRAME_MAGIC))
    if head == FRAME_MAGIC:
        return read_frame_bin(path, num_classes, index)
    return read_frame_csv(path, num_classes, index)


def frame_paths(directory):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"frame directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix in (".bin", ".csv", ".txt"))


def read_frames(directory, num_classes=None, poses=None):
    """All frames of a directory in file-name order, optionally paired with poses."""
    paths = frame_paths(directory)
    if poses is not None and len(poses) != len(paths):
        raise DataError(f"{directory}: {len(paths)} frames but {len(poses)} poses")
    frames = []
    for i, p in enumerate(paths):
        fr = read_frame(p, num_classes, i)
        if poses is not None:
            fr.pose = poses[i]
        frames.append(fr)
    return frames


def check_pose(pose, tol=1e-6):
    R = np.asarray(pose)[:3, :3]
    if np.max(np.abs(R @ R.T - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise DataError("pose rotation block is not a proper rotation")


def read_poses(path):
    """KITTI-style pose file: 12 floats per line, row-major 3x4. Returns (N, 4, 4)."""
    poses = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        if not raw.strip():
            continue
        try:
            vals = [float(v) for v in raw.split()]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric pose entry") from None
        if len(vals) != 12:
            raise DataError(f"{path}:{lineno}: expected 12 values, got {len(vals)}")
        T = np.eye(4)
        T[:3, :] = np.array(vals).reshape(3, 4)
        try:
            check_pose(T)
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        poses.append(T)
    return np.array(poses).reshape(-1, 4, 4)


def write_poses(poses, path):
    with open(path, "w") as fh:
        for T in poses:
            fh.write(" ".join(repr(float(v)) for v in np.asarray(T)[:3, :].ravel()) + "\n")


@dataclass
class MapConfig:
    resolution: float = 0.2
    filter_size: int = 5
    num_classes: int = 4
    bounds_min: tuple = (-10.0, -10.0, -0.4)
    bounds_max: tuple = (10.0, 10.0, 3.2)
    kernel_variant: str = "compound"
    prior: float = 1e-3
    gc_window: int | None = 10
    variance_threshold: float | None = 0.01
    label_mode: str = "hard"

    def grid_spec(self):
        return GridSpec(np.array(self.bounds_min), np.array(self.bounds_max),
                        self.resolution, self.num_classes)


def _parse_value(name, text):
    text = text.strip()
    if name in ("bounds_min", "bounds_max"):
        vals = tuple(float(v) for v in text.split(","))
        if len(vals) != 3:
            raise ValueError(f"{name} needs 3 comma-separated values")
        return vals
    if name in ("gc_window", "variance_threshold") and text.lower() in ("none", "off", "inf"):
        return None
    if name in ("filter_size", "num_classes", "gc_window"):
        return int(text)
    if name in ("resolution", "prior", "variance_threshold"):
        return float(text)
    if name == "kernel_variant":
        if text not in ("single", "perclass", "compound"):
            raise ValueError(f"unknown kernel variant {text!r}")
        return text
    if name == "label_mode":
        if text not in ("hard", "soft"):
            raise ValueError(f"label_mode must be hard or soft, got {text!r}")
        return text
    raise KeyError(name)


class ConfigKeyError(KeyError):
    pass


def read_config(path) -> MapConfig:
    known = {f.name for f in fields(MapConfig)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigKeyError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _parse_value(key, val)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return MapConfig(**values)


def write_config(cfg: MapConfig, path):
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, tuple):
            return ",".join(repr(float(x)) for x in v)
        return str(v)

    with open(path, "w") as fh:
        for f in fields(MapConfig):
            fh.write(f"{f.name}={fmt(getattr(cfg, f.name))}\n")
