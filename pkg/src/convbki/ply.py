"""ASCII PLY export of voxel centroids colored by their most likely class."""

from __future__ import annotations

import numpy as np

from .global_map import GlobalMap
from .voxel import argmax_label, expectation, variance

PALETTE_VERSION = 1

# version 1: first four entries match the synthetic scene classes
# (ground, pole, wall, vehicle); the rest cover larger label sets.
PALETTE_V1 = np.array(
    [
        [128, 64, 128],
        [255, 240, 150],
        [0, 200, 255],
        [245, 150, 100],
        [0, 175, 0],
        [255, 0, 255],
        [150, 60, 30],
        [30, 30, 255],
        [200, 40, 255],
        [90, 30, 150],
        [255, 0, 0],
        [75, 0, 75],
        [75, 0, 175],
        [50, 120, 255],
        [0, 60, 135],
        [80, 240, 150],
        [150, 240, 255],
        [255, 150, 255],
        [250, 80, 100],
        [180, 30, 80],
    ],
    dtype=np.uint8,
)


def _fmt(v):
    return np.format_float_positional(np.float32(v), unique=True, trim="-")


def export_ply(gmap: GlobalMap, path, resolution, variance_threshold=0.01, palette=None):
    """Write one vertex per stored voxel; returns the vertex count.

    With ``variance_threshold`` set, voxels whose most likely class has a
    larger posterior variance are left out. Vertices follow key order.
    """
    palette = PALETTE_V1 if palette is None else np.asarray(palette, dtype=np.uint8)
    keys = gmap.keys
    alpha = gmap.alphas
    if len(keys):
        cls = argmax_label(alpha, axis=1)
        rows = np.arange(len(keys))
        exp = expectation(alpha, axis=1)[rows, cls]
        var = variance(alpha, axis=1)[rows, cls]
    else:
        cls = np.empty(0, dtype=np.int64)
        exp = var = np.empty(0)
    keep = np.ones(len(keys), bool) if variance_threshold is None else var <= variance_threshold
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0])) if len(keys) else np.empty(0, int)
    order = order[keep[order]]
    centroids = (keys + 0.5) * resolution

    lines = [
        "ply",
        "format ascii 1.0",
        f"comment convbki palette v{PALETTE_VERSION}",
        f"element vertex {len(order)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property float expectation",
        "property float variance",
        "end_header",
    ]
    for i in order:
        r, g, b = palette[cls[i] % len(palette)]
        x, y, z = centroids[i]
        lines.append(
            f"{_fmt(x)} {_fmt(y)} {_fmt(z)} {r} {g} {b} {_fmt(exp[i])} {_fmt(var[i])}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(order)


def read_ply_vertices(path):
    """Parse a file written by :func:`export_ply` into a structured array."""
    with open(path) as fh:
        text = fh.read().splitlines()
    end = text.index("end_header")
    count = int(next(l.split()[-1] for l in text[:end] if l.startswith("element vertex")))
    dtype = [("x", "f4"), ("y", "f4"), ("z", "f4"), ("red", "u1"), ("green", "u1"),
             ("blue", "u1"), ("expectation", "f4"), ("variance", "f4")]
    out = np.empty(count, dtype=dtype)
    for n, line in enumerate(text[end + 1:end + 1 + count]):
        out[n] = tuple(float(v) for v in line.split())
    return out
