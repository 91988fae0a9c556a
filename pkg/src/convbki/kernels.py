"""Sparse kernel evaluation and discretization into depthwise filters."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VARIANTS = ("single", "perclass", "compound")

TWO_PI = 2.0 * math.pi


class KernelTruncationWarning(UserWarning):
    """A kernel length reaches past the spatial extent of its filter."""


def _check_domain(d, l):
    if np.any(np.asarray(l) <= 0):
        raise ValueError("kernel length must be positive")
    if np.any(np.asarray(d) < 0):
        raise ValueError("distance must be non-negative")


def sparse_kernel(d, l):
    """Compactly supported kernel, 1 at d=0 and exactly 0 for d >= l.

    Accepts scalars or broadcastable arrays; returns a float for scalar input.
    """
    _check_domain(d, l)
    d = np.asarray(d, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    inside = d < l
    r = np.where(inside, d / l, 1.0)
    val = (2.0 + np.cos(TWO_PI * r)) / 3.0 * (1.0 - r) + np.sin(TWO_PI * r) / TWO_PI
    # cancellation near r = 1 can leave values a few ulp below zero
    out = np.where(inside, np.clip(val, 0.0, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def sparse_kernel_grad_l(d, l):
    """Analytic derivative of :func:`sparse_kernel` with respect to ``l``."""
    _check_domain(d, l)
    d = np.asarray(d, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    # d == l uses the interior branch; its limit is 0 anyway
    inside = d <= l
    r = np.where(inside, d / l, 1.0)
    s = np.sin(TWO_PI * r)
    c = np.cos(TWO_PI * r)
    dk_dr = -(TWO_PI / 3.0) * s * (1.0 - r) - (2.0 + c) / 3.0 + c
    out = np.where(inside, dk_dr * (-r / l), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KernelParams:
    """Learnable kernel lengths (meters).

    ``lengths`` has shape ``(1,)`` for single, ``(C,)`` for perclass and
    ``(C, 2)`` holding ``(l_h, l_v)`` rows for compound.
    """

    variant: str
    lengths: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        lengths = np.array(self.lengths, dtype=np.float64)
        expected = {
            "single": (1,),
            "perclass": (self.num_classes,),
            "compound": (self.num_classes, 2),
        }[self.variant]
        if lengths.size != math.prod(expected):
            raise ValueError(
                f"{self.variant} kernel needs {math.prod(expected)} lengths "
                f"for {self.num_classes} classes, got {lengths.size}"
            )
        lengths = lengths.reshape(expected)
        if np.any(~np.isfinite(lengths)) or np.any(lengths <= 0):
            raise ValueError("kernel lengths must be finite and positive")
        lengths.setflags(write=False)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def uniform(cls, variant, num_classes, length=0.5):
        n = {"single": 1, "perclass": num_classes, "compound": 2 * num_classes}[variant]
        return cls(variant, np.full(n, float(length)), num_classes)

    @property
    def sigma0(self):
        return 1.0

    @property
    def num_params(self):
        return self.lengths.size

    def flat(self):
        return self.lengths.ravel().copy()

    def with_flat(self, values):
        return KernelParams(self.variant, np.asarray(values, dtype=np.float64), self.num_classes)

    def per_class(self):
        """Lengths broadcast to one row per class: (C,) or (C, 2)."""
        if self.variant == "single":
            return np.full(self.num_classes, self.lengths[0])
        return self.lengths


@dataclass(frozen=True)
class KernelFilter:
    weights: np.ndarray  # (C, f, f, f)
    delta_r: float

    @property
    def size(self):
        return self.weights.shape[1]

    @property
    def num_classes(self):
        return self.weights.shape[0]


def filter_offsets(f, delta_r):
    """Metric offsets of every filter cell from the filter center, shape (f, f, f, 3)."""
    half = (f - 1) // 2
    idx = np.arange(f, dtype=np.float64)
    ax = delta_r * (half - idx)
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)


def _check_filter_args(params, f, delta_r, num_classes):
    if f < 1 or f % 2 == 0:
        raise ValueError(f"filter size must be odd and >= 1, got {f}")
    if delta_r <= 0:
        raise ValueError("resolution must be positive")
    if params.num_classes != num_classes:
        raise ValueError(
            f"kernel params built for {params.num_classes} classes, filter needs {num_classes}"
        )
    radius = delta_r * (f - 1) / 2
    if f > 1 and np.any(params.lengths > radius * math.sqrt(3)):
        warnings.warn(
            f"kernel length {params.lengths.max():.3f} m exceeds filter radius; "
            "support is truncated by the filter",
            KernelTruncationWarning,
            stacklevel=3,
        )


def _distances(f, delta_r):
    off = filter_offsets(f, delta_r)
    return (
        np.linalg.norm(off, axis=-1),
        np.linalg.norm(off[..., :2], axis=-1),
        np.abs(off[..., 2]),
    )


def build_filter(params: KernelParams, f: int, delta_r: float, num_classes: int) -> KernelFilter:
    _check_filter_args(params, f, delta_r, num_classes)
    dist, dist_h, dist_v = _distances(f, delta_r)
    lengths = params.per_class()
    if params.variant == "compound":
        lh = lengths[:, 0, None, None, None]
        lv = lengths[:, 1, None, None, None]
        weights = sparse_kernel(dist_h, lh) * sparse_kernel(dist_v, lv)
    else:
        weights = sparse_kernel(dist, lengths[:, None, None, None])
    weights = np.ascontiguousarray(weights)
    weights.setflags(write=False)
    return KernelFilter(weights, float(delta_r))


def filter_grads(params: KernelParams, f: int, delta_r: float, num_classes: int) -> np.ndarray:
    """Derivative of every filter weight with respect to every length.

    Returns an array of shape ``(num_params, C, f, f, f)`` whose first axis
    follows ``params.flat()`` ordering.
    """
    _check_filter_args(params, f, delta_r, num_classes)
    dist, dist_h, dist_v = _distances(f, delta_r)
    C = num_classes
    grads = np.zeros((params.num_params, C, f, f, f))
    if params.variant == "single":
        grads[0] = sparse_kernel_grad_l(dist, params.lengths[0])[None]
    elif params.variant == "perclass":
        for c in range(C):
            grads[c, c] = sparse_kernel_grad_l(dist, params.lengths[c])
    else:
        for c in range(C):
            lh, lv = params.lengths[c]
            kh = sparse_kernel(dist_h, lh)
            kv = sparse_kernel(dist_v, lv)
            grads[2 * c, c] = sparse_kernel_grad_l(dist_h, lh) * kv
            grads[2 * c + 1, c] = kh * sparse_kernel_grad_l(dist_v, lv)
    return grads


def save_params(params: KernelParams, path, filter_size=None, resolution=None):
    lines = [
        f"variant={params.variant}",
        f"num_classes={params.num_classes}",
        "lengths=" + ",".join(repr(float(v)) for v in params.flat()),
    ]
    if filter_size is not None:
        lines.append(f"filter_size={int(filter_size)}")
    if resolution is not None:
        lines.append(f"resolution={float(resolution)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path):
    """Read a key=value params file.

    Returns ``(params, filter_size, resolution)``; the last two are None when absent.
    """
    fields = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ("variant", "num_classes", "lengths", "filter_size", "resolution"):
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        fields[key] = value
    for key in ("variant", "num_classes", "lengths"):
        if key not in fields:
            raise ValueError(f"{path}: missing key {key!r}")
    lengths = [float(v) for v in fields["lengths"].split(",") if v.strip()]
    params = KernelParams(fields["variant"], np.array(lengths), int(fields["num_classes"]))
    f = int(fields["filter_size"]) if "filter_size" in fields else None
    res = float(fields["resolution"]) if "resolution" in fields else None
    return params, f, res
