"""Grid geometry, point voxelization and Dirichlet posterior statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_PRIOR = 1e-3

# snaps p / dr onto an integer when float error leaves it a hair below
_SNAP = 1e-9


@dataclass(frozen=True)
class GridSpec:
    min_corner: np.ndarray
    max_corner: np.ndarray
    resolution: float
    num_classes: int
    dims: tuple = field(init=False)

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        extent = (hi - lo) / self.resolution
        dims = np.rint(extent)
        if np.any(dims < 1) or np.any(np.abs(extent - dims) > 1e-9 * np.maximum(1.0, dims)):
            raise ValueError(
                f"grid extent {hi - lo} is not a positive multiple of resolution {self.resolution}"
            )
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "dims", tuple(int(d) for d in dims))

    @property
    def shape(self):
        return (self.num_classes, *self.dims)

    @property
    def num_voxels(self):
        return int(np.prod(self.dims))

    def min_key_offset(self):
        """Integer key offset of the grid's min corner (corners must lie on voxel faces)."""
        return np.rint(self.min_corner / self.resolution).astype(np.int64)


@dataclass
class LocalGrid:
    alpha: np.ndarray  # (C, Dx, Dy, Dz)
    spec: GridSpec
    anchor: np.ndarray  # global key of local index (0, 0, 0)

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.int64).reshape(3)
        if self.alpha.shape != self.spec.shape:
            raise ValueError(f"alpha shape {self.alpha.shape} != grid shape {self.spec.shape}")

    @classmethod
    def filled(cls, spec, anchor=(0, 0, 0), prior=DEFAULT_PRIOR):
        return cls(np.full(spec.shape, float(prior)), spec, anchor)

    def centroids(self):
        """Global voxel centroids, shape (Dx, Dy, Dz, 3)."""
        axes = [
            (np.arange(n) + a + 0.5) * self.spec.resolution
            for n, a in zip(self.spec.dims, self.anchor)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def points_to_keys(positions, resolution):
    """Global integer voxel keys ``floor(p / resolution)`` for an (N, 3) array."""
    q = np.asarray(positions, dtype=np.float64) / resolution
    near = np.rint(q)
    q = np.where(np.abs(q - near) < _SNAP, near, q)
    return np.floor(q).astype(np.int64)


def point_to_key(position, spec: GridSpec):
    """Key of the cell holding ``position``, or None when outside ``[min, max)``."""
    p = np.asarray(position, dtype=np.float64).reshape(3)
    key = points_to_keys(p[None], spec.resolution)[0]
    local = key - spec.min_key_offset()
    if np.any(local < 0) or np.any(local >= spec.dims):
        return None
    return tuple(int(k) for k in key)


def as_label_matrix(labels, num_classes):
    """Class ids (N,) or distributions (N, C) -> float (N, C) distributions."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"class id outside [0, {num_classes})")
        out = np.zeros((labels.size, num_classes))
        out[np.arange(labels.size), labels.astype(np.int64)] = 1.0
        return out
    if labels.ndim != 2 or labels.shape[1] != num_classes:
        raise ValueError(f"label array of shape {labels.shape} does not match {num_classes} classes")
    labels = labels.astype(np.float64, copy=False)
    if labels.size and (labels.min() < 0 or np.max(np.abs(labels.sum(axis=1) - 1.0)) > 1e-6):
        raise ValueError("label rows must be non-negative and sum to 1")
    return labels


def local_indices(positions, spec: GridSpec, anchor):
    """Local grid indices (N, 3) and an in-bounds mask for global positions."""
    idx = points_to_keys(positions, spec.resolution) - np.asarray(anchor, dtype=np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=1)
    return idx, inside


def voxelize(positions, labels, spec: GridSpec, anchor):
    """Per-voxel, per-class sum of label mass.

    Returns ``(F, skipped)`` with ``F`` shaped like the grid and ``skipped``
    the number of points falling outside it.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    y = as_label_matrix(labels, spec.num_classes)
    if len(y) != len(positions):
        raise ValueError("positions and labels differ in length")
    idx, inside = local_indices(positions, spec, anchor)
    flat = np.ravel_multi_index(tuple(idx[inside].T), spec.dims)
    y = y[inside]
    F = np.empty(spec.shape)
    # bincount sums in input order, so per-voxel accumulation is deterministic
    for c in range(spec.num_classes):
        F[c] = np.bincount(flat, weights=y[:, c], minlength=spec.num_voxels).reshape(spec.dims)
    return F, int((~inside).sum())


def _check_alpha(alpha):
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(~(alpha > 0)):
        raise ValueError("concentration parameters must be positive")
    return alpha


def dirichlet_stats(alpha, c):
    """Posterior mean and variance of class ``c`` for one concentration vector."""
    alpha = _check_alpha(alpha)
    eta = alpha.sum()
    e = alpha[c] / eta
    return float(e), float(e * (1.0 - e) / (1.0 + eta))


def expectation(alpha, axis=0):
    alpha = _check_alpha(alpha)
    return alpha / alpha.sum(axis=axis, keepdims=True)


def variance(alpha, axis=0):
    alpha = _check_alpha(alpha)
    eta = alpha.sum(axis=axis, keepdims=True)
    e = alpha / eta
    return e * (1.0 - e) / (1.0 + eta)


def argmax_label(alpha, axis=0):
    """Most likely class; ties go to the lowest index."""
    return np.argmax(np.asarray(alpha), axis=axis)
