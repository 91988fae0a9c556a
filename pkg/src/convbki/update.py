"""Bayesian map update as a zero-padded depthwise 3D correlation."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .global_map import GlobalMap, extract_local, garbage_collect, write_back
from .kernels import KernelFilter, KernelParams, sparse_kernel
from .voxel import GridSpec, LocalGrid, as_label_matrix, local_indices, voxelize


def depthwise_correlate(F, weights):
    """Reference sliding-window pass.

    ``out[c, h, i, j] = sum_{k,l,m} weights[c, k, l, m] * F[c, h+k', i+l', j+m']``
    with centred offsets ``k' = k - (f-1)/2`` and zeros outside the volume.
    """
    C, *dims = F.shape
    f = weights.shape[1]
    half = (f - 1) // 2
    padded = np.pad(F, [(0, 0)] + [(half, half)] * 3)
    out = np.zeros(F.shape)
    tmp = np.empty(dims)
    Dx, Dy, Dz = dims
    for k in range(f):
        for l in range(f):
            for m in range(f):
                for c in range(C):
                    np.multiply(padded[c, k:k + Dx, l:l + Dy, m:m + Dz], weights[c, k, l, m], out=tmp)
                    out[c] += tmp
    return out


def sparse_correlate(F, weights):
    """Same result as :func:`depthwise_correlate`, scattered from occupied voxels only."""
    C, *dims = F.shape
    f = weights.shape[1]
    half = (f - 1) // 2
    occ = np.nonzero(F.any(axis=0))
    src = np.stack(occ, axis=1)
    vals = F[(slice(None), *occ)]  # (C, n)
    out = np.zeros((C, int(np.prod(dims))))
    if src.size == 0:
        return out.reshape(F.shape)
    offs = np.stack(np.meshgrid(*[np.arange(f) - half] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    # F at u feeds output v = u - offset with that offset's weight
    tgt = src[:, None, :] - offs[None, :, :]
    inside = np.all((tgt >= 0) & (tgt < np.asarray(dims)), axis=2)
    flat = np.ravel_multi_index(tuple(tgt[inside].T), dims)
    w = weights.reshape(C, -1)
    for c in range(C):
        contrib = (vals[c][:, None] * w[c][None, :])[inside]
        out[c] = np.bincount(flat, weights=contrib, minlength=out.shape[1])
    return out.reshape(F.shape)


def _check_update_args(prior: LocalGrid, F, kfilter: KernelFilter):
    if F.shape != prior.alpha.shape:
        raise ValueError(f"input volume shape {F.shape} != grid shape {prior.alpha.shape}")
    if kfilter.num_classes != prior.spec.num_classes:
        raise ValueError("filter and grid disagree on the number of classes")
    if not np.isclose(kfilter.delta_r, prior.spec.resolution, rtol=0, atol=1e-12):
        raise ValueError(
            f"filter resolution {kfilter.delta_r} != grid resolution {prior.spec.resolution}"
        )


def bayesian_update(prior: LocalGrid, F, kfilter: KernelFilter, method="auto") -> LocalGrid:
    """Posterior concentrations ``prior + K (*) F``; ``prior`` is left untouched.

    ``method`` picks the dense reference pass, the sparse scatter path, or
    (``auto``) whichever is cheaper for the occupancy of ``F``.
    """
    F = np.asarray(F, dtype=np.float64)
    _check_update_args(prior, F, kfilter)
    if method == "auto":
        occupied = np.count_nonzero(F.any(axis=0))
        method = "sparse" if occupied * kfilter.size ** 3 < F[0].size * 4 else "dense"
    if method == "dense":
        delta = depthwise_correlate(F, kfilter.weights)
    elif method == "sparse":
        delta = sparse_correlate(F, kfilter.weights)
    else:
        raise ValueError(f"unknown update method {method!r}")
    return LocalGrid(prior.alpha + delta, prior.spec, prior.anchor.copy())


def _pair_weights(params: KernelParams, offsets):
    """Per-class kernel weight for metric offsets (..., 3); returns (C, ...)."""
    lengths = params.per_class()
    extra = (None,) * (offsets.ndim - 1)
    if params.variant == "compound":
        dh = np.linalg.norm(offsets[..., :2], axis=-1)
        dv = np.abs(offsets[..., 2])
        return sparse_kernel(dh[None], lengths[(slice(None), 0) + extra]) * sparse_kernel(
            dv[None], lengths[(slice(None), 1) + extra]
        )
    d = np.linalg.norm(offsets, axis=-1)
    return sparse_kernel(d[None], lengths[(slice(None),) + extra])


def brute_force_update(prior: LocalGrid, positions, labels, params: KernelParams, f: int) -> LocalGrid:
    """Direct per-point kernel sum over every voxel of the grid.

    Each point sits at the centroid of its voxel; a voxel receives weight
    from a point only when their index offset fits inside an ``f``-wide cube.
    Verification oracle; cost grows with points times voxels.
    """
    spec = prior.spec
    if f < 1 or f % 2 == 0:
        raise ValueError("filter size must be odd")
    if params.num_classes != spec.num_classes:
        raise ValueError("kernel params and grid disagree on the number of classes")
    y = as_label_matrix(labels, spec.num_classes)
    idx, inside = local_indices(positions, spec, prior.anchor)
    half = (f - 1) // 2
    alpha = prior.alpha.copy()
    grid_idx = np.stack(np.indices(spec.dims), axis=-1)  # (Dx, Dy, Dz, 3)
    for p in np.flatnonzero(inside):
        off = idx[p] - grid_idx  # point voxel minus query voxel
        in_filter = np.all(np.abs(off) <= half, axis=-1)
        w = _pair_weights(params, off * spec.resolution)
        alpha += np.where(in_filter[None], w, 0.0) * y[p][:, None, None, None]
    return LocalGrid(alpha, spec, prior.anchor.copy())


def transform_points(pose, points):
    pose = np.asarray(pose, dtype=np.float64)
    return np.asarray(points, dtype=np.float64) @ pose[:3, :3].T + pose[:3, 3]


@dataclass
class FrameTiming:
    frame: int
    points_in: int
    voxels_touched: int
    update_ms: float


class FrameError(RuntimeError):
    def __init__(self, frame, cause):
        super().__init__(f"frame {frame}: {cause}")
        self.frame = frame


def fuse_frame(gmap: GlobalMap, points, labels, pose, kfilter: KernelFilter, spec: GridSpec,
               method="auto"):
    """Extract, voxelize, update, write back and collect garbage for one frame."""
    frame = gmap.frame_counter
    world = transform_points(pose, points)
    local = extract_local(gmap, pose, spec)
    F, _ = voxelize(world, labels, spec, local.anchor)
    t0 = time.perf_counter()
    updated = bayesian_update(local, F, kfilter, method)
    ms = (time.perf_counter() - t0) * 1e3
    touched = int(np.count_nonzero(np.any(updated.alpha != local.alpha, axis=0)))
    write_back(updated, gmap, frame)
    garbage_collect(gmap, frame)
    gmap.frame_counter += 1
    return FrameTiming(frame, len(world), touched, ms)


def sequential_fuse(frames, gmap: GlobalMap, kfilter: KernelFilter, spec: GridSpec, method="auto"):
    """Fuse ``(points, labels, pose)`` frames in order into ``gmap`` (in place).

    Returns the map and one :class:`FrameTiming` per frame.
    """
    timings = []
    for n, (points, labels, pose) in enumerate(frames):
        try:
            timings.append(fuse_frame(gmap, points, labels, pose, kfilter, spec, method))
        except (ValueError, IndexError) as exc:
            raise FrameError(n, exc) from exc
    return gmap, timings


def timings_to_csv(timings, path):
    with open(path, "w") as fh:
        fh.write("frame,points_in,voxels_touched,update_ms\n")
        for t in timings:
            fh.write(f"{t.frame},{t.points_in},{t.voxels_touched},{t.update_ms:.4f}\n")
