"""Kernel length learning by Adam on a point-supported weighted NLL."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelParams, build_filter, filter_grads
from .update import transform_points
from .voxel import DEFAULT_PRIOR, GridSpec, LocalGrid, local_indices, voxelize
from .global_map import local_anchor


@dataclass
class TrainConfig:
    learning_rate: float = 0.007
    epochs: int = 1
    frames_per_sample: int = 10
    l_init: float = 0.5
    class_weights: np.ndarray | None = None  # None -> inverse frequency
    length_bounds: tuple | None = None  # None -> (0.01, dr * f * sqrt(3) / 2)
    log_epsilon: float = 1e-9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.frames_per_sample < 1:
            raise ValueError("frames_per_sample must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.length_bounds is not None:
            lo, hi = self.length_bounds
            if not 0 < lo <= self.l_init <= hi:
                raise ValueError("need 0 < l_min <= l_init <= l_max")


def default_length_bounds(resolution, filter_size):
    return (1e-2, resolution * filter_size * math.sqrt(3) / 2)


def aggregate_frames(frames, target_pose):
    """Concatenate ``(points, labels, pose)`` frames expressed in ``target_pose``'s frame."""
    inv = np.linalg.inv(np.asarray(target_pose, dtype=np.float64))
    pts, labs = [], []
    for points, labels, pose in frames:
        pts.append(transform_points(inv @ np.asarray(pose, dtype=np.float64), points))
        labs.append(np.asarray(labels))
    if not pts:
        return np.empty((0, 3)), np.empty(0, dtype=np.int64)
    return np.concatenate(pts), np.concatenate(labs)


def inverse_frequency_weights(classes, num_classes):
    """Inverse class frequency, normalized to mean 1; absent classes get weight 0."""
    counts = np.bincount(np.asarray(classes, dtype=np.int64), minlength=num_classes).astype(float)
    w = np.zeros(num_classes)
    seen = counts > 0
    w[seen] = 1.0 / counts[seen]
    return w * num_classes / w.sum() if w.sum() > 0 else np.ones(num_classes)


@dataclass
class LossResult:
    loss: float
    filter_grad: np.ndarray | None  # (C, f, f, f)
    evaluated: int
    skipped: int


def _point_terms(a, cls, pw, eps):
    """Loss and dL/dalpha per point for concentration rows ``a`` (n, C)."""
    n = len(cls)
    eta = a.sum(axis=1)
    a_true = a[np.arange(n), cls]
    e = a_true / eta
    loss = float(-np.sum(pw * np.log(np.maximum(e, eps))))
    # dL/dalpha_j = -w (delta_jc / alpha_c - 1 / eta), zero where the log is clamped
    live = np.where(e < eps, 0.0, pw)
    g = np.repeat((live / eta)[:, None], a.shape[1], axis=1)
    g[np.arange(n), cls] -= live / a_true
    return loss, g


def _filter_patches(inputs, vox_idx, f):
    """F around each voxel: ``patches[c, n, q] = F[c, v_n + offset_q]``, zero padded."""
    half = (f - 1) // 2
    padded = np.pad(np.asarray(inputs, dtype=np.float64), [(0, 0)] + [(half, half)] * 3)
    pdims = padded.shape[1:]
    offs = np.stack(np.meshgrid(*[np.arange(f)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    base = np.ravel_multi_index(tuple(vox_idx.T), pdims)
    flat = base[:, None] + np.ravel_multi_index(tuple(offs.T), pdims)[None, :]
    return np.take(padded.reshape(padded.shape[0], -1), flat, axis=1)


def _voxel_grad(g, inv, num_vox):
    C = g.shape[1]
    G = np.zeros((C, num_vox))
    for c in range(C):
        G[c] = np.bincount(inv, weights=g[:, c], minlength=num_vox)
    return G


def nll_loss(local: LocalGrid, gt_positions, gt_classes, class_weights,
             inputs=None, filter_size=None, eps=1e-9) -> LossResult:
    """Weighted negative log expectation of the true class at each gt point's voxel.

    With ``inputs`` (the volume that was convolved into ``local``) and
    ``filter_size`` also returns the gradient with respect to each filter weight.
    """
    spec = local.spec
    gt_classes = np.asarray(gt_classes, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)
    idx, inside = local_indices(gt_positions, spec, local.anchor)
    idx, cls = idx[inside], gt_classes[inside]
    a = local.alpha[:, idx[:, 0], idx[:, 1], idx[:, 2]].T  # (n, C)
    valid = np.all(np.isfinite(a) & (a > 0), axis=1)
    if not valid.all():
        bad = np.flatnonzero(inside)[np.flatnonzero(~valid)[0]]
        raise ValueError(f"gt point {bad} lies in a voxel with invalid alpha")
    loss, g = _point_terms(a, cls, w[cls], eps)
    result = LossResult(loss, None, len(cls), int((~inside).sum()))
    if inputs is None:
        return result
    if filter_size is None:
        raise ValueError("filter_size is required for gradients")
    flat = np.ravel_multi_index(tuple(idx.T), spec.dims)
    vox, inv = np.unique(flat, return_inverse=True)
    G = _voxel_grad(g, inv, vox.size)
    f = int(filter_size)
    patches = _filter_patches(inputs, np.stack(np.unravel_index(vox, spec.dims), axis=1), f)
    result.filter_grad = np.einsum("cn,cnq->cq", G, patches).reshape(-1, f, f, f)
    return result


@dataclass
class TrainingSample:
    inputs: np.ndarray  # F over the sample's local grid
    grid: LocalGrid  # prior grid (alpha all prior)
    gt_positions: np.ndarray
    gt_classes: np.ndarray

    def __post_init__(self):
        spec = self.grid.spec
        idx, inside = local_indices(self.gt_positions, spec, self.grid.anchor)
        flat = np.ravel_multi_index(tuple(idx[inside].T), spec.dims)
        vox, self._inv = np.unique(flat, return_inverse=True)
        self._vox_idx = np.stack(np.unravel_index(vox, spec.dims), axis=1)
        self._cls = np.asarray(self.gt_classes, dtype=np.int64)[inside]


def make_sample(frames, target_pose, gt_positions, gt_classes, spec: GridSpec, prior=DEFAULT_PRIOR):
    """Pool ``(points, labels, pose)`` frames into the ego grid of ``target_pose``.

    ``gt_positions`` are already expressed in the target frame.
    """
    pts, labels = aggregate_frames(frames, target_pose)
    anchor = local_anchor(np.eye(4), spec)
    F, _ = voxelize(pts, labels, spec, anchor)
    return TrainingSample(F, LocalGrid.filled(spec, anchor, prior),
                          np.asarray(gt_positions, dtype=np.float64).reshape(-1, 3),
                          np.asarray(gt_classes, dtype=np.int64))


def loss_and_grad(params: KernelParams, sample: TrainingSample, filter_size, class_weights, eps=1e-9):
    """Loss of one sample and its gradient with respect to ``params.flat()``.

    Only the voxels holding gt points are updated, which gives the same numbers
    as a full :func:`bayesian_update` followed by :func:`nll_loss`.
    """
    spec = sample.grid.spec
    C, f = spec.num_classes, filter_size
    kf = build_filter(params, f, spec.resolution, C)
    patches = _filter_patches(sample.inputs, sample._vox_idx, f)  # (C, nv, f^3)
    prior = sample.grid.alpha[:, sample._vox_idx[:, 0], sample._vox_idx[:, 1], sample._vox_idx[:, 2]]
    alpha_v = prior + np.einsum("cq,cnq->cn", kf.weights.reshape(C, -1), patches)
    w = np.asarray(class_weights, dtype=np.float64)
    cls = sample._cls
    loss, g = _point_terms(alpha_v[:, sample._inv].T, cls, w[cls], eps)
    G = _voxel_grad(g, sample._inv, len(sample._vox_idx))
    grad_k = np.einsum("cn,cnq->cq", G, patches).reshape(C, f, f, f)
    dk = filter_grads(params, f, spec.resolution, C)
    return loss, np.tensordot(dk, grad_k, axes=4)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, x, grad):
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class TrainingError(RuntimeError):
    def __init__(self, sample_index, msg):
        super().__init__(f"sample {sample_index}: {msg}")
        self.sample_index = sample_index


@dataclass
class TrainResult:
    params: KernelParams
    losses: list = field(default_factory=list)
    history: list = field(default_factory=list)  # flat lengths after each step


def train(samples, config: TrainConfig, variant, num_classes, filter_size, resolution,
          init: KernelParams | None = None) -> TrainResult:
    """One Adam step per sample per epoch; lengths are clamped after each step."""
    params = init if init is not None else KernelParams.uniform(variant, num_classes, config.l_init)
    lo, hi = config.length_bounds or default_length_bounds(resolution, filter_size)
    if config.class_weights is None:
        if hasattr(samples, "gt_classes"):
            classes = samples.gt_classes()
        else:
            classes = np.concatenate([s.gt_classes for s in samples]) if len(samples) else np.empty(0, int)
        weights = inverse_frequency_weights(classes, num_classes)
    else:
        weights = np.asarray(config.class_weights, dtype=np.float64)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    result = TrainResult(params)
    x = params.flat()
    for _ in range(config.epochs):
        for i, sample in enumerate(samples):
            loss, grad = loss_and_grad(params, sample, filter_size, weights, config.log_epsilon)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingError(i, f"non-finite loss {loss}")
            x = np.clip(opt.step(x, grad), lo, hi)
            params = params.with_flat(x)
            result.losses.append(loss)
            result.history.append(x.copy())
    result.params = params
    return result


def loss_curve_to_csv(result: TrainResult, path):
    n = result.params.num_params
    with open(path, "w") as fh:
        fh.write("step,loss," + ",".join(f"l{i}" for i in range(n)) + "\n")
        for step, (loss, x) in enumerate(zip(result.losses, result.history)):
            fh.write(f"{step},{loss!r}," + ",".join(repr(float(v)) for v in x) + "\n")
