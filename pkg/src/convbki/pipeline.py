"""Glue between frames, map building, training samples and evaluation."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .evaluation import evaluate
from .global_map import GlobalMap
from .io import MapConfig
from .kernels import KernelParams, build_filter
from .trainer import make_sample
from .update import sequential_fuse, transform_points


def build_map(frames, params: KernelParams, cfg: MapConfig, label_key="noisy", method="auto"):
    """Fuse synthetic or file frames into a fresh map.

    ``frames`` items need ``positions``, ``pose`` and the label attribute named
    by ``label_key``. Returns ``(map, timings)``.
    """
    spec = cfg.grid_spec()
    kf = build_filter(params, cfg.filter_size, cfg.resolution, cfg.num_classes)
    gmap = GlobalMap(cfg.num_classes, cfg.prior, cfg.gc_window)
    seq = [(f.positions, getattr(f, label_key), f.pose) for f in frames]
    return sequential_fuse(seq, gmap, kf, spec, method)


def evaluate_frames(gmap, frames, cfg: MapConfig, max_range=None, label_key="noisy"):
    gt = [(transform_points(f.pose, f.positions), f.gt, f.pose[:3, 3]) for f in frames]
    fallback = [getattr(f, label_key) for f in frames]
    return evaluate(gmap, gt, fallback, cfg.resolution, max_range=max_range)


def input_miou(frames, num_classes):
    """mIoU of the raw input labels against ground truth."""
    from .evaluation import confusion_matrix, iou_from_confusion

    conf = sum(
        confusion_matrix(f.gt, f.noisy if np.ndim(f.noisy) == 1 else np.argmax(f.noisy, 1), num_classes)
        for f in frames
    )
    return iou_from_confusion(conf)[1]


class TrainingSamples(Sequence):
    """Windows of ``frames_per_sample`` frames paired with the frame that follows.

    The noisy labels of the earlier frames form the input volume in the current
    frame's coordinates; the current frame's ground truth scores it. Samples are
    built on access so long sequences do not hold every dense volume at once.
    """

    def __init__(self, frames, cfg: MapConfig, frames_per_sample=10, stride=1):
        self.frames = frames
        self.spec = cfg.grid_spec()
        self.prior = cfg.prior
        self.T = frames_per_sample
        self.ends = list(range(frames_per_sample, len(frames), stride))

    def __len__(self):
        return len(self.ends)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        t = self.ends[i]
        current = self.frames[t]
        return make_sample(
            [(f.positions, f.noisy, f.pose) for f in self.frames[t - self.T:t]],
            current.pose,
            current.positions,
            current.gt,
            self.spec,
            self.prior,
        )

    def gt_classes(self):
        return np.concatenate([self.frames[t].gt for t in self.ends]) if self.ends else np.empty(0, int)


def training_samples(frames, cfg: MapConfig, frames_per_sample=10, stride=1):
    return TrainingSamples(frames, cfg, frames_per_sample, stride)
