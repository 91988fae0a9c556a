"""Point-wise semantic evaluation of a fused map."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .global_map import GlobalMap
from .voxel import argmax_label, points_to_keys


def confusion_matrix(true, pred, num_classes):
    idx = np.asarray(true, dtype=np.int64) * num_classes + np.asarray(pred, dtype=np.int64)
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(conf):
    """Per-class IoU in percent (NaN where the union is empty) and their mean."""
    tp = np.diag(conf).astype(float)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    iou = np.full(len(tp), np.nan)
    ok = union > 0
    iou[ok] = 100.0 * tp[ok] / union[ok]
    miou = float(np.mean(iou[ok])) if ok.any() else float("nan")
    return iou, miou


def miou(true, pred, num_classes):
    return iou_from_confusion(confusion_matrix(true, pred, num_classes))[1]


@dataclass
class EvalReport:
    iou: list
    miou: float
    support: list
    points_evaluated: int
    points_from_map: int
    points_fallback: int
    points_out_of_range: int
    runtime_s: float = 0.0

    def to_json(self, path=None):
        d = asdict(self)
        d["iou"] = [None if np.isnan(v) else v for v in d["iou"]]
        text = json.dumps(d, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def predict_points(gmap: GlobalMap, positions, resolution):
    """Map prediction per global point and a mask of points that hit a stored voxel."""
    keys = points_to_keys(positions, resolution)
    alpha, hit = gmap.query(keys)
    return argmax_label(alpha, axis=1), hit


def evaluate(gmap: GlobalMap, gt_frames, fallback_labels, resolution, max_range=None) -> EvalReport:
    """Score the map on ground-truth points.

    ``gt_frames`` is a sequence of ``(global_positions, true_classes, sensor_origin)``;
    ``fallback_labels`` holds the input segmentation classes per frame and is used
    wherever the map has no voxel. ``max_range`` drops points farther than that
    from the sensor origin.
    """
    t0 = time.perf_counter()
    C = gmap.num_classes
    if len(fallback_labels) != len(gt_frames):
        raise ValueError("need one fallback label array per gt frame")
    conf = np.zeros((C, C), dtype=np.int64)
    from_map = fallback = dropped = 0
    for n, ((pos, true, origin), fb) in enumerate(zip(gt_frames, fallback_labels)):
        pos = np.asarray(pos, dtype=np.float64).reshape(-1, 3)
        true = np.asarray(true, dtype=np.int64)
        fb = np.asarray(fb)
        if fb.ndim == 2:
            fb = np.argmax(fb, axis=1)
        if len(true) != len(pos) or len(fb) != len(pos):
            raise ValueError(f"frame {n}: gt and fallback point counts differ")
        if max_range is not None:
            keep = np.linalg.norm(pos - np.asarray(origin), axis=1) <= max_range
            dropped += int((~keep).sum())
            pos, true, fb = pos[keep], true[keep], fb[keep]
        pred, hit = predict_points(gmap, pos, resolution)
        pred = np.where(hit, pred, fb)
        from_map += int(hit.sum())
        fallback += int((~hit).sum())
        conf += confusion_matrix(true, pred, C)
    iou, m = iou_from_confusion(conf)
    return EvalReport(
        iou=[float(v) for v in iou],
        miou=m,
        support=[int(v) for v in conf.sum(axis=1)],
        points_evaluated=from_map + fallback,
        points_from_map=from_map,
        points_fallback=fallback,
        points_out_of_range=dropped,
        runtime_s=time.perf_counter() - t0,
    )
