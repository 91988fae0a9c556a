"""Resolution and filter-size sweeps on a synthetic scene.

Each row fuses the same frames with one (resolution, filter size) setting and
reports the median per-frame update latency, the memory held by the local
grid plus the global map, and the map mIoU.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .io import MapConfig
from .kernels import KernelParams, KernelTruncationWarning
from .pipeline import build_map, evaluate_frames
from .synth import SynthConfig, synth_scene

RESOLUTIONS = (0.4, 0.2, 0.1)
FILTER_SIZES = (3, 5, 7, 9)


@dataclass
class BenchRow:
    sweep: str
    resolution: float
    filter_size: int
    median_update_ms: float
    memory_bytes: int
    map_entries: int
    miou: float


def _local_grid_bytes(cfg: MapConfig):
    # concentrations, input volume and the convolution output are all C x D float64
    spec = cfg.grid_spec()
    return 3 * 8 * spec.num_classes * spec.num_voxels


def run_one(frames, cfg: MapConfig, params: KernelParams, sweep="", method="auto"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelTruncationWarning)
        gmap, timings = build_map(frames, params, cfg, method=method)
    report = evaluate_frames(gmap, frames, cfg)
    return BenchRow(
        sweep=sweep,
        resolution=cfg.resolution,
        filter_size=cfg.filter_size,
        median_update_ms=float(np.median([t.update_ms for t in timings])),
        memory_bytes=_local_grid_bytes(cfg) + gmap.nbytes,
        map_entries=len(gmap),
        miou=report.miou,
    )


def bench(cfg: MapConfig | None = None, params: KernelParams | None = None, seed=0,
          num_frames=5, resolutions=RESOLUTIONS, filter_sizes=FILTER_SIZES,
          method="auto", synth_cfg: SynthConfig | None = None):
    """Filter-size sweep at ``cfg.resolution``, then resolution sweep at ``cfg.filter_size``."""
    cfg = cfg or MapConfig()
    params = params or KernelParams.uniform(cfg.kernel_variant, cfg.num_classes)
    sc = replace(synth_cfg or SynthConfig(), num_frames=num_frames)
    frames = synth_scene(seed, sc)
    rows = []
    for f in filter_sizes:
        rows.append(run_one(frames, replace(cfg, filter_size=f), params, "filter_size", method))
    for res in resolutions:
        rows.append(run_one(frames, replace(cfg, resolution=res), params, "resolution", method))
    return rows


def rows_to_csv(rows, path=None):
    lines = ["sweep,resolution,filter_size,median_update_ms,memory_bytes,map_entries,miou"]
    for r in rows:
        lines.append(
            f"{r.sweep},{r.resolution},{r.filter_size},{r.median_update_ms:.3f},"
            f"{r.memory_bytes},{r.map_entries},{r.miou:.3f}"
        )
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
