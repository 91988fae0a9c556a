# Learn kernel lengths from noisy labels.
#
# Each training sample pools the previous ten frames into the current ego
# frame and scores the resulting map on the current frame's true labels.
# With compound kernels the learned shapes follow the geometry: ground
# spreads sideways, poles spread upwards.

import warnings

import numpy as np

from convbki.io import MapConfig
from convbki.kernels import KernelTruncationWarning
from convbki.pipeline import training_samples
from convbki.synth import CLASS_NAMES, SynthConfig, synth_scene
from convbki.trainer import TrainConfig, train

cfg = MapConfig(gc_window=None)
frames = synth_scene(seed=0, cfg=SynthConfig(num_frames=111, class_density=(1, 0.3, 1, 1)))
samples = training_samples(frames, cfg, frames_per_sample=10)

with warnings.catch_warnings():
    warnings.simplefilter("ignore", KernelTruncationWarning)
    result = train(samples, TrainConfig(), "compound", 4, cfg.filter_size, cfg.resolution)

print(f"{len(samples)} steps, loss {np.mean(result.losses[:10]):.0f} -> {np.mean(result.losses[-10:]):.0f}")
for name, (lh, lv) in zip(CLASS_NAMES, result.params.lengths):
    print(f"  {name:8s} l_h {lh:.2f} m  l_v {lv:.2f} m")
