"""Semantic voxel mapping with a learnable depthwise-convolution Bayesian update."""

from .global_map import GlobalMap, load_map, save_map
from .kernels import KernelFilter, KernelParams, build_filter, sparse_kernel
from .update import bayesian_update, sequential_fuse
from .voxel import GridSpec, LocalGrid, voxelize

__version__ = "0.1.0"

__all__ = [
    "GlobalMap",
    "GridSpec",
    "KernelFilter",
    "KernelParams",
    "LocalGrid",
    "bayesian_update",
    "build_filter",
    "load_map",
    "save_map",
    "sequential_fuse",
    "sparse_kernel",
    "voxelize",
]
