# Sparse kernels and the filters built from them.
#
# The kernel is 1 at zero distance and falls smoothly to exactly 0 at the
# length l. Sampling it on a cube of voxel offsets gives one filter per class.

import warnings

import numpy as np

from convbki.kernels import KernelParams, KernelTruncationWarning, build_filter, sparse_kernel

# the kernel along a line, l = 0.5 m
d = np.linspace(0, 0.6, 7)
for di, k in zip(d, sparse_kernel(d, 0.5)):
    print(f"d={di:.1f} m  k={k:.4f}")

# lengths past the filter's reach are cut off by the filter; that is fine here
warnings.simplefilter("ignore", KernelTruncationWarning)

# a 3x3x3 filter at 0.2 m voxels: center 1, faces ~0.33, edges ~0.093, corners ~0.020
kf = build_filter(KernelParams("single", [0.5], 1), 3, 0.2, 1)
print(np.round(kf.weights[0, :, :, 1], 4))

# compound kernels keep horizontal and vertical reach apart; this one
# spreads far in the ground plane and hardly at all upwards
flat = build_filter(KernelParams("compound", [[0.8, 0.15]], 1), 5, 0.2, 1)
print("horizontal row:", np.round(flat.weights[0, :, 2, 2], 3))
print("vertical row:  ", np.round(flat.weights[0, 2, 2, :], 3))
