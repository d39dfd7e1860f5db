"""
==========================================
Cameras, depth bins and the voxel lookup
==========================================

A pinhole camera maps world points to pixels; a depth binning turns metric
depth into a categorical label; the voxel-to-pixel map ties the two together
so image-space quantities can be lifted into a 3D grid.
"""

# %%
# Project a point
# ---------------
#
# Camera axes are x right, y down, z forward. ``project_point`` returns the
# pixel coordinates and the z-depth.

import numpy as np

from collabcam.geometry import (
    ProjectionMatrix,
    VoxelGrid,
    build_voxel_pixel_map,
    depth_to_bin,
    lift,
    make_binning,
    project_point,
)

P = ProjectionMatrix.from_camera(100.0, 100.0, 100.0, 50.0, position=(0, 0, 2.0), yaw=0.0)
u, v, d = project_point(P, (10.0, 1.0, 1.0))
print(f"pixel ({u:.1f}, {v:.1f}) at depth {d:.1f} m")

# %%
# Uniform and linear-increasing bins
# ----------------------------------
#
# Linear-increasing bins are narrow near the camera and wide far away.

for mode in ("uniform", "linear"):
    b = make_binning(mode, 1.0, 61.0, 8)
    print(mode, np.round(b.edges, 2), "-> 20 m is bin", depth_to_bin(20.0, b))

# %%
# Lifting an image field into voxels
# ----------------------------------
#
# Every voxel center is projected once; the map stores the pixel and the
# depth bin it lands in. Lifting is then a gather.

grid = VoxelGrid.from_range((0, -5, 20, 5), 1.0, -0.25, 2.25, 0.5)
binning = make_binning("uniform", 1.0, 41.0, 20)
vmap = build_voxel_pixel_map(grid, P, 100, 200, binning)
print("grid", grid.shape, "voxels seen by the camera:", int(vmap.present.sum()))

column_index = np.tile(np.arange(200, dtype=float), (100, 1))[..., None]
lifted = lift(column_index, vmap)
print("image column seen from voxel (15, 5, 2):", lifted[15, 5, 2, 0])
