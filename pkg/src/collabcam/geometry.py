"""Camera projection, depth-bin discretization and the voxel/pixel lifting map.

Conventions used throughout the package:

* world frame: x, y span the ground plane, z points up (meters)
* camera frame: x right, y down, z forward; pixel (h, w) has its center at
  (u=w, v=h)
* depth ``d`` is the third homogeneous component of ``P @ [x, y, z, 1]``,
  i.e. metric distance along the optical axis
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class BehindCamera(ValueError):
    """Raised when a point does not lie strictly in front of the camera."""


class DepthOutOfRange(ValueError):
    """Raised when a depth falls outside the binning range."""


class InvalidBinning(ValueError):
    """Raised for a degenerate depth range or bin count."""


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """3x4 pinhole projection from world coordinates to homogeneous pixels."""

    rows: np.ndarray

    def __post_init__(self):
        m = np.array(self.rows, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("projection matrix has non-finite entries")
        if np.linalg.det(m[:, :3]) <= 0:
            raise ValueError("projection matrix is mirrored or singular")
        m.setflags(write=False)
        object.__setattr__(self, "rows", m)

    @classmethod
    def from_camera(cls, fx, fy, cx, cy, position, yaw, pitch=0.0):
        """Build ``K [R | -R c]`` for a camera at ``position``.

        ``yaw`` is the heading of the optical axis in the ground plane,
        ``pitch`` tilts it downwards (positive = looking down).
        """
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        R = camera_rotation(yaw, pitch)
        c = np.asarray(position, dtype=np.float64)
        Rt = np.hstack([R, (-R @ c)[:, None]])
        return cls(K @ Rt)

    def __eq__(self, other):
        return isinstance(other, ProjectionMatrix) and np.array_equal(self.rows, other.rows)

    __hash__ = None

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Homogeneous product for an (..., 3) array; returns (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rows[:, :3].T + self.rows[:, 3]

    def backproject(self, u, v, d) -> np.ndarray:
        """World points whose projection is (u, v) at depth d (broadcasting)."""
        u, v, d = np.broadcast_arrays(
            np.asarray(u, float), np.asarray(v, float), np.asarray(d, float)
        )
        rhs = np.stack([u * d, v * d, d], axis=-1) - self.rows[:, 3]
        inv = np.linalg.inv(self.rows[:, :3])
        return rhs @ inv.T


def camera_rotation(yaw: float, pitch: float = 0.0) -> np.ndarray:
    """World-to-camera rotation with rows (right, down, forward)."""
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    forward = np.array([cy * cp, sy * cp, -sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def project_point(P: ProjectionMatrix, p) -> tuple[float, float, float]:
    """Project one world point; raises :class:`BehindCamera` when d <= 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ValueError("point must be a finite 3-vector")
    q = P.apply(p)
    d = float(q[2])
    if d <= 0:
        raise BehindCamera(f"depth {d} is not in front of the camera")
    return float(q[0] / d), float(q[1] / d), d


class SpacingMode(str, enum.Enum):
    UNIFORM = "uniform"
    LINEAR_INCREASING = "linear"


@dataclass(frozen=True, eq=False)
class DepthBinning:
    mode: SpacingMode
    d_min: float
    d_max: float
    count: int
    edges: np.ndarray = field(repr=False)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def __eq__(self, other):
        return (
            isinstance(other, DepthBinning)
            and self.mode == other.mode
            and self.count == other.count
            and np.array_equal(self.edges, other.edges)
        )

    __hash__ = None


def make_binning(mode, d_min: float, d_max: float, count: int) -> DepthBinning:
    """Discretize ``[d_min, d_max]`` into ``count`` depth bins.

    Uniform bins have equal widths. Linear-increasing bins have widths that
    grow in arithmetic progression, with edge ``i`` at
    ``d_min + (d_max - d_min) * i * (i + 1) / (D * (D + 1))``.
    """
    mode = SpacingMode(mode)
    if not (0 <= d_min < d_max) or count < 1 or int(count) != count:
        raise InvalidBinning(f"invalid depth range [{d_min}, {d_max}] with {count} bins")
    count = int(count)
    i = np.arange(count + 1, dtype=np.float64)
    span = d_max - d_min
    if mode is SpacingMode.UNIFORM:
        edges = d_min + i * span / count
    else:
        edges = d_min + span * i * (i + 1) / (count * (count + 1))
    edges[0], edges[-1] = d_min, d_max
    edges.setflags(write=False)
    return DepthBinning(mode, float(d_min), float(d_max), count, edges)


def depth_to_bin(d: float, b: DepthBinning) -> int:
    if not np.isfinite(d):
        raise ValueError("depth must be finite")
    if d < b.d_min or d > b.d_max:
        raise DepthOutOfRange(f"depth {d} outside [{b.d_min}, {b.d_max}]")
    k = int(np.searchsorted(b.edges, d, side="right")) - 1
    return min(k, b.count - 1)


def depths_to_bins(d: np.ndarray, b: DepthBinning) -> np.ndarray:
    """Vectorized :func:`depth_to_bin`; out-of-range or non-finite gives -1."""
    d = np.asarray(d, dtype=np.float64)
    k = np.searchsorted(b.edges, d, side="right") - 1
    k = np.minimum(k, b.count - 1)
    valid = np.isfinite(d) & (d >= b.d_min) & (d <= b.d_max)
    return np.where(valid, k, -1)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    origin: np.ndarray
    cell_size: np.ndarray
    shape: tuple[int, int, int]

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        cell = np.asarray(self.cell_size, dtype=np.float64).reshape(3)
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ValueError(f"grid extents must be positive, got {shape}")
        if np.any(cell <= 0):
            raise ValueError("cell sizes must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cell_size", cell)
        object.__setattr__(self, "shape", shape)

    @property
    def bev_shape(self) -> tuple[int, int]:
        return self.shape[:2]

    @property
    def n_voxels(self) -> int:
        X, Y, Z = self.shape
        return X * Y * Z

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.shape[axis]) + 0.5) * self.cell_size[axis]

    def centers(self) -> np.ndarray:
        """Voxel centers as an (X, Y, Z, 3) array."""
        xs, ys, zs = (self.axis_centers(a) for a in range(3))
        return np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)

    def bev_centers(self) -> np.ndarray:
        """BEV cell centers as an (X, Y, 2) array."""
        xs, ys = self.axis_centers(0), self.axis_centers(1)
        return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Flat row-major voxel index of each point, -1 outside the grid."""
        pts = np.asarray(points, dtype=np.float64)
        ijk = np.floor((pts - self.origin) / self.cell_size).astype(np.int64)
        shape = np.array(self.shape)
        inside = np.all((ijk >= 0) & (ijk < shape), axis=-1)
        ijk = np.where(inside[..., None], ijk, 0)
        flat = np.ravel_multi_index(np.moveaxis(ijk, -1, 0), self.shape)
        return np.where(inside, flat, -1)

    @classmethod
    def from_range(cls, bev_range, cell_xy: float, z_min: float, z_max: float, dz: float):
        """Grid covering ``bev_range = (xmin, ymin, xmax, ymax)`` and ``[z_min, z_max)``."""
        xmin, ymin, xmax, ymax = bev_range
        X = int(round((xmax - xmin) / cell_xy))
        Y = int(round((ymax - ymin) / cell_xy))
        Z = int(round((z_max - z_min) / dz))
        return cls(np.array([xmin, ymin, z_min]), np.array([cell_xy, cell_xy, dz]), (X, Y, Z))


@dataclass(frozen=True, eq=False)
class VoxelPixelMap:
    """Per-voxel pixel row, column and depth bin; ``present`` marks mapped voxels.

    Absent voxels carry -1 in ``h``, ``w`` and ``k``.
    """

    h: np.ndarray
    w: np.ndarray
    k: np.ndarray
    image_shape: tuple[int, int]
    n_bins: int

    @property
    def present(self) -> np.ndarray:
        return self.k >= 0

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.k.shape

    def __eq__(self, other):
        return (
            isinstance(other, VoxelPixelMap)
            and self.image_shape == other.image_shape
            and self.n_bins == other.n_bins
            and np.array_equal(self.h, other.h)
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.k, other.k)
        )

    __hash__ = None


def build_voxel_pixel_map(
    grid: VoxelGrid, P: ProjectionMatrix, H: int, W: int, b: DepthBinning
) -> VoxelPixelMap:
    q = P.apply(grid.centers())
    d = q[..., 2]
    in_front = d > 0
    safe_d = np.where(in_front, d, 1.0)
    # round-half-up keeps the assignment independent of numpy's banker's rounding
    w = np.floor(q[..., 0] / safe_d + 0.5)
    h = np.floor(q[..., 1] / safe_d + 0.5)
    k = depths_to_bins(np.where(in_front, d, -1.0), b)
    present = in_front & (h >= 0) & (h < H) & (w >= 0) & (w < W) & (k >= 0)
    h = np.where(present, h, -1).astype(np.int64)
    w = np.where(present, w, -1).astype(np.int64)
    k = np.where(present, k, -1).astype(np.int64)
    for a in (h, w, k):
        a.setflags(write=False)
    return VoxelPixelMap(h, w, k, (int(H), int(W)), b.count)


def lift(field: np.ndarray, vmap: VoxelPixelMap) -> np.ndarray:
    """Gather an H x W x M image field into an X x Y x Z x M voxel field.

    Every present voxel receives the value of the pixel its center projects
    to, so a pixel is duplicated along its whole ray; absent voxels get zeros.
    """
    field = np.asarray(field)
    if field.shape[:2] != vmap.image_shape:
        raise ValueError(f"field is {field.shape[:2]}, map expects {vmap.image_shape}")
    present = vmap.present
    out = np.zeros(vmap.grid_shape + field.shape[2:], dtype=np.result_type(field, np.float64))
    out[present] = field[vmap.h[present], vmap.w[present]]
    return out


def lift_depth(dist: np.ndarray, vmap: VoxelPixelMap) -> np.ndarray:
    """Voxel (x,y,z) mapped to (h, w, k) receives ``dist[h, w, k]``."""
    dist = np.asarray(dist)
    if dist.shape != vmap.image_shape + (vmap.n_bins,):
        raise ValueError(
            f"distribution is {dist.shape}, map expects {vmap.image_shape + (vmap.n_bins,)}"
        )
    present = vmap.present
    out = np.zeros(vmap.grid_shape, dtype=np.float64)
    out[present] = dist[vmap.h[present], vmap.w[present], vmap.k[present]]
    return out


def frustum_voxel_index(
    grid: VoxelGrid, P: ProjectionMatrix, H: int, W: int, b: DepthBinning
) -> np.ndarray:
    """For every pixel and depth bin, the flat index of the voxel containing
    the back-projected bin center (-1 when it falls outside the grid)."""
    v, u = np.meshgrid(np.arange(H, dtype=float), np.arange(W, dtype=float), indexing="ij")
    pts = P.backproject(u[..., None], v[..., None], b.centers[None, None, :])
    return grid.locate(pts)
