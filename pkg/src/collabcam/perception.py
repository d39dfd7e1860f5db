"""Single-agent camera-only detection: encode, depth, voxelize, collapse, decode, NMS.

The learned networks of a real detector are replaced by deterministic
analogs: the encoder emits one-hot class signatures, the depth head emits a
peaked categorical distribution around the true bin, and the decoder reads
class evidence directly from the BEV feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import DepthBinning, VoxelGrid, VoxelPixelMap, depths_to_bins, lift, lift_depth
from .metrics import rotated_iou
from .scene import GroundTruthBox, RenderedView

DIST_TOL = 1e-6
# decoder moments weight each cell by conf ** WEIGHT_POWER so that faint
# smear around a peak barely moves the box center or heading
WEIGHT_POWER = 3.0


def check_distribution(dist: np.ndarray) -> np.ndarray:
    """Assert every pixel's depth vector is nonnegative and sums to one."""
    if np.any(dist < 0) or not np.allclose(dist.sum(axis=-1), 1.0, rtol=0, atol=DIST_TOL):
        raise ValueError("depth distribution is not normalized")
    return dist


def class_templates(n_channels: int) -> np.ndarray:
    """Unit class signatures; row ``c`` is the signature of class ``c`` (0 = background)."""
    return np.eye(n_channels)


def encode(view: RenderedView, sigma_f: float, seed, n_channels: int = 4) -> np.ndarray:
    """H x W x C feature: class signature of each pixel plus Gaussian noise."""
    sem = view.semantic
    if sem.max(initial=0) >= n_channels:
        raise ValueError(f"class id {sem.max()} needs more than {n_channels} channels")
    feat = class_templates(n_channels)[sem]
    if sigma_f > 0:
        rng = np.random.default_rng(seed)
        feat = feat + rng.normal(0.0, sigma_f, size=feat.shape)
    return feat


def estimate_depth(
    view: RenderedView,
    binning: DepthBinning,
    kappa0: float,
    kappa_slope: float,
    sigma_d: float,
    seed,
) -> np.ndarray:
    """H x W x D categorical depth distribution peaked at the true bin.

    Logits fall off linearly with bin distance from the true bin at a rate
    ``kappa0 / (1 + kappa_slope * d / d_max)``, so far pixels are flatter.
    Pixels without a true bin (sky, out of range) are uniform.
    """
    if kappa0 <= 0:
        raise ValueError("kappa0 must be positive")
    D = binning.count
    H, W = view.depth.shape
    kstar = depths_to_bins(view.depth, binning)
    valid = kstar >= 0
    depth = np.where(valid, view.depth, 0.0)
    kappa = kappa0 / (1.0 + kappa_slope * depth / binning.d_max)
    logits = -kappa[..., None] * np.abs(np.arange(D) - kstar[..., None])
    if sigma_d > 0:
        rng = np.random.default_rng(seed)
        logits = logits + rng.normal(0.0, sigma_d, size=logits.shape)
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    p[~valid] = 1.0 / D
    return check_distribution(p)


@dataclass(frozen=True)
class VoxelTensor:
    features: np.ndarray  # X x Y x Z x C
    prob: np.ndarray  # X x Y x Z
    present: np.ndarray  # X x Y x Z bool


def voxelize(feat: np.ndarray, dist: np.ndarray, vmap: VoxelPixelMap) -> VoxelTensor:
    return VoxelTensor(lift(feat, vmap), lift_depth(dist, vmap), vmap.present.copy())


def collapse(vt: VoxelTensor, prob: np.ndarray | None = None) -> np.ndarray:
    """Probability-weighted sum of voxel features along Z (X x Y x C).

    ``prob`` overrides the tensor's own depth probabilities, e.g. with the
    collaboratively refined ones.
    """
    p = vt.prob if prob is None else prob
    return np.einsum("xyz,xyzc->xyc", p, vt.features)


@dataclass(frozen=True)
class DenseHeatmap:
    """X x Y x 7 dense output: conf, residual x/y (m), length, width, cos, sin.

    ``classes`` holds the winning class id per cell.
    """

    values: np.ndarray
    classes: np.ndarray

    @property
    def conf(self) -> np.ndarray:
        return self.values[..., 0]


def class_confidence(bev: np.ndarray, templates: np.ndarray, scale: float = 1.0):
    """Per-cell max over object classes of the clamped template response.

    Returns ``(conf, class_id)``; background (row 0) never wins.
    """
    norms = np.linalg.norm(templates[1:], axis=1)
    resp = np.einsum("xyc,kc->xyk", bev, templates[1:]) / (norms * scale)
    resp = np.clip(resp, 0.0, 1.0)
    best = resp.argmax(axis=-1)
    conf = np.take_along_axis(resp, best[..., None], axis=-1)[..., 0]
    return conf, best + 1


def _windows(a: np.ndarray, r: int) -> np.ndarray:
    pad = np.pad(a, r)
    return sliding_window_view(pad, (2 * r + 1, 2 * r + 1))


def decode(
    bev: np.ndarray,
    templates: np.ndarray,
    grid: VoxelGrid,
    size_prior: tuple[float, float],
    scale: float = 1.0,
) -> DenseHeatmap:
    """Dense boxes from class evidence.

    Residuals are the conf-weighted centroid of the 3x3 window around each
    cell; the heading is the principal axis of the conf-weighted second
    moments over the 5x5 window; sizes come from ``size_prior = (l, w)``.
    """
    conf, cls = class_confidence(bev, templates, scale)
    X, Y = conf.shape
    cell = grid.cell_size[:2]
    weight = conf**WEIGHT_POWER

    win3 = _windows(weight, 1)
    off = np.arange(-1, 2, dtype=float)
    mass3 = win3.sum(axis=(-2, -1))
    safe3 = np.where(mass3 > 0, mass3, 1.0)
    rx = np.einsum("xyij,i->xy", win3, off) / safe3 * cell[0]
    ry = np.einsum("xyij,j->xy", win3, off) / safe3 * cell[1]
    rx = np.where(mass3 > 0, rx, 0.0)
    ry = np.where(mass3 > 0, ry, 0.0)

    win5 = _windows(weight, 2)
    dx = np.arange(-2, 3, dtype=float)[:, None] * cell[0]
    dy = np.arange(-2, 3, dtype=float)[None, :] * cell[1]
    m5 = win5.sum(axis=(-2, -1))
    safe5 = np.where(m5 > 0, m5, 1.0)
    mx = (win5 * dx).sum(axis=(-2, -1)) / safe5
    my = (win5 * dy).sum(axis=(-2, -1)) / safe5
    cxx = (win5 * dx**2).sum(axis=(-2, -1)) / safe5 - mx**2
    cyy = (win5 * dy**2).sum(axis=(-2, -1)) / safe5 - my**2
    cxy = (win5 * (dx * dy)).sum(axis=(-2, -1)) / safe5 - mx * my
    theta = 0.5 * np.arctan2(2 * cxy, cxx - cyy)
    theta = np.where(m5 > 0, theta, 0.0)

    out = np.empty((X, Y, 7))
    out[..., 0] = conf
    out[..., 1] = rx
    out[..., 2] = ry
    out[..., 3] = size_prior[0]
    out[..., 4] = size_prior[1]
    out[..., 5] = np.cos(theta)
    out[..., 6] = np.sin(theta)
    return DenseHeatmap(out, cls)


@dataclass(frozen=True)
class Detection:
    box: GroundTruthBox
    score: float


def heatmap_candidates(hm: DenseHeatmap, grid: VoxelGrid, conf_floor: float, height: float,
                       ground_z: float = 0.0):
    """Candidate detections in NMS order: descending conf, then x index, then y index."""
    conf = hm.conf
    xs, ys = np.nonzero(conf > conf_floor)
    order = np.lexsort((ys, xs, -conf[xs, ys]))
    centers = grid.bev_centers()
    out = []
    for i in order:
        x, y = xs[i], ys[i]
        v = hm.values[x, y]
        yaw = math.atan2(v[6], v[5])
        if yaw <= -math.pi:
            yaw += 2 * math.pi
        box = GroundTruthBox(
            int(hm.classes[x, y]),
            float(centers[x, y, 0] + v[1]),
            float(centers[x, y, 1] + v[2]),
            ground_z + height / 2,
            height,
            float(v[4]),
            float(v[3]),
            yaw,
        )
        out.append(Detection(box, float(conf[x, y])))
    return out


def greedy_nms(candidates, iou_threshold: float):
    """Keep candidates in the given order unless they overlap a kept box by more
    than ``iou_threshold``."""
    kept: list[Detection] = []
    kept_xy = np.empty((0, 2))
    kept_r = np.empty(0)
    for det in candidates:
        b = det.box
        r = 0.5 * math.hypot(b.l, b.w)
        if len(kept):
            near = np.hypot(kept_xy[:, 0] - b.x, kept_xy[:, 1] - b.y) < kept_r + r
            if any(rotated_iou(b, kept[j].box) > iou_threshold for j in np.nonzero(near)[0]):
                continue
        kept.append(det)
        kept_xy = np.vstack([kept_xy, [b.x, b.y]])
        kept_r = np.append(kept_r, r)
    return kept


def nms(
    hm: DenseHeatmap,
    grid: VoxelGrid,
    conf_floor: float = 0.1,
    iou_threshold: float = 0.3,
    height: float = 1.5,
    ground_z: float = 0.0,
) -> list[Detection]:
    if not 0 <= conf_floor <= 1:
        raise ValueError("conf floor must lie in [0, 1]")
    return greedy_nms(heatmap_candidates(hm, grid, conf_floor, height, ground_z), iou_threshold)
