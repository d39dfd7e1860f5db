"""Rotated BEV IoU, average precision and depth classification accuracy."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import DepthBinning, depths_to_bins


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertices."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` against the convex CCW ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        prev = inp[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in inp:
            side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if side >= 0:
                if prev_side < 0:
                    out.append(_cross_point(prev, cur, prev_side, side))
                out.append(cur)
            elif prev_side >= 0:
                out.append(_cross_point(prev, cur, prev_side, side))
            prev, prev_side = cur, side
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def box_corners(x, y, l, w, yaw) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = l / 2, w / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return local @ np.array([[c, s], [-s, c]]) + np.array([x, y])


def _footprint(b) -> tuple[float, float, float, float, float]:
    if hasattr(b, "yaw"):
        return b.x, b.y, b.l, b.w, b.yaw
    x, y, l, w, yaw = b
    return x, y, l, w, yaw


def rotated_iou(a, b) -> float:
    """BEV IoU of two yawed rectangles.

    Boxes are anything with ``x, y, l, w, yaw`` attributes or an
    ``(x, y, l, w, yaw)`` tuple; height is ignored.
    """
    ax, ay, al, aw, ayaw = _footprint(a)
    bx, by, bl, bw, byaw = _footprint(b)
    if min(al, aw, bl, bw) <= 0:
        raise ValueError("box sizes must be positive")
    # circumscribed circles do not touch
    if math.hypot(ax - bx, ay - by) >= 0.5 * (math.hypot(al, aw) + math.hypot(bl, bw)):
        return 0.0
    pa = box_corners(ax, ay, al, aw, ayaw)
    pb = box_corners(bx, by, bl, bw, byaw)
    inter = polygon_area(clip_convex(pa, pb))
    if inter <= 0:
        return 0.0
    union = al * aw + bl * bw - inter
    return float(min(1.0, max(0.0, inter / union)))


@dataclass(frozen=True)
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float


def average_precision(detections, gts, iou_threshold: float) -> PrCurve:
    """All-point interpolated AP of ``(box, confidence)`` pairs against GT boxes.

    Detections are ranked by confidence (stable for ties); each one greedily
    takes the unmatched GT with the highest IoU, counting as a true positive
    when that IoU reaches the threshold.
    """
    dets = list(detections)
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1])
    n_gt = len(gts)
    if n_gt == 0:
        ap = 1.0 if not dets else 0.0
        empty = np.zeros(0)
        return PrCurve(empty, empty, ap)
    matched = [False] * n_gt
    tp = np.zeros(len(dets))
    for rank, i in enumerate(order):
        box = dets[i][0]
        best, best_iou = -1, -1.0
        for g in range(n_gt):
            if matched[g]:
                continue
            iou = rotated_iou(box, gts[g])
            if iou > best_iou:
                best, best_iou = g, iou
        if best >= 0 and best_iou >= iou_threshold:
            matched[best] = True
            tp[rank] = 1.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(dets) + 1)
    if len(dets) == 0:
        return PrCurve(recall, precision, 0.0)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    ap = float(np.sum(steps * envelope))
    return PrCurve(recall, precision, min(1.0, max(0.0, ap)))


class Region(str, enum.Enum):
    FULL_PLANE = "full"
    FOREGROUND = "foreground"


def depth_accuracy(pred, view, binning: DepthBinning, region=Region.FULL_PLANE) -> float | None:
    """Fraction of evaluated pixels whose predicted bin equals the GT bin.

    ``pred`` is an H x W x D distribution (argmax taken) or an H x W array of
    bin indices. Pixels without a GT bin (sky, or depth outside the binning
    range) are never evaluated. Returns None when the region is empty.
    """
    pred = np.asarray(pred)
    bins = pred.argmax(axis=-1) if pred.ndim == 3 else pred
    gt = depths_to_bins(view.depth, binning)
    if bins.shape != gt.shape:
        raise ValueError(f"prediction is {bins.shape}, view is {gt.shape}")
    mask = gt >= 0
    if Region(region) is Region.FOREGROUND:
        mask &= view.instance >= 0
    n = int(mask.sum())
    if n == 0:
        return None
    return float(np.mean(bins[mask] == gt[mask]))
