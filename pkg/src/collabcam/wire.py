"""Binary frames for depth and detection messages, byte accounting and
budget-driven threshold calibration.

Frame layout (little-endian)::

    magic "CC3D" | version u8 = 1 | kind u8 (1 depth, 2 det) | sender u16 |
    receiver u16 | entry count u32 | dims | entries

    depth: dims = X, Y, Z, C (u16 each); entry = voxel index u32, prob f32, C x f32
    det:   dims = X, Y, C   (u16 each); entry = cell index u32, C x f32

Every byte of the frame, header included, counts toward communication volume.
"""

from __future__ import annotations

import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .codepth import DepthMessage
from .cofl import DetMessage

MAGIC = b"CC3D"
VERSION = 1
KIND_DEPTH = 1
KIND_DET = 2

_PREFIX = struct.Struct("<4sBBHHI")
DEPTH_HEADER = _PREFIX.size + 8
DET_HEADER = _PREFIX.size + 6


class FrameError(ValueError):
    code = "frame-error"


class BadMagic(FrameError):
    code = "bad-magic"


class BadVersion(FrameError):
    code = "bad-version"


class BadKind(FrameError):
    code = "bad-kind"


class TruncatedFrame(FrameError):
    code = "truncated-frame"


class NonMonotoneIndex(FrameError):
    code = "non-monotone-index"


class IndexOutOfRange(FrameError):
    code = "index-out-of-range"


class NoCommunication(ValueError):
    """Zero bytes exchanged; log volume is undefined."""


def depth_entry_size(C: int) -> int:
    return 8 + 4 * C


def det_entry_size(C: int) -> int:
    return 4 + 4 * C


def frame_length(kind: int, n_entries: int, C: int) -> int:
    if kind == KIND_DEPTH:
        return DEPTH_HEADER + n_entries * depth_entry_size(C)
    if kind == KIND_DET:
        return DET_HEADER + n_entries * det_entry_size(C)
    raise BadKind(f"unknown frame kind {kind}")


def _depth_dtype(C):
    return np.dtype([("idx", "<u4"), ("p", "<f4"), ("f", "<f4", (C,))])


def _det_dtype(C):
    return np.dtype([("idx", "<u4"), ("f", "<f4", (C,))])


def _check_indices(idx: np.ndarray, limit: int):
    if len(idx) > 1 and np.any(np.diff(idx.astype(np.int64)) <= 0):
        raise NonMonotoneIndex("entry indices must be strictly increasing")
    if len(idx) and int(idx.max()) >= limit:
        raise IndexOutOfRange(f"entry index {int(idx.max())} outside {limit} cells")


def encode_frame(msg) -> bytes:
    if isinstance(msg, DepthMessage):
        X, Y, Z = msg.grid_shape
        C = msg.n_channels
        _check_indices(msg.indices, X * Y * Z)
        head = _PREFIX.pack(MAGIC, VERSION, KIND_DEPTH, msg.sender, msg.receiver, len(msg))
        head += struct.pack("<4H", X, Y, Z, C)
        body = np.empty(len(msg), dtype=_depth_dtype(C))
        body["idx"], body["p"], body["f"] = msg.indices, msg.probs, msg.features
    elif isinstance(msg, DetMessage):
        X, Y = msg.bev_shape
        C = msg.n_channels
        _check_indices(msg.indices, X * Y)
        head = _PREFIX.pack(MAGIC, VERSION, KIND_DET, msg.sender, msg.receiver, len(msg))
        head += struct.pack("<3H", X, Y, C)
        body = np.empty(len(msg), dtype=_det_dtype(C))
        body["idx"], body["f"] = msg.indices, msg.features
    else:
        raise TypeError(f"cannot encode {type(msg).__name__}")
    return head + body.tobytes()


def decode_frame(frame: bytes):
    frame = bytes(frame)
    if len(frame) < 4 or frame[:4] != MAGIC:
        raise BadMagic("frame does not start with CC3D")
    if len(frame) < _PREFIX.size:
        raise TruncatedFrame(f"frame of {len(frame)} bytes is shorter than its header")
    _, version, kind, sender, receiver, n = _PREFIX.unpack_from(frame)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if kind == KIND_DEPTH:
        if len(frame) < DEPTH_HEADER:
            raise TruncatedFrame("depth frame header is incomplete")
        X, Y, Z, C = struct.unpack_from("<4H", frame, _PREFIX.size)
        dtype, start = _depth_dtype(C), DEPTH_HEADER
    elif kind == KIND_DET:
        if len(frame) < DET_HEADER:
            raise TruncatedFrame("det frame header is incomplete")
        X, Y, C = struct.unpack_from("<3H", frame, _PREFIX.size)
        dtype, start = _det_dtype(C), DET_HEADER
    else:
        raise BadKind(f"unknown frame kind {kind}")
    expected = start + n * dtype.itemsize
    if len(frame) != expected:
        raise TruncatedFrame(f"frame has {len(frame)} bytes, header implies {expected}")
    body = np.frombuffer(frame, dtype=dtype, count=n, offset=start)
    idx = body["idx"].astype(np.uint32)
    if kind == KIND_DEPTH:
        _check_indices(idx, X * Y * Z)
        feats = np.ascontiguousarray(body["f"], dtype=np.float32).reshape(n, C)
        return DepthMessage(
            sender, receiver, (X, Y, Z), idx, body["p"].astype(np.float32), feats
        )
    _check_indices(idx, X * Y)
    feats = np.ascontiguousarray(body["f"], dtype=np.float32).reshape(n, C)
    return DetMessage(sender, receiver, (X, Y), idx, feats)


def comm_volume_log2(total_bytes: int) -> float:
    if total_bytes < 1:
        raise NoCommunication("no communication")
    return math.log2(total_bytes)


@dataclass
class CommLedger:
    """Bytes per (sender, receiver, round); updated only with real frame lengths."""

    entries: dict = field(default_factory=lambda: defaultdict(int))

    def record(self, sender: int, receiver: int, round_: int, frame: bytes) -> None:
        self.entries[(sender, receiver, round_)] += len(frame)

    @property
    def total(self) -> int:
        return sum(self.entries.values())

    def round_total(self, round_: int) -> int:
        return sum(v for (_, _, r), v in self.entries.items() if r == round_)

    def sent_by(self, agent: int) -> int:
        return sum(v for (s, _, _), v in self.entries.items() if s == agent)

    def received_by(self, agent: int) -> int:
        return sum(v for (_, r, _), v in self.entries.items() if r == agent)


# -- budget calibration ------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    threshold: float
    projected_bytes: int
    # False when even empty frames would exceed the budget
    affordable: bool


def _bisect_largest(n_candidates: int, cost) -> int:
    """Largest k in [0, n_candidates] with cost(k) feasible, for monotone cost."""
    lo, hi = 0, n_candidates
    for _ in range(32):
        if lo >= hi:
            break
        mid = (lo + hi + 1) // 2
        if cost(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def _round_bytes(per_sender_entries, header, entry, n_agents, per_pair):
    sizes = [header + n * entry for n in per_sender_entries]
    if per_pair:
        return max(sizes, default=0)
    return (n_agents - 1) * sum(sizes)


def calibrate_depth_threshold(
    uncertainty_maps, voxel_maps, n_channels: int, budget: float, per_pair: bool = False
) -> Calibration:
    """Largest entropy threshold whose depth frames fit in ``budget`` bytes.

    The search runs over the sorted distinct entropies, so the number of
    selected voxels is exactly the largest affordable one. The returned
    threshold is the first excluded entropy (selection uses ``U < u_thre``).
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    n = len(uncertainty_maps)
    header, entry = DEPTH_HEADER, depth_entry_size(n_channels)
    # voxel count carried by each pixel of each agent, paired with its entropy
    per_agent = []
    for U, vmap in zip(uncertainty_maps, voxel_maps):
        counts = np.zeros(U.shape, dtype=np.int64)
        present = vmap.present
        np.add.at(counts, (vmap.h[present], vmap.w[present]), 1)
        per_agent.append((U.reshape(-1), counts.reshape(-1)))
    values = np.unique(np.concatenate([u for u, _ in per_agent])) if per_agent else np.zeros(0)
    top = float(values[-1]) + 1.0 if len(values) else 1.0
    # candidate k selects every pixel with U <= values[k-1]; k = 0 selects nothing
    cut = np.append(values, top)

    def entries_at(k):
        thr = cut[k]
        return [int(c[u < thr].sum()) for u, c in per_agent]

    def fits(k):
        return _round_bytes(entries_at(k), header, entry, n, per_pair) <= budget

    empty = _round_bytes([0] * n, header, entry, n, per_pair)
    if empty > budget:
        return Calibration(0.0, 0, False)
    k = _bisect_largest(len(values), fits)
    thr = 0.0 if k == 0 else float(cut[k])
    return Calibration(thr, _round_bytes(entries_at(k), header, entry, n, per_pair), True)


def calibrate_detection_threshold(
    confidence_maps, n_channels: int, budget: float, per_pair: bool = False
) -> Calibration:
    """Smallest confidence threshold whose detection frames fit in ``budget`` bytes."""
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    n = len(confidence_maps)
    header, entry = DET_HEADER, det_entry_size(n_channels)
    flat = [np.asarray(c).reshape(-1) for c in confidence_maps]
    values = np.unique(np.concatenate(flat))[::-1] if flat else np.zeros(0)
    # candidate k keeps cells with conf > cut[k]: the k largest distinct values
    cut = np.append(values, min(-1e-12, float(values[-1]) - 1.0) if len(values) else -1e-12)

    def entries_at(k):
        thr = 1.0 if k == 0 else cut[k]
        return [int((c > thr).sum()) for c in flat]

    def fits(k):
        return _round_bytes(entries_at(k), header, entry, n, per_pair) <= budget

    empty = _round_bytes([0] * n, header, entry, n, per_pair)
    if empty > budget:
        return Calibration(1.0, 0, False)
    k = _bisect_largest(len(values), fits)
    thr = 1.0 if k == 0 else float(cut[k])
    return Calibration(thr, _round_bytes(entries_at(k), header, entry, n, per_pair), True)


def calibrate_thresholds(
    budget: float,
    mode: str,
    *,
    uncertainty_maps=None,
    voxel_maps=None,
    confidence_maps=None,
    n_channels: int = 4,
    per_pair: bool = False,
):
    """Return ``(u_thre, c_thre)``; the threshold of the other mode is None.

    ``mode`` is "depth", "detection" or "both".
    """
    u = c = None
    if mode in ("depth", "both"):
        u = calibrate_depth_threshold(
            uncertainty_maps, voxel_maps, n_channels, budget, per_pair
        ).threshold
    if mode in ("detection", "both"):
        c = calibrate_detection_threshold(confidence_maps, n_channels, budget, per_pair).threshold
    if u is None and c is None:
        raise ValueError(f"unknown calibration mode {mode!r}")
    return u, c
