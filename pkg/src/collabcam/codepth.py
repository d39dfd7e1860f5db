"""Collaborative depth: entropy-gated voxel messages and multi-view consistency fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import VoxelPixelMap
from .perception import VoxelTensor

LOGIT_EPS = 1e-6


def uncertainty_map(dist: np.ndarray) -> np.ndarray:
    """Per-pixel Shannon entropy of the depth distribution, in bits."""
    p = np.asarray(dist, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    D = p.shape[-1]
    return np.clip(terms.sum(axis=-1), 0.0, np.log2(D))


@dataclass(frozen=True, eq=False)
class DepthMessage:
    """Sparse voxel entries sent from one agent to another.

    ``indices`` are flat row-major voxel indices (uint32, strictly increasing);
    ``probs`` and ``features`` are stored as float32, exactly as on the wire.
    """

    sender: int
    receiver: int
    grid_shape: tuple[int, int, int]
    indices: np.ndarray
    probs: np.ndarray
    features: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other):
        return (
            isinstance(other, DepthMessage)
            and (self.sender, self.receiver, tuple(self.grid_shape))
            == (other.sender, other.receiver, tuple(other.grid_shape))
            and self.features.shape == other.features.shape
            and self.indices.tobytes() == other.indices.tobytes()
            and self.probs.tobytes() == other.probs.tobytes()
            and self.features.tobytes() == other.features.tobytes()
        )

    __hash__ = None


def depth_selection(U: np.ndarray, vmap: VoxelPixelMap, u_thre: float):
    """Image mask ``U < u_thre`` and its voxel projection."""
    if u_thre < 0:
        raise ValueError("u_thre must be nonnegative")
    mask = U < u_thre
    present = vmap.present
    vmask = np.zeros(vmap.grid_shape, dtype=bool)
    vmask[present] = mask[vmap.h[present], vmap.w[present]]
    return mask, vmask


def pack_depth_message(
    vt: VoxelTensor, U: np.ndarray, vmap: VoxelPixelMap, u_thre: float, sender: int, receiver: int
) -> DepthMessage:
    _, vmask = depth_selection(U, vmap, u_thre)
    flat = np.flatnonzero(vmask)
    C = vt.features.shape[-1]
    return DepthMessage(
        sender,
        receiver,
        vmap.grid_shape,
        flat.astype(np.uint32),
        vt.prob.reshape(-1)[flat].astype(np.float32),
        vt.features.reshape(-1, C)[flat].astype(np.float32),
    )


def matching_score(ego: VoxelTensor, messages, p_thre: float) -> np.ndarray:
    """Sum over neighbors of gated inner products between ego and received features.

    A received entry counts only if its depth probability exceeds ``p_thre``
    and the ego voxel is present. Messages are accumulated in sender order so
    the result does not depend on arrival order.
    """
    if not 0 <= p_thre <= 1:
        raise ValueError("p_thre must lie in [0, 1]")
    shape = ego.prob.shape
    C = ego.features.shape[-1]
    score = np.zeros(int(np.prod(shape)))
    ego_feat = ego.features.reshape(-1, C)
    ego_present = ego.present.reshape(-1)
    for msg in sorted(messages, key=lambda m: m.sender):
        if tuple(msg.grid_shape) != tuple(shape) or msg.n_channels != C:
            raise ValueError("message does not match the ego voxel grid")
        idx = msg.indices.astype(np.int64)
        keep = (msg.probs.astype(np.float64) > p_thre) & ego_present[idx]
        idx = idx[keep]
        dots = np.einsum("nc,nc->n", ego_feat[idx], msg.features[keep].astype(np.float64))
        score[idx] += dots
    return score.reshape(shape)


def _logit(p):
    p = np.clip(p, LOGIT_EPS, 1 - LOGIT_EPS)
    return np.log(p) - np.log1p(-p)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def fuse_depth(
    prob: np.ndarray,
    score: np.ndarray,
    present: np.ndarray | None = None,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 0.0,
) -> np.ndarray:
    """Refined voxel depth confidence ``sigmoid(alpha*logit(p) + beta*S + gamma)``.

    Voxels outside ``present`` stay zero. No renormalization along Z.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    prob = np.asarray(prob, dtype=np.float64)
    out = _sigmoid(alpha * _logit(prob) + beta * np.asarray(score) + gamma)
    if present is not None:
        out = np.where(present, out, 0.0)
    return out


def fused_pixel_depth(
    dist: np.ndarray,
    score: np.ndarray,
    frustum_index: np.ndarray,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 0.0,
) -> np.ndarray:
    """Image-space view of the refined depth, for accuracy evaluation.

    Each (pixel, bin) takes the matching score of the voxel containing its
    back-projected bin center and goes through the same pointwise fusion as
    :func:`fuse_depth`; returns the per-pixel argmax bin.
    """
    flat = score.reshape(-1)
    s = np.where(frustum_index >= 0, flat[np.maximum(frustum_index, 0)], 0.0)
    fused = alpha * _logit(np.asarray(dist, dtype=np.float64)) + beta * s + gamma
    return fused.argmax(axis=-1)
