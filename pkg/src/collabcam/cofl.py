"""Collaborative detection features: confidence-gated BEV messages and max fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .perception import class_confidence


def confidence_map(bev: np.ndarray, templates: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """X x Y detection confidence; identical to the decoder's conf channel."""
    return class_confidence(bev, templates, scale)[0]


@dataclass(frozen=True, eq=False)
class DetMessage:
    """Selected BEV cells (flat row-major uint32 indices) and their float32 features."""

    sender: int
    receiver: int
    bev_shape: tuple[int, int]
    indices: np.ndarray
    features: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other):
        return (
            isinstance(other, DetMessage)
            and (self.sender, self.receiver, tuple(self.bev_shape))
            == (other.sender, other.receiver, tuple(other.bev_shape))
            and self.features.shape == other.features.shape
            and self.indices.tobytes() == other.indices.tobytes()
            and self.features.tobytes() == other.features.tobytes()
        )

    __hash__ = None


def pack_detection_message(
    bev: np.ndarray, conf: np.ndarray, c_thre: float, sender: int, receiver: int
) -> DetMessage:
    flat = np.flatnonzero(conf > c_thre)
    C = bev.shape[-1]
    return DetMessage(
        sender,
        receiver,
        bev.shape[:2],
        flat.astype(np.uint32),
        bev.reshape(-1, C)[flat].astype(np.float32),
    )


def fuse_features(ego: np.ndarray, messages) -> np.ndarray:
    """Elementwise max of the ego BEV feature and every received entry.

    Cells nobody sent keep the ego feature untouched.
    """
    X, Y, C = ego.shape
    out = np.array(ego, dtype=np.float64).reshape(-1, C)
    for msg in messages:
        if msg.n_channels != C or tuple(msg.bev_shape) != (X, Y):
            raise ValueError(
                f"message has {msg.n_channels} channels on {msg.bev_shape}, ego has {C} on {(X, Y)}"
            )
        idx = msg.indices.astype(np.int64)
        out[idx] = np.maximum(out[idx], msg.features)
    return out.reshape(X, Y, C)
