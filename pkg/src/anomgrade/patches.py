"""Patch embedding maps: stride-1 sliding-window average pooling of feature maps.

A feature map of shape (c, h, w) with window ``sw`` becomes a (g, g, c) grid
with g = h - sw + 1; entry (a, b, ch) is the mean of the sw x sw window of
channel ch anchored at (a, b). The patch tensor of all windows is never
materialized; pooling computes the same values directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ValidationError


def patch_count(h: int, w: int, sw: int) -> int:
    """Number of stride-1 sw x sw windows in an h x w map."""
    if sw < 1 or sw > min(h, w):
        raise ValueError(f"window size {sw} out of range for {h}x{w} feature map")
    return (h - sw + 1) * (w - sw + 1)


def pool_patch_grid(features: torch.Tensor, sw: int) -> torch.Tensor:
    """Average-pool (..., c, h, w) into a (..., g, g, c) patch grid.

    Differentiable; used both inside the training loss path and for bank
    construction. Requires a square spatial extent.
    """
    h, w = features.shape[-2], features.shape[-1]
    if h != w:
        raise ValidationError(f"feature map must be square, got {h}x{w}")
    if sw < 1 or sw > h:
        raise ValueError(f"window size {sw} out of range for {h}x{w} feature map")
    squeeze = features.dim() == 3
    x = features[None] if squeeze else features
    pooled = F.avg_pool2d(x, kernel_size=sw, stride=1)  # (..., c, g, g)
    grid = pooled.movedim(-3, -1)  # (..., g, g, c)
    return grid[0] if squeeze else grid


@dataclass
class PatchEmbeddingMap:
    """Per-image (g, g, c) patch embedding grid."""

    values: np.ndarray  # (g, g, c) float32
    sw: int
    source_id: str = ""

    @property
    def grid_side(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def validate(self) -> None:
        v = self.values
        if v.ndim != 3 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"patch map {self.source_id!r}: expected square (g, g, c) array")
        if not np.isfinite(v).all():
            raise ValidationError(f"patch map {self.source_id!r}: non-finite values")


def to_patch_embedding_map(feature_values: np.ndarray | torch.Tensor, sw: int,
                           source_id: str = "") -> PatchEmbeddingMap:
    """Convert one (c, h, w) feature map into its PatchEmbeddingMap."""
    t = torch.as_tensor(feature_values, dtype=torch.float32)
    if t.dim() != 3:
        raise ValidationError("expected a single (c, h, w) feature map")
    grid = pool_patch_grid(t, sw)
    m = PatchEmbeddingMap(values=grid.numpy().astype(np.float32), sw=sw, source_id=source_id)
    m.validate()
    return m
