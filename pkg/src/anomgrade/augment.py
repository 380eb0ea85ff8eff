"""Stochastic pair augmentation for self-supervised pre-training.

One sample of a pair receives a weak transform (identity, spatial jitter,
sharpness, brightness); its partner receives either the identity or a strong
transform (crop-and-resize, cut-paste). The binary label of the pair is
derived solely from the partner's draw: y = 0 iff the partner kept the
identity.

All transforms act on (C, S, S) intensity tensors in [0, 1], i.e. after
resizing but before normalization, and preserve shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F


class NormTransform(Enum):
    IDENTITY = "identity"
    JITTER = "jitter"
    SHARPNESS = "sharpness"
    BRIGHTNESS = "brightness"


class AnomTransform(Enum):
    IDENTITY = "identity"
    CROP_RESIZE = "crop_resize"
    CUTPASTE = "cutpaste"


_NORM_ORDER = (NormTransform.IDENTITY, NormTransform.JITTER,
               NormTransform.SHARPNESS, NormTransform.BRIGHTNESS)
_ANOM_ORDER = (AnomTransform.IDENTITY, AnomTransform.CROP_RESIZE, AnomTransform.CUTPASTE)

# PIL-style smoothing kernel used by the sharpness transform.
_SMOOTH_KERNEL = torch.tensor([[1.0, 1.0, 1.0],
                               [1.0, 5.0, 1.0],
                               [1.0, 1.0, 1.0]]) / 13.0


@dataclass(frozen=True)
class AugmentParams:
    jitter_max_shift: int = 4
    jitter_mode: str = "translate"  # "translate" (spatial) or "intensity" (additive offset)
    jitter_intensity_span: float = 0.05
    sharpness_range: tuple[float, float] = (0.8, 1.2)
    brightness_range: tuple[float, float] = (0.8, 1.2)
    crop_scale_range: tuple[float, float] = (0.6, 0.9)       # fraction of area retained
    cutpaste_area_range: tuple[float, float] = (0.02, 0.15)  # fraction of image area
    cutpaste_aspect_range: tuple[float, float] = (0.3, 3.3)

    def validate(self) -> None:
        if self.jitter_max_shift < 0:
            raise ValueError("jitter_max_shift must be >= 0")
        if self.jitter_mode not in ("translate", "intensity"):
            raise ValueError(f"jitter_mode must be 'translate' or 'intensity', "
                             f"got {self.jitter_mode!r}")
        if self.jitter_intensity_span < 0:
            raise ValueError("jitter_intensity_span must be >= 0")
        for name in ("sharpness_range", "brightness_range", "crop_scale_range",
                     "cutpaste_area_range", "cutpaste_aspect_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        for name in ("crop_scale_range", "cutpaste_area_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo and hi < 1.0):
                raise ValueError(f"{name} must lie within (0, 1)")


@dataclass
class TrainingPair:
    left: torch.Tensor   # weakly transformed x_i, (C, S, S) intensity
    right: torch.Tensor  # possibly strongly transformed x_j
    y: int
    left_id: str
    right_id: str
    left_transform: NormTransform
    right_transform: AnomTransform


def apply_jitter(image: torch.Tensor, params: AugmentParams, rng: np.random.Generator) -> torch.Tensor:
    if params.jitter_mode == "intensity":
        offset = float(rng.uniform(-params.jitter_intensity_span, params.jitter_intensity_span))
        return (image + offset).clamp(0.0, 1.0)
    m = params.jitter_max_shift
    if m == 0:
        return image
    dx = int(rng.integers(-m, m + 1))
    dy = int(rng.integers(-m, m + 1))
    side_h, side_w = image.shape[-2], image.shape[-1]
    padded = F.pad(image[None], (m, m, m, m), mode="replicate")[0]
    return padded[:, m + dy:m + dy + side_h, m + dx:m + dx + side_w]


def apply_sharpness(image: torch.Tensor, params: AugmentParams, rng: np.random.Generator) -> torch.Tensor:
    factor = float(rng.uniform(*params.sharpness_range))
    channels = image.shape[0]
    kernel = _SMOOTH_KERNEL.to(image.dtype)[None, None].expand(channels, 1, 3, 3)
    blurred = F.conv2d(F.pad(image[None], (1, 1, 1, 1), mode="replicate"),
                       kernel, groups=channels)[0]
    # factor == 1 reproduces the input exactly; >1 sharpens, <1 smooths
    return (image + (factor - 1.0) * (image - blurred)).clamp(0.0, 1.0)


def apply_brightness(image: torch.Tensor, params: AugmentParams, rng: np.random.Generator) -> torch.Tensor:
    factor = float(rng.uniform(*params.brightness_range))
    return (image * factor).clamp(0.0, 1.0)


def apply_crop_resize(image: torch.Tensor, params: AugmentParams, rng: np.random.Generator) -> torch.Tensor:
    side = image.shape[-1]
    area_frac = float(rng.uniform(*params.crop_scale_range))
    crop_side = int(np.clip(round(side * area_frac ** 0.5), 1, side))
    x0 = int(rng.integers(0, side - crop_side + 1))
    y0 = int(rng.integers(0, side - crop_side + 1))
    crop = image[:, y0:y0 + crop_side, x0:x0 + crop_side]
    out = F.interpolate(crop[None], size=(side, side), mode="bilinear",
                        align_corners=False, antialias=True)[0]
    return out.clamp(0.0, 1.0)


def apply_cutpaste(image: torch.Tensor, params: AugmentParams, rng: np.random.Generator) -> torch.Tensor:
    side = image.shape[-1]
    area = float(rng.uniform(*params.cutpaste_area_range)) * side * side
    aspect = float(rng.uniform(*params.cutpaste_aspect_range))
    pw = int(np.clip(round((area * aspect) ** 0.5), 1, side))
    ph = int(np.clip(round((area / aspect) ** 0.5), 1, side))
    sx = int(rng.integers(0, side - pw + 1))
    sy = int(rng.integers(0, side - ph + 1))
    tx, ty = sx, sy
    if (side - pw + 1) * (side - ph + 1) > 1:
        while (tx, ty) == (sx, sy):
            tx = int(rng.integers(0, side - pw + 1))
            ty = int(rng.integers(0, side - ph + 1))
    out = image.clone()
    out[:, ty:ty + ph, tx:tx + pw] = image[:, sy:sy + ph, sx:sx + pw]
    return out


def sample_norm_transform(image: torch.Tensor, params: AugmentParams,
                          rng: np.random.Generator) -> tuple[torch.Tensor, NormTransform]:
    """Draw uniformly from the weak transform set and apply it."""
    transform = _NORM_ORDER[int(rng.integers(0, len(_NORM_ORDER)))]
    if transform is NormTransform.IDENTITY:
        return image, transform
    if transform is NormTransform.JITTER:
        return apply_jitter(image, params, rng), transform
    if transform is NormTransform.SHARPNESS:
        return apply_sharpness(image, params, rng), transform
    return apply_brightness(image, params, rng), transform


def sample_anom_transform(image: torch.Tensor, params: AugmentParams,
                          rng: np.random.Generator) -> tuple[torch.Tensor, AnomTransform, int]:
    """Draw uniformly from the strong transform set; y = 0 iff identity was drawn."""
    transform = _ANOM_ORDER[int(rng.integers(0, len(_ANOM_ORDER)))]
    if transform is AnomTransform.IDENTITY:
        return image, transform, 0
    if transform is AnomTransform.CROP_RESIZE:
        return apply_crop_resize(image, params, rng), transform, 1
    return apply_cutpaste(image, params, rng), transform, 1


def make_training_pair(x_i: torch.Tensor, x_j: torch.Tensor, params: AugmentParams,
                       rng: np.random.Generator, left_id: str = "",
                       right_id: str = "") -> TrainingPair:
    """Build one labeled pair: weak transform on x_i, strong-or-identity on x_j."""
    if left_id and left_id == right_id:
        raise ValueError(f"pair requires distinct partners, got {left_id!r} twice")
    params.validate()
    left, left_t = sample_norm_transform(x_i, params, rng)
    right, right_t, y = sample_anom_transform(x_j, params, rng)
    return TrainingPair(left=left, right=right, y=y, left_id=left_id,
                        right_id=right_id, left_transform=left_t, right_transform=right_t)


def draw_partner_index(n: int, i: int, rng: np.random.Generator) -> int:
    """Uniform index over {0..n-1} \\ {i}; needs at least two samples."""
    if n < 2:
        raise ValueError("pairing requires at least two samples")
    j = int(rng.integers(0, n - 1))
    return j if j < i else j + 1
