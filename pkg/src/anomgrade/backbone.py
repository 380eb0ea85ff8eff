"""Truncated pretrained CNN feature extractors.

Two presets share one interface: a compact stack (AlexNet-style, used for
self-supervised pre-training) and a larger one (VGG-16-style, used for
retraining once pseudo labels enlarge the training pool). Truncation keeps
the first ``truncation_index`` layers of the convolutional feature stack,
counting convolution, activation, and pooling stages in network order; the
later layers are dropped because they specialize toward natural-image
classification.

Weight sources:

* ``"imagenet"``      -- torchvision's pretrained natural-image weights
                         (needs a populated download cache or network access)
* ``"random:<seed>"`` -- deterministic seeded initialization, for fully
                         offline runs and tests
* any other string    -- path to a ``.pt``/``.pth`` state-dict file
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torchvision import models

from .errors import LoadError, ValidationError

COMPACT = "compact"
LARGE = "large"

_STACK_BUILDERS = {
    COMPACT: lambda: models.alexnet(weights=None).features,
    LARGE: lambda: models.vgg16(weights=None).features,
}
_PRETRAINED_BUILDERS = {
    COMPACT: lambda: models.alexnet(weights=models.AlexNet_Weights.IMAGENET1K_V1).features,
    LARGE: lambda: models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1).features,
}
# Defaults: 5 keeps AlexNet through its second convolution's activation;
# 17 keeps VGG-16 through its third pooling stage, whose output grid is
# within +/-2 of the compact preset's for the same input side.
DEFAULT_TRUNCATION = {COMPACT: 5, LARGE: 17}


@dataclass(frozen=True)
class BackboneSpec:
    architecture: str = COMPACT
    truncation_index: int | None = None  # None -> architecture default
    weights_source: str = "imagenet"
    trainable: bool = False

    def resolved_truncation(self) -> int:
        if self.truncation_index is None:
            return DEFAULT_TRUNCATION[self.architecture]
        return self.truncation_index

    def validate(self) -> None:
        if self.architecture not in _STACK_BUILDERS:
            raise ValueError(f"unknown architecture {self.architecture!r}; "
                             f"expected one of {sorted(_STACK_BUILDERS)}")
        depth = _stack_depth(self.architecture)
        idx = self.resolved_truncation()
        if not 1 <= idx <= depth:
            raise ValueError(f"truncation_index {idx} out of range [1, {depth}] "
                             f"for {self.architecture!r}")

    def to_dict(self) -> dict:
        return {"architecture": self.architecture,
                "truncation_index": self.resolved_truncation(),
                "weights_source": self.weights_source,
                "trainable": self.trainable}

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        return cls(architecture=d["architecture"],
                   truncation_index=d.get("truncation_index"),
                   weights_source=d.get("weights_source", "imagenet"),
                   trainable=bool(d.get("trainable", False)))


@dataclass
class FeatureMap:
    values: np.ndarray  # (c, h, w) float32
    source_id: str = ""

    def validate(self) -> None:
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValidationError(f"feature map {self.source_id!r}: expected (c, h, w) array")
        if not np.isfinite(self.values).all():
            raise ValidationError(f"feature map {self.source_id!r}: non-finite values")


_DEPTH_CACHE: dict[str, int] = {}


def _stack_depth(architecture: str) -> int:
    if architecture not in _DEPTH_CACHE:
        _DEPTH_CACHE[architecture] = len(_STACK_BUILDERS[architecture]())
    return _DEPTH_CACHE[architecture]


def _seeded_init(stack: nn.Sequential, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for module in stack.modules():
        if isinstance(module, nn.Conv2d):
            nn.init.kaiming_uniform_(module.weight, a=5 ** 0.5, generator=gen)
            if module.bias is not None:
                nn.init.zeros_(module.bias)


def _load_state_file(stack: nn.Sequential, path: Path) -> None:
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise LoadError(f"cannot load weights from {path}: {exc}") from exc
    if not isinstance(state, dict):
        raise LoadError(f"weights file {path} does not contain a state dict")
    # accept either a bare feature-stack dict or a full-model dict
    if any(k.startswith("features.") for k in state):
        state = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
    needed = stack.state_dict()
    missing = [k for k in needed if k not in state]
    if missing:
        raise LoadError(f"weights file {path} lacks keys for the truncated stack: {missing[:4]}")
    stack.load_state_dict({k: state[k] for k in needed})


class FeatureExtractor(nn.Module):
    """Truncated feature stack with shape probing and a content hash."""

    def __init__(self, spec: BackboneSpec, layers: nn.Sequential):
        super().__init__()
        self.spec = spec
        self.layers = layers
        self._shape_cache: dict[int, tuple[int, int, int]] = {}
        self.weight_hash = self._hash_parameters()
        for p in self.layers.parameters():
            p.requires_grad_(spec.trainable)

    def _hash_parameters(self) -> str:
        h = hashlib.sha256()
        for name, tensor in sorted(self.layers.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def load_weights(self, state_dict: dict) -> None:
        """Replace parameters with a saved state and refresh the content hash."""
        self.layers.load_state_dict(state_dict)
        self.weight_hash = self._hash_parameters()

    def refresh_weight_hash(self) -> str:
        """Recompute the content hash after in-place parameter updates."""
        self.weight_hash = self._hash_parameters()
        return self.weight_hash

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        return self.layers(batch)

    def feature_shape(self, input_side: int) -> tuple[int, int, int]:
        """(c, h, w) produced for a square input of the given side."""
        if input_side not in self._shape_cache:
            was_training = self.training
            self.eval()
            with torch.no_grad():
                out = self.layers(torch.zeros(1, 3, input_side, input_side))
            if was_training:
                self.train()
            self._shape_cache[input_side] = tuple(out.shape[1:])
        return self._shape_cache[input_side]


def build_backbone(spec: BackboneSpec) -> FeatureExtractor:
    """Construct the truncated extractor described by the spec."""
    spec.validate()
    source = spec.weights_source
    if source == "imagenet":
        try:
            full = _PRETRAINED_BUILDERS[spec.architecture]()
        except Exception as exc:
            raise LoadError(
                f"pretrained weights unavailable for {spec.architecture!r}: {exc}") from exc
        stack = nn.Sequential(*list(full.children())[:spec.resolved_truncation()])
    else:
        full = _STACK_BUILDERS[spec.architecture]()
        stack = nn.Sequential(*list(full.children())[:spec.resolved_truncation()])
        if source.startswith("random"):
            _, _, seed_str = source.partition(":")
            _seeded_init(stack, int(seed_str) if seed_str else 0)
        else:
            _load_state_file(stack, Path(source))
    return FeatureExtractor(spec, stack)


def extract(extractor: FeatureExtractor, batch: torch.Tensor,
            source_ids: list[str] | None = None) -> list[FeatureMap]:
    """Run a (B, 3, S, S) batch through the extractor in inference mode."""
    if batch.dim() != 4 or batch.shape[1] != 3:
        raise ValueError(f"expected a (B, 3, S, S) batch, got {tuple(batch.shape)}")
    if source_ids is not None and len(source_ids) != batch.shape[0]:
        raise ValueError("source_ids length must match the batch size")
    was_training = extractor.training
    extractor.eval()
    with torch.no_grad():
        out = extractor(batch)
    if was_training:
        extractor.train()
    maps = []
    for k in range(out.shape[0]):
        fm = FeatureMap(values=out[k].numpy().astype(np.float32, copy=True),
                        source_id=source_ids[k] if source_ids else "")
        fm.validate()
        maps.append(fm)
    return maps


def training_backbone(spec: BackboneSpec) -> FeatureExtractor:
    """Build the spec's extractor with gradients enabled, for a training stage."""
    return build_backbone(replace(spec, trainable=True))


def rebuild_from_state(spec: BackboneSpec, state_dict: dict) -> FeatureExtractor:
    """Reconstruct an extractor from saved parameters without touching the
    declared weights source (used when restoring checkpoints)."""
    spec.validate()
    full = _STACK_BUILDERS[spec.architecture]()
    stack = nn.Sequential(*list(full.children())[:spec.resolved_truncation()])
    stack.load_state_dict(state_dict)
    return FeatureExtractor(replace(spec, trainable=False), stack)
