"""Pairwise training: same-coordinate patch cosine similarity under a BCE loss.

Two stages share one loop. Pre-training iterates over the normal set,
augments each pair stochastically, and derives the label from the partner's
transform. Retraining switches augmentation off, pairs each normal with a
partner drawn either from the normal set (y=0) or from the denoised
pseudo-labeled set (y=1), and uses the larger backbone preset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .augment import AugmentParams, draw_partner_index, make_training_pair
from .backbone import BackboneSpec, FeatureExtractor, training_backbone
from .data import GradedImage, PreprocessSpec, normalize, to_model_intensity
from .errors import TrainingError
from .patches import pool_patch_grid

PRETRAIN = "pretrain"
RETRAIN = "retrain"


@dataclass(frozen=True)
class TrainConfig:
    stage: str = PRETRAIN
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    seed: int = 0
    clamp_epsilon: float = 1e-6
    anomaly_pair_fraction: float = 0.5  # retrain only: P(partner drawn from X_d)

    def validate(self) -> None:
        if self.stage not in (PRETRAIN, RETRAIN):
            raise ValueError(f"stage must be {PRETRAIN!r} or {RETRAIN!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if not 0.0 < self.clamp_epsilon < 0.5:
            raise ValueError("clamp_epsilon must lie in (0, 0.5)")
        if not 0.0 < self.anomaly_pair_fraction < 1.0:
            raise ValueError("anomaly_pair_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"stage": self.stage, "epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "optimizer": self.optimizer,
                "seed": self.seed, "clamp_epsilon": self.clamp_epsilon,
                "anomaly_pair_fraction": self.anomaly_pair_fraction}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def patchwise_cosine(a: torch.Tensor | np.ndarray, b: torch.Tensor | np.ndarray) -> torch.Tensor:
    """Cosine similarity between same-coordinate patch vectors.

    Accepts (..., g, g, c) grids with broadcastable leading dimensions and
    returns (..., g, g). Patch vectors with near-zero norm count as similarity
    zero rather than dividing by zero.
    """
    ta = torch.as_tensor(a)
    tb = torch.as_tensor(b)
    if ta.shape[-3:] != tb.shape[-3:]:
        raise ValueError(f"patch grids differ in shape: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    dot = (ta * tb).sum(dim=-1)
    denom = (ta.norm(dim=-1) * tb.norm(dim=-1)).clamp_min(1e-12)
    return dot / denom


def bce_patch_loss(grid: torch.Tensor | np.ndarray, y: torch.Tensor | float,
                   clamp_epsilon: float = 1e-6) -> torch.Tensor:
    """Binary cross entropy over one minus the patch similarities.

    The dissimilarity d = 1 - sim is clamped into [eps, 1-eps] before the log
    terms: cosine can go negative, which would push d past 1 and out of the
    BCE domain. The loss is the mean over all patch entries, so its scale is
    independent of the grid size.
    """
    if not 0.0 < clamp_epsilon < 0.5:
        raise ValueError("clamp_epsilon must lie in (0, 0.5)")
    sims = torch.as_tensor(grid)
    target = torch.as_tensor(y, dtype=sims.dtype)
    d = (1.0 - sims).clamp(clamp_epsilon, 1.0 - clamp_epsilon)
    per_patch = -(target * torch.log(d) + (1.0 - target) * torch.log(1.0 - d))
    return per_patch.mean()


@dataclass
class TraceRecord:
    epoch: int
    iteration: int
    left_id: str
    right_id: str
    left_transform: str
    right_transform: str
    y: int
    batch_loss: float


@dataclass
class TrainResult:
    model: FeatureExtractor
    config: TrainConfig
    backbone_spec: BackboneSpec
    epoch_losses: list[float]
    trace: list[TraceRecord] = field(default_factory=list)
    init_weight_hash: str = ""


def _prepare_intensities(images: Sequence[GradedImage],
                         preprocess_spec: PreprocessSpec) -> list[torch.Tensor]:
    return [to_model_intensity(im, preprocess_spec) for im in images]


class _BatchRunner:
    """Accumulates pairs, steps the optimizer on each full batch."""

    def __init__(self, model: FeatureExtractor, config: TrainConfig, sw: int,
                 preprocess_spec: PreprocessSpec):
        self.model = model
        self.config = config
        self.sw = sw
        self.spec = preprocess_spec
        self.optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        self.pending: list[tuple[torch.Tensor, torch.Tensor, int]] = []
        self.meta: list[tuple[int, int, str, str, str, str, int]] = []
        self.epoch_losses: list[float] = []
        self.trace: list[TraceRecord] = []
        self._epoch_acc: list[float] = []

    def add(self, left: torch.Tensor, right: torch.Tensor, y: int, epoch: int,
            iteration: int, left_id: str, right_id: str,
            left_transform: str, right_transform: str) -> None:
        self.pending.append((left, right, y))
        self.meta.append((epoch, iteration, left_id, right_id,
                          left_transform, right_transform, y))
        if len(self.pending) >= self.config.batch_size:
            self.flush()

    def flush(self) -> None:
        if not self.pending:
            return
        lefts = torch.stack([normalize(p[0], self.spec) for p in self.pending])
        rights = torch.stack([normalize(p[1], self.spec) for p in self.pending])
        ys = torch.tensor([p[2] for p in self.pending], dtype=torch.float32)
        n = lefts.shape[0]
        features = self.model(torch.cat([lefts, rights]))
        grids = pool_patch_grid(features, self.sw)
        sims = patchwise_cosine(grids[:n], grids[n:])
        loss = bce_patch_loss(sims, ys[:, None, None].expand_as(sims),
                              self.config.clamp_epsilon)
        value = float(loss.detach())
        if not np.isfinite(value):
            epoch, iteration = self.meta[0][0], self.meta[0][1]
            raise TrainingError(
                f"loss diverged (non-finite) at epoch {epoch}, iteration {iteration}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self._epoch_acc.append(value)
        for epoch, iteration, lid, rid, lt, rt, y in self.meta:
            self.trace.append(TraceRecord(epoch, iteration, lid, rid, lt, rt, y, value))
        self.pending.clear()
        self.meta.clear()

    def end_epoch(self) -> None:
        self.flush()
        self.epoch_losses.append(float(np.mean(self._epoch_acc)) if self._epoch_acc else 0.0)
        self._epoch_acc = []


def pretrain(normals: Sequence[GradedImage], backbone_spec: BackboneSpec,
             augment_params: AugmentParams, config: TrainConfig,
             preprocess_spec: PreprocessSpec, sw: int = 3) -> TrainResult:
    """Self-supervised pre-training over the normal set.

    Each epoch pairs every normal, in dataset order, with a uniformly drawn
    distinct partner; both pass through the stochastic augmentation module and
    the pair's label comes from the partner's draw. Deterministic given the
    config seed.
    """
    config.validate()
    if config.stage != PRETRAIN:
        raise TrainingError(f"pretrain called with stage {config.stage!r}")
    if len(normals) < 2:
        raise TrainingError("pre-training requires at least two normal images")
    augment_params.validate()

    rng = np.random.default_rng(config.seed)
    model = training_backbone(backbone_spec)
    init_hash = model.weight_hash
    model.train()
    intensities = _prepare_intensities(normals, preprocess_spec)

    runner = _BatchRunner(model, config, sw, preprocess_spec)
    iteration = 0
    for epoch in range(config.epochs):
        for i in range(len(normals)):
            j = draw_partner_index(len(normals), i, rng)
            pair = make_training_pair(intensities[i], intensities[j], augment_params, rng,
                                      left_id=normals[i].id, right_id=normals[j].id)
            runner.add(pair.left, pair.right, pair.y, epoch, iteration,
                       pair.left_id, pair.right_id,
                       pair.left_transform.value, pair.right_transform.value)
            iteration += 1
        runner.end_epoch()
    model.eval()
    model.refresh_weight_hash()
    return TrainResult(model=model, config=config, backbone_spec=model.spec,
                       epoch_losses=runner.epoch_losses, trace=runner.trace,
                       init_weight_hash=init_hash)


def retrain(normals: Sequence[GradedImage], denoised: Sequence[GradedImage],
            backbone_spec: BackboneSpec, config: TrainConfig,
            preprocess_spec: PreprocessSpec, sw: int = 3) -> TrainResult:
    """Retraining on the normal set plus denoised pseudo-labeled images.

    Augmentation is off: inputs enter the loss exactly as preprocessed. The
    label is decided by the partner's source set: y=1 iff the partner comes
    from the denoised pool, drawn with probability ``anomaly_pair_fraction``.
    """
    config.validate()
    if config.stage != RETRAIN:
        raise TrainingError(f"retrain called with stage {config.stage!r}")
    if len(normals) < 2:
        raise TrainingError("retraining requires at least two normal images")
    if len(denoised) < 1:
        raise TrainingError("denoised pool is empty; skip the retraining stage")

    rng = np.random.default_rng(config.seed)
    model = training_backbone(backbone_spec)
    init_hash = model.weight_hash
    model.train()
    normal_intensities = _prepare_intensities(normals, preprocess_spec)
    denoised_intensities = _prepare_intensities(denoised, preprocess_spec)

    runner = _BatchRunner(model, config, sw, preprocess_spec)
    iteration = 0
    for epoch in range(config.epochs):
        for i in range(len(normals)):
            if rng.random() < config.anomaly_pair_fraction:
                k = int(rng.integers(0, len(denoised)))
                partner, partner_id, y = denoised_intensities[k], denoised[k].id, 1
            else:
                j = draw_partner_index(len(normals), i, rng)
                partner, partner_id, y = normal_intensities[j], normals[j].id, 0
            runner.add(normal_intensities[i], partner, y, epoch, iteration,
                       normals[i].id, partner_id, "none", "none")
            iteration += 1
        runner.end_epoch()
    model.eval()
    model.refresh_weight_hash()
    return TrainResult(model=model, config=config, backbone_spec=model.spec,
                       epoch_losses=runner.epoch_losses, trace=runner.trace,
                       init_weight_hash=init_hash)
