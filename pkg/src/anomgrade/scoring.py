"""Reference bank construction and anomaly scoring.

An image's anomaly score is one minus the mean same-coordinate cosine
similarity between its patch embedding map and every map in the bank of
normal references, the mean running jointly over references and patch
coordinates. The bank also carries the pairwise baseline: the average
one-minus-mean-similarity over all unordered pairs of normal maps, which the
pseudo-labeling stage doubles to obtain its selection threshold.

Similarities accumulate in float64 so that scores are insensitive (to well
below 1e-9) to the ordering of the reference maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .backbone import FeatureExtractor
from .data import GradedImage, PreprocessSpec, preprocess
from .errors import BankMismatchError, ValidationError
from .patches import PatchEmbeddingMap, pool_patch_grid

_ZERO_NORM_GUARD = 1e-12


@dataclass
class ScoreRecord:
    id: str
    score: float
    grade: int | None = None
    pseudo_candidate: bool = False
    denoise_removed: bool = False


@dataclass
class ReferenceBank:
    maps: list[PatchEmbeddingMap]
    baseline: float
    model_ref: str  # weight hash of the checkpoint the maps came from
    sw: int
    _normalized: np.ndarray | None = field(default=None, repr=False, compare=False)

    def validate(self) -> None:
        if len(self.maps) < 2:
            raise ValidationError("reference bank needs at least two normal maps")
        shapes = {m.values.shape for m in self.maps}
        if len(shapes) != 1:
            raise ValidationError(f"reference maps disagree in shape: {shapes}")
        if not 0.0 <= self.baseline <= 2.0:
            raise ValidationError(f"baseline {self.baseline} outside [0, 2]")

    def normalized_stack(self) -> np.ndarray:
        """(N, p, c) float64 unit patch vectors; zero-norm patches stay zero."""
        if self._normalized is None:
            stack = np.stack([m.values for m in self.maps]).astype(np.float64)
            n, g, _, c = stack.shape
            flat = stack.reshape(n, g * g, c)
            norms = np.linalg.norm(flat, axis=-1, keepdims=True)
            self._normalized = flat / np.maximum(norms, _ZERO_NORM_GUARD)
        return self._normalized


def _normalize_query(map_values: np.ndarray) -> np.ndarray:
    flat = map_values.astype(np.float64).reshape(-1, map_values.shape[-1])
    norms = np.linalg.norm(flat, axis=-1, keepdims=True)
    return flat / np.maximum(norms, _ZERO_NORM_GUARD)


def pairwise_baseline(maps: Sequence[PatchEmbeddingMap]) -> float:
    """Mean over all unordered pairs of one minus the pair's mean similarity.

    Self-pairs are excluded: they score identically zero and would deflate
    the pseudo-label threshold.
    """
    if len(maps) < 2:
        raise ValidationError("baseline needs at least two maps")
    unit = np.stack([_normalize_query(m.values) for m in maps])  # (N, p, c)
    sims = np.einsum("npc,mpc->nmp", unit, unit)  # same-coordinate cosine for all pairs
    per_pair = 1.0 - sims.mean(axis=2)  # (N, N)
    iu = np.triu_indices(len(maps), k=1)
    return float(per_pair[iu].mean())


def compute_patch_maps(extractor: FeatureExtractor, images: Sequence[GradedImage],
                       preprocess_spec: PreprocessSpec, sw: int,
                       batch_size: int = 32) -> list[PatchEmbeddingMap]:
    """Extract and pool patch embedding maps for a sequence of images."""
    was_training = extractor.training
    extractor.eval()
    maps: list[PatchEmbeddingMap] = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            batch = torch.stack([preprocess(im, preprocess_spec) for im in chunk])
            grids = pool_patch_grid(extractor(batch), sw)
            for k, im in enumerate(chunk):
                m = PatchEmbeddingMap(values=grids[k].numpy().astype(np.float32, copy=True),
                                      sw=sw, source_id=im.id)
                m.validate()
                maps.append(m)
    if was_training:
        extractor.train()
    return maps


def build_reference_bank(extractor: FeatureExtractor, normals: Sequence[GradedImage],
                         preprocess_spec: PreprocessSpec, sw: int) -> ReferenceBank:
    """One map per normal, in input order, plus the pairwise baseline."""
    if len(normals) < 2:
        raise ValidationError("reference bank needs at least two normal images")
    maps = compute_patch_maps(extractor, normals, preprocess_spec, sw)
    bank = ReferenceBank(maps=maps, baseline=pairwise_baseline(maps),
                         model_ref=extractor.weight_hash, sw=sw)
    bank.validate()
    return bank


def score_map(bank: ReferenceBank, map_values: np.ndarray) -> float:
    """Anomaly score of one patch map against the whole bank."""
    unit = _normalize_query(map_values)  # (p, c)
    refs = bank.normalized_stack()  # (N, p, c)
    if unit.shape != refs.shape[1:]:
        raise ValidationError(
            f"query map shape {unit.shape} does not match bank maps {refs.shape[1:]}")
    sims = np.einsum("pc,npc->np", unit, refs)
    return float(1.0 - sims.mean())


def _check_model(bank: ReferenceBank, extractor: FeatureExtractor) -> None:
    if bank.model_ref and bank.model_ref != extractor.weight_hash:
        raise BankMismatchError(
            "reference bank was built with a different checkpoint "
            f"({bank.model_ref[:12]}... vs {extractor.weight_hash[:12]}...)")


def anomaly_score(bank: ReferenceBank, image: GradedImage, extractor: FeatureExtractor,
                  preprocess_spec: PreprocessSpec) -> ScoreRecord:
    """Score one image: one minus the mean similarity to all reference maps."""
    _check_model(bank, extractor)
    (m,) = compute_patch_maps(extractor, [image], preprocess_spec, bank.sw, batch_size=1)
    return ScoreRecord(id=image.id, score=score_map(bank, m.values), grade=image.grade)


def score_batch(bank: ReferenceBank, images: Sequence[GradedImage],
                extractor: FeatureExtractor, preprocess_spec: PreprocessSpec,
                batch_size: int = 32) -> list[ScoreRecord]:
    """Elementwise anomaly_score over the input, preserving order."""
    _check_model(bank, extractor)
    maps = compute_patch_maps(extractor, images, preprocess_spec, bank.sw, batch_size)
    return [ScoreRecord(id=im.id, score=score_map(bank, m.values), grade=im.grade)
            for im, m in zip(images, maps)]
