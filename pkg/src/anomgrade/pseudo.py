"""Pseudo-label selection and statement-based denoising.

Unlabeled images scoring above twice the normal pairwise baseline become
pseudo-label candidates. Candidates whose similarity to any confounder
statement (screws, metal implants, pins) is significantly high relative to
the candidate pool are removed; the survivors form the denoised set used for
retraining.

"Significantly high" is a per-statement z-score above ``cutoff_z`` computed
over the candidate pool. Pools too small for meaningful statistics (< 3)
fall back to an absolute similarity threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .data import GradedImage
from .errors import LoadError, ScorerError, ValidationError
from .scoring import ScoreRecord

# Ships as the default dictionary; user-editable via a statements file.
DEFAULT_STATEMENTS = (
    "there is a screw present in the image",
    "there is a metal implant in the image",
    "there is a surgical pin in the image",
)

MIN_POOL_FOR_ZSCORES = 3


@dataclass(frozen=True)
class StatementDictionary:
    statements: tuple[str, ...] = DEFAULT_STATEMENTS
    cutoff_z: float = 2.0
    absolute_cutoff: float = 0.5  # fallback threshold for tiny candidate pools

    def validate(self) -> None:
        if len(self.statements) < 1:
            raise ValidationError("statement dictionary must contain at least one statement")
        if self.cutoff_z <= 0:
            raise ValidationError("cutoff_z must be positive")

    @classmethod
    def from_file(cls, path: Path, cutoff_z: float = 2.0,
                  absolute_cutoff: float = 0.5) -> "StatementDictionary":
        """One statement per line; blank lines and #-comments ignored."""
        path = Path(path)
        if not path.is_file():
            raise LoadError(f"missing statement dictionary: {path}")
        statements = []
        for line in path.read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                statements.append(line)
        d = cls(statements=tuple(statements), cutoff_z=cutoff_z,
                absolute_cutoff=absolute_cutoff)
        d.validate()
        return d


class TextImageScorer(Protocol):
    """Maps (image, statement) to a similarity score; higher means more similar."""

    def similarity(self, image: GradedImage, statement: str) -> float: ...


class BrightArtifactScorer:
    """Deterministic stand-in scorer keyed to saturated metal-like artifacts.

    Metal reads near-white on the synthetic corpus while anatomy and lesions
    stay below the saturation threshold, so the fraction of near-saturated
    pixels is an honest proxy for "this statement about metal matches the
    image". The score saturates at 1.0 once the artifact covers
    ``full_score_area`` of the image.
    """

    def __init__(self, saturation_threshold: float = 0.95, full_score_area: float = 0.01):
        self.saturation_threshold = saturation_threshold
        self.full_score_area = full_score_area

    def similarity(self, image: GradedImage, statement: str) -> float:
        bright = float((image.pixels >= self.saturation_threshold).mean())
        return min(1.0, bright / self.full_score_area)


class ClipStatementScorer:
    """Contrastive vision-language scorer backed by a locally stored model.

    Loads lazily from ``model_path`` (a directory holding a CLIP-style model
    usable by ``transformers``). Similarity is the cosine between the text and
    image embeddings, mapped to [0, 1].
    """

    def __init__(self, model_path: Path):
        self.model_path = Path(model_path)
        if not self.model_path.exists():
            raise ScorerError(f"text-image model path does not exist: {self.model_path}")
        self._model = None
        self._processor = None
        self._text_cache: dict = {}  # statement -> normalized text embedding

    def _ensure_loaded(self) -> None:
        if self._model is not None:
            return
        try:
            from transformers import CLIPModel, CLIPProcessor
            self._model = CLIPModel.from_pretrained(str(self.model_path))
            self._processor = CLIPProcessor.from_pretrained(str(self.model_path))
            self._model.eval()
        except Exception as exc:
            raise ScorerError(f"cannot load text-image model from {self.model_path}: {exc}") from exc

    def similarity(self, image: GradedImage, statement: str) -> float:
        self._ensure_loaded()
        import torch
        from PIL import Image as PILImage
        try:
            arr = np.clip(np.round(image.pixels * 255.0), 0, 255).astype(np.uint8)
            pil = PILImage.fromarray(arr, mode="L").convert("RGB")
            with torch.no_grad():
                if statement not in self._text_cache:
                    tok = self._processor(text=[statement], return_tensors="pt", padding=True)
                    emb = self._model.get_text_features(**tok)
                    self._text_cache[statement] = torch.nn.functional.normalize(emb, dim=-1)
                pix = self._processor(images=pil, return_tensors="pt")
                img_emb = self._model.get_image_features(**pix)
                img_emb = torch.nn.functional.normalize(img_emb, dim=-1)
                cos = float((img_emb * self._text_cache[statement]).sum())
        except ScorerError:
            raise
        except Exception as exc:
            raise ScorerError(f"text-image scoring failed for {image.id!r}: {exc}") from exc
        return 0.5 * (cos + 1.0)


@dataclass
class StatementScores:
    image_id: str
    per_statement: dict[str, float]
    max_score: float


def statement_similarity(scorer: TextImageScorer, image: GradedImage,
                         dictionary: StatementDictionary) -> StatementScores:
    """Similarity of one image against each statement, plus the maximum."""
    dictionary.validate()
    try:
        per = {s: float(scorer.similarity(image, s)) for s in dictionary.statements}
    except ScorerError:
        raise
    except Exception as exc:
        raise ScorerError(f"scorer failed on image {image.id!r}: {exc}") from exc
    return StatementScores(image_id=image.id, per_statement=per,
                           max_score=max(per.values()))


def select_candidates(records: Sequence[ScoreRecord], baseline: float) -> list[ScoreRecord]:
    """Records whose score strictly exceeds twice the pairwise baseline.

    Returns flagged copies; the input records are untouched.
    """
    if baseline < 0:
        raise ValidationError(f"baseline must be nonnegative, got {baseline}")
    threshold = 2.0 * baseline
    return [replace(r, pseudo_candidate=True) for r in records if r.score > threshold]


@dataclass
class DenoiseAuditRow:
    image_id: str
    statement: str
    score: float
    z_score: float
    removed: bool


@dataclass
class DenoiseResult:
    kept: list[GradedImage]          # X_d, in candidate order
    records: list[ScoreRecord]       # candidates with denoise_removed flags set
    audit: list[DenoiseAuditRow] = field(default_factory=list)
    mode: str = "zscore"             # "zscore" | "absolute"


def denoise(candidates: Sequence[ScoreRecord], images: Mapping[str, GradedImage],
            scorer: TextImageScorer, dictionary: StatementDictionary) -> DenoiseResult:
    """Remove candidates whose statement similarity is significantly high.

    Z-scores are computed per statement over the candidate pool; a candidate
    is removed when any statement's z exceeds ``cutoff_z``. A pool smaller
    than three candidates has no usable statistics, so removal falls back to
    ``max score > absolute_cutoff``.
    """
    dictionary.validate()
    for rec in candidates:
        if not rec.pseudo_candidate:
            raise ValidationError(f"record {rec.id!r} was not flagged as a pseudo candidate")
        if rec.id not in images:
            raise ValidationError(f"candidate {rec.id!r} has no corresponding image")

    if not candidates:
        return DenoiseResult(kept=[], records=[], audit=[])

    statements = dictionary.statements
    score_matrix = np.zeros((len(candidates), len(statements)))
    for i, rec in enumerate(candidates):
        sims = statement_similarity(scorer, images[rec.id], dictionary)
        for j, s in enumerate(statements):
            score_matrix[i, j] = sims.per_statement[s]

    absolute_mode = len(candidates) < MIN_POOL_FOR_ZSCORES
    if absolute_mode:
        z_matrix = np.zeros_like(score_matrix)
        removed = score_matrix.max(axis=1) > dictionary.absolute_cutoff
    else:
        mean = score_matrix.mean(axis=0)
        std = score_matrix.std(axis=0)
        safe = np.where(std < 1e-12, 1.0, std)
        z_matrix = np.where(std < 1e-12, 0.0, (score_matrix - mean) / safe)
        removed = (z_matrix > dictionary.cutoff_z).any(axis=1)

    kept_images, out_records, audit = [], [], []
    for i, rec in enumerate(candidates):
        out = replace(rec, denoise_removed=bool(removed[i]))
        out_records.append(out)
        if not removed[i]:
            kept_images.append(images[rec.id])
        for j, s in enumerate(statements):
            audit.append(DenoiseAuditRow(image_id=rec.id, statement=s,
                                         score=float(score_matrix[i, j]),
                                         z_score=float(z_matrix[i, j]),
                                         removed=bool(removed[i])))
    return DenoiseResult(kept=kept_images, records=out_records, audit=audit,
                         mode="absolute" if absolute_mode else "zscore")
