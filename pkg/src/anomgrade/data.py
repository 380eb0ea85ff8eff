"""Dataset types, on-disk loading, and deterministic preprocessing.

Expected layout::

    <root>/images/*.png     8-bit grayscale, intensities mapped to [0,1] by /255
    <root>/labels.csv       header ``id,grade``; grade may be empty

The split spec is a JSON file with keys ``test_ids``, ``unlabeled_ids`` and
either ``normal_ids`` (explicit) or ``normal_count`` + ``normal_seed``
(seeded sampling from the grade-0 images not claimed by the other splits).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import CapacityError, LoadError, ValidationError

# Channel statistics of the standard natural-image pretraining distribution.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MIN_IMAGE_SIDE = 8
VALID_GRADES = frozenset(range(5))


@dataclass
class GradedImage:
    """A grayscale image with optional ordinal ground-truth grade."""

    id: str
    pixels: np.ndarray  # (H, W) float32 in [0, 1]
    grade: int | None = None
    confounder: bool | None = None

    def validate(self) -> None:
        p = self.pixels
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"image {self.id!r}: pixels must be a 2-D array")
        if not np.isfinite(p).all():
            raise ValidationError(f"image {self.id!r}: non-finite pixel values")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValidationError(f"image {self.id!r}: pixel values outside [0, 1]")
        if self.grade is not None and self.grade not in VALID_GRADES:
            raise ValidationError(f"image {self.id!r}: grade {self.grade} not in 0..4")


@dataclass
class DatasetSplit:
    """Normal (X_N), unlabeled (X_u) and test pools, disjoint by id."""

    normals: list[GradedImage]
    unlabeled: list[GradedImage]
    test: list[GradedImage]

    def validate(self) -> None:
        ids_n = {im.id for im in self.normals}
        ids_u = {im.id for im in self.unlabeled}
        ids_t = {im.id for im in self.test}
        if len(ids_n) != len(self.normals) or len(ids_u) != len(self.unlabeled) \
                or len(ids_t) != len(self.test):
            raise ValidationError("duplicate ids within a split")
        for a, b, name in ((ids_n, ids_u, "normal/unlabeled"),
                           (ids_n, ids_t, "normal/test"),
                           (ids_u, ids_t, "unlabeled/test")):
            overlap = a & b
            if overlap:
                raise ValidationError(f"{name} splits overlap: {sorted(overlap)[:5]}")
        for im in self.normals:
            if im.grade is not None and im.grade != 0:
                raise ValidationError(f"normal image {im.id!r} has grade {im.grade}")


@dataclass(frozen=True)
class PreprocessSpec:
    """Square resize, grayscale-to-3-channel replication, and normalization."""

    target_side: int = 224
    replicate_channels: bool = True
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def validate(self) -> None:
        if self.target_side <= 0:
            raise ValidationError("target_side must be positive")
        if any(s <= 0 for s in self.std):
            raise ValidationError("normalization std components must be positive")


def read_image(path: Path) -> np.ndarray:
    """Load an 8-bit grayscale PNG as float32 intensities in [0, 1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float32)
    except FileNotFoundError:
        raise LoadError(f"missing image file: {path}") from None
    except OSError as exc:
        raise LoadError(f"unreadable image file {path}: {exc}") from exc
    return arr / 255.0


def write_image(path: Path, pixels: np.ndarray) -> None:
    arr = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_labels(root: Path) -> dict[str, int | None]:
    """Parse ``labels.csv``; returns id -> grade (None when the field is empty)."""
    path = Path(root) / "labels.csv"
    if not path.is_file():
        raise LoadError(f"missing labels table: {path}")
    grades: dict[str, int | None] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["id", "grade"]:
            raise ValidationError(f"{path}: expected header 'id,grade'")
        for row in reader:
            image_id = row["id"]
            if image_id in grades:
                raise ValidationError(f"{path}: duplicate id {image_id!r}")
            raw = (row["grade"] or "").strip()
            grade = int(raw) if raw else None
            if grade is not None and grade not in VALID_GRADES:
                raise ValidationError(f"{path}: id {image_id!r} has grade {grade}, not in 0..4")
            grades[image_id] = grade
    return grades


def _load_images(root: Path, ids: list[str], grades: dict[str, int | None],
                 confounders: dict[str, bool] | None = None) -> list[GradedImage]:
    out = []
    for image_id in ids:
        if image_id not in grades:
            raise ValidationError(f"id {image_id!r} listed in split but absent from labels.csv")
        pixels = read_image(Path(root) / "images" / f"{image_id}.png")
        img = GradedImage(
            id=image_id,
            pixels=pixels,
            grade=grades[image_id],
            confounder=None if confounders is None else confounders.get(image_id, False),
        )
        img.validate()
        out.append(img)
    return out


def load_meta(root: Path) -> dict[str, bool]:
    """Read confounder flags from ``meta.csv`` when present (synthetic corpora)."""
    path = Path(root) / "meta.csv"
    if not path.is_file():
        return {}
    flags: dict[str, bool] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            flags[row["id"]] = row.get("confounder", "false").lower() == "true"
    return flags


def _validate_split_spec(spec: dict, source: str) -> dict:
    for key in ("test_ids", "unlabeled_ids"):
        if key not in spec or not isinstance(spec[key], list):
            raise ValidationError(f"{source}: split spec must list {key!r}")
    if "normal_ids" not in spec and not ("normal_count" in spec and "normal_seed" in spec):
        raise ValidationError(
            f"{source}: split spec needs 'normal_ids' or 'normal_count'+'normal_seed'")
    return spec


def load_split_spec(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing split spec: {path}")
    with open(path) as fh:
        spec = json.load(fh)
    return _validate_split_spec(spec, str(path))


def load_dataset(root: Path, split_spec: Path | dict,
                 normal_seed: int | None = None) -> DatasetSplit:
    """Load a DatasetSplit from disk.

    ``normal_seed`` overrides the seed stored in the split spec, so one spec
    file serves every seed of a multi-seed run. Sampling of X_N is uniform
    without replacement over the grade-0 ids not claimed by the test or
    unlabeled pools, deterministic given the seed.
    """
    root = Path(root)
    if isinstance(split_spec, dict):
        spec = _validate_split_spec(dict(split_spec), "split spec")
    else:
        spec = load_split_spec(split_spec)
    grades = load_labels(root)
    confounders = load_meta(root)

    test_ids = list(spec["test_ids"])
    unlabeled_ids = list(spec["unlabeled_ids"])

    if "normal_ids" in spec:
        normal_ids = list(spec["normal_ids"])
    else:
        seed = normal_seed if normal_seed is not None else int(spec["normal_seed"])
        count = int(spec["normal_count"])
        claimed = set(test_ids) | set(unlabeled_ids)
        eligible = sorted(i for i, g in grades.items() if g == 0 and i not in claimed)
        if count > len(eligible):
            raise CapacityError(
                f"requested {count} normals but only {len(eligible)} grade-0 images available")
        rng = np.random.default_rng(seed)
        normal_ids = [eligible[k] for k in rng.choice(len(eligible), size=count, replace=False)]

    split = DatasetSplit(
        normals=_load_images(root, normal_ids, grades, confounders),
        unlabeled=_load_images(root, unlabeled_ids, grades, confounders),
        test=_load_images(root, test_ids, grades, confounders),
    )
    split.validate()
    return split


def to_model_intensity(image: GradedImage | np.ndarray, spec: PreprocessSpec) -> torch.Tensor:
    """Resize and replicate to a (3, S, S) intensity tensor in [0, 1].

    This is the pre-normalization stage; augmentations operate on its output.
    """
    spec.validate()
    pixels = image.pixels if isinstance(image, GradedImage) else image
    h, w = pixels.shape
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ValidationError(f"degenerate image: {h}x{w} is below {MIN_IMAGE_SIDE} pixels")
    t = torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float32))
    side = spec.target_side
    if (h, w) != (side, side):
        t = F.interpolate(t[None, None], size=(side, side), mode="bilinear",
                          align_corners=False, antialias=True)[0, 0]
        t = t.clamp_(0.0, 1.0)
    if spec.replicate_channels:
        t = t[None].expand(3, -1, -1).contiguous()
    else:
        t = t[None]
    return t


def normalize(intensity: torch.Tensor, spec: PreprocessSpec) -> torch.Tensor:
    """Apply per-channel mean/std normalization to a (C, S, S) intensity tensor."""
    mean = torch.tensor(spec.mean, dtype=intensity.dtype).view(-1, 1, 1)
    std = torch.tensor(spec.std, dtype=intensity.dtype).view(-1, 1, 1)
    return (intensity - mean) / std


def preprocess(image: GradedImage | np.ndarray, spec: PreprocessSpec) -> torch.Tensor:
    """Full preprocessing: resize, replicate to 3 channels, normalize."""
    return normalize(to_model_intensity(image, spec), spec)
