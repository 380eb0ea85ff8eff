"""Synthetic ordinal-severity corpus generator.

Produces a desk-scale stand-in for a clinical X-ray dataset: every image
shares one smooth "anatomy" texture (fixed by ``texture_seed``) plus
per-image noise; an image of grade g receives exactly g localized
lesion-like blobs near a horizontal joint band, so perturbation energy is
monotone in grade by construction. A configurable fraction of grade-0
unlabeled images additionally gets a near-saturated rectangle mimicking
metal hardware, flagged in ``meta.csv`` so the denoising stage can be
audited against ground truth.

Output follows the ingest layout (``images/*.png``, ``labels.csv``) plus
``meta.csv`` and a ready-to-use ``split.json``. Generation is deterministic
given (spec, seed); every image derives its own RNG stream from the run seed
and its position, so order of generation is irrelevant.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import write_image

# Anatomy stays strictly below this; metal sits strictly above. The gap
# survives 8-bit quantization, keeping the saturation-based artifact
# detector honest.
ANATOMY_CEILING = 0.90
METAL_FLOOR = 0.97


@dataclass(frozen=True)
class LesionParams:
    radius_frac_range: tuple[float, float] = (0.050, 0.066)  # of image side
    contrast_range: tuple[float, float] = (0.24, 0.32)
    band: tuple[float, float] = (0.34, 0.66)  # joint-line rows, fraction of side
    min_separation_factor: float = 2.4        # x max radius, between blob centers


@dataclass(frozen=True)
class SynthSpec:
    image_side: int = 128
    normal_pool: int = 100  # grade-0 images reserved for sampling X_N
    unlabeled_per_grade: dict[int, int] = field(
        default_factory=lambda: {0: 400, 1: 100, 2: 100, 3: 100, 4: 100})
    test_per_grade: dict[int, int] = field(
        default_factory=lambda: {0: 200, 1: 200, 2: 200, 3: 200, 4: 200})
    confounder_fraction: float = 0.10  # of grade-0 unlabeled images
    texture_seed: int = 7
    noise_sigma: float = 0.010
    lesion: LesionParams = field(default_factory=LesionParams)
    metal_side_frac_range: tuple[float, float] = (0.25, 0.40)
    metal_intensity_range: tuple[float, float] = (METAL_FLOOR, 1.0)
    split_normal_count: int = 30

    def validate(self) -> None:
        if self.image_side < 32:
            raise ValueError("image_side must be at least 32")
        if not 0.0 <= self.confounder_fraction < 1.0:
            raise ValueError("confounder_fraction must lie in [0, 1)")
        for counts in (self.unlabeled_per_grade, self.test_per_grade):
            if not set(counts) <= set(range(5)):
                raise ValueError("grade keys must lie in 0..4")
            if any(v < 0 for v in counts.values()):
                raise ValueError("per-grade counts must be nonnegative")
        if self.normal_pool < 2:
            raise ValueError("normal_pool must be at least 2")

    def to_dict(self) -> dict:
        return {
            "image_side": self.image_side,
            "normal_pool": self.normal_pool,
            "unlabeled_per_grade": {str(k): v for k, v in self.unlabeled_per_grade.items()},
            "test_per_grade": {str(k): v for k, v in self.test_per_grade.items()},
            "confounder_fraction": self.confounder_fraction,
            "texture_seed": self.texture_seed,
            "noise_sigma": self.noise_sigma,
            "lesion": {"radius_frac_range": list(self.lesion.radius_frac_range),
                       "contrast_range": list(self.lesion.contrast_range),
                       "band": list(self.lesion.band),
                       "min_separation_factor": self.lesion.min_separation_factor},
            "metal_side_frac_range": list(self.metal_side_frac_range),
            "metal_intensity_range": list(self.metal_intensity_range),
            "split_normal_count": self.split_normal_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        lesion = d.get("lesion", {})
        return cls(
            image_side=d.get("image_side", 128),
            normal_pool=d.get("normal_pool", 100),
            unlabeled_per_grade={int(k): v for k, v in d.get(
                "unlabeled_per_grade", {0: 400, 1: 100, 2: 100, 3: 100, 4: 100}).items()},
            test_per_grade={int(k): v for k, v in d.get(
                "test_per_grade", {g: 200 for g in range(5)}).items()},
            confounder_fraction=d.get("confounder_fraction", 0.10),
            texture_seed=d.get("texture_seed", 7),
            noise_sigma=d.get("noise_sigma", 0.010),
            lesion=LesionParams(
                radius_frac_range=tuple(lesion.get("radius_frac_range", (0.050, 0.066))),
                contrast_range=tuple(lesion.get("contrast_range", (0.24, 0.32))),
                band=tuple(lesion.get("band", (0.34, 0.66))),
                min_separation_factor=lesion.get("min_separation_factor", 2.4)),
            metal_side_frac_range=tuple(d.get("metal_side_frac_range", (0.25, 0.40))),
            metal_intensity_range=tuple(d.get("metal_intensity_range", (METAL_FLOOR, 1.0))),
            split_normal_count=d.get("split_normal_count", 30),
        )


def base_texture(spec: SynthSpec) -> np.ndarray:
    """Shared smooth anatomy template with a mild radial falloff."""
    side = spec.image_side
    rng = np.random.default_rng(spec.texture_seed)
    field_ = rng.normal(0.0, 1.0, (side, side))
    t = torch.from_numpy(field_)[None, None].float()
    for _ in range(6):
        t = F.avg_pool2d(F.pad(t, (2, 2, 2, 2), mode="replicate"), 5, stride=1)
    smooth = t[0, 0].numpy().astype(np.float64)
    smooth = (smooth - smooth.min()) / (smooth.max() - smooth.min())
    img = 0.28 + 0.32 * smooth
    yy, xx = np.mgrid[0:side, 0:side]
    radial = np.sqrt(((yy - side / 2) / side) ** 2 + ((xx - side / 2) / side) ** 2)
    return img * (1.0 - 0.25 * radial)


def render_image(base: np.ndarray, grade: int, spec: SynthSpec,
                 rng: np.random.Generator, confounder: bool = False) -> np.ndarray:
    """One corpus image: template + noise + ``grade`` blobs (+ optional metal)."""
    side = spec.image_side
    les = spec.lesion
    img = base + rng.normal(0.0, spec.noise_sigma, base.shape)
    yy, xx = np.mgrid[0:side, 0:side]
    r_lo, r_hi = les.radius_frac_range[0] * side, les.radius_frac_range[1] * side
    min_sep_sq = (les.min_separation_factor * r_hi) ** 2
    centers: list[tuple[float, float]] = []
    for _ in range(grade):
        cy = cx = 0.0
        for _attempt in range(60):
            cy = rng.uniform(les.band[0] * side, les.band[1] * side)
            cx = rng.uniform(0.08 * side, 0.92 * side)
            if all((cy - a) ** 2 + (cx - b) ** 2 > min_sep_sq for a, b in centers):
                break
        centers.append((cy, cx))
        radius = rng.uniform(r_lo, r_hi)
        contrast = rng.uniform(*les.contrast_range)
        if rng.random() < 0.5:
            contrast = -contrast
        img = img + contrast * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
    img = np.clip(img, 0.02, ANATOMY_CEILING)
    if confounder:
        w = int(rng.uniform(*spec.metal_side_frac_range) * side)
        h = int(rng.uniform(*spec.metal_side_frac_range) * side)
        y0 = int(rng.integers(0, side - h + 1))
        x0 = int(rng.integers(0, side - w + 1))
        img[y0:y0 + h, x0:x0 + w] = rng.uniform(*spec.metal_intensity_range)
    return img


def _image_plan(spec: SynthSpec, seed: int) -> list[dict]:
    """Fixed enumeration of every image to generate: id, grade, pool, flags."""
    plan = []
    for k in range(spec.normal_pool):
        plan.append({"id": f"normal_{k:04d}", "grade": 0, "pool": "normal", "confounder": False})
    conf_rng = np.random.default_rng([seed, 990_001])
    for g in sorted(spec.unlabeled_per_grade):
        count = spec.unlabeled_per_grade[g]
        confounded: set[int] = set()
        if g == 0 and count > 0 and spec.confounder_fraction > 0:
            n_conf = int(round(spec.confounder_fraction * count))
            confounded = set(conf_rng.permutation(count)[:n_conf].tolist())
        for k in range(count):
            plan.append({"id": f"unl_g{g}_{k:04d}", "grade": g, "pool": "unlabeled",
                         "confounder": k in confounded})
    for g in sorted(spec.test_per_grade):
        for k in range(spec.test_per_grade[g]):
            plan.append({"id": f"test_g{g}_{k:04d}", "grade": g, "pool": "test",
                         "confounder": False})
    return plan


def generate(spec: SynthSpec, seed: int, out_dir: Path) -> dict:
    """Write the corpus to ``out_dir``; returns a summary manifest."""
    spec.validate()
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {images_dir}: {exc}") from exc

    base = base_texture(spec)
    plan = _image_plan(spec, seed)
    for index, entry in enumerate(plan):
        rng = np.random.default_rng([seed, index])
        img = render_image(base, entry["grade"], spec, rng, confounder=entry["confounder"])
        write_image(images_dir / f"{entry['id']}.png", img)

    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "grade"])
        for entry in plan:
            writer.writerow([entry["id"], entry["grade"]])

    with open(out_dir / "meta.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "grade", "pool", "confounder", "lesion_count"])
        for entry in plan:
            writer.writerow([entry["id"], entry["grade"], entry["pool"],
                             "true" if entry["confounder"] else "false", entry["grade"]])

    split = {
        "normal_count": spec.split_normal_count,
        "normal_seed": 0,
        "unlabeled_ids": [e["id"] for e in plan if e["pool"] == "unlabeled"],
        "test_ids": [e["id"] for e in plan if e["pool"] == "test"],
    }
    with open(out_dir / "split.json", "w") as fh:
        json.dump(split, fh, indent=1)

    return {
        "images": len(plan),
        "normal_pool": spec.normal_pool,
        "unlabeled": sum(spec.unlabeled_per_grade.values()),
        "test": sum(spec.test_per_grade.values()),
        "confounded": sum(1 for e in plan if e["confounder"]),
        "out_dir": str(out_dir),
    }
