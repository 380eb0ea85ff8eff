"""Run configuration: one JSON file drives every pipeline stage.

``default_config()`` produces a complete, self-contained configuration for
the synthetic corpus, which ``anomgrade config init`` writes out for editing.
The digest of the resolved configuration is embedded in every artifact a run
produces; the report stage refuses to aggregate artifacts whose digests
disagree unless forced.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentParams
from .backbone import COMPACT, LARGE, BackboneSpec
from .data import PreprocessSpec
from .errors import ConfigError, LoadError
from .pseudo import DEFAULT_STATEMENTS, StatementDictionary
from .synth import SynthSpec
from .training import PRETRAIN, RETRAIN, TrainConfig

SCORER_MOCK = "mock"
SCORER_PRODUCTION = "production"


@dataclass
class RunConfig:
    dataset_root: Path
    split_spec: Path
    run_dir: Path
    seeds: list[int]
    sw: int = 3
    scorer: str = SCORER_MOCK
    scorer_model_path: Path | None = None
    statement_file: Path | None = None  # None -> built-in default statements
    cutoff_z: float = 2.0
    absolute_cutoff: float = 0.5
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    augment: AugmentParams = field(default_factory=AugmentParams)
    backbone_pretrain: BackboneSpec = field(
        default_factory=lambda: BackboneSpec(architecture=COMPACT, weights_source="random:0"))
    backbone_retrain: BackboneSpec = field(
        default_factory=lambda: BackboneSpec(architecture=LARGE, weights_source="random:1"))
    train_pretrain: TrainConfig = field(
        default_factory=lambda: TrainConfig(stage=PRETRAIN, epochs=30))
    train_retrain: TrainConfig = field(
        default_factory=lambda: TrainConfig(stage=RETRAIN, epochs=20))
    synth: SynthSpec = field(default_factory=SynthSpec)

    def statement_dictionary(self) -> StatementDictionary:
        if self.statement_file is not None:
            return StatementDictionary.from_file(
                self.statement_file, cutoff_z=self.cutoff_z,
                absolute_cutoff=self.absolute_cutoff)
        return StatementDictionary(statements=DEFAULT_STATEMENTS, cutoff_z=self.cutoff_z,
                                   absolute_cutoff=self.absolute_cutoff)

    def seed_dir(self, seed: int) -> Path:
        return Path(self.run_dir) / f"seed_{seed}"

    def to_dict(self) -> dict:
        return {
            "dataset_root": str(self.dataset_root),
            "split_spec": str(self.split_spec),
            "run_dir": str(self.run_dir),
            "seeds": list(self.seeds),
            "sw": self.sw,
            "scorer": self.scorer,
            "scorer_model_path": None if self.scorer_model_path is None
                                 else str(self.scorer_model_path),
            "statement_file": None if self.statement_file is None else str(self.statement_file),
            "cutoff_z": self.cutoff_z,
            "absolute_cutoff": self.absolute_cutoff,
            "preprocess": {"target_side": self.preprocess.target_side,
                           "mean": list(self.preprocess.mean),
                           "std": list(self.preprocess.std)},
            "augment": {"jitter_max_shift": self.augment.jitter_max_shift,
                        "jitter_mode": self.augment.jitter_mode,
                        "jitter_intensity_span": self.augment.jitter_intensity_span,
                        "sharpness_range": list(self.augment.sharpness_range),
                        "brightness_range": list(self.augment.brightness_range),
                        "crop_scale_range": list(self.augment.crop_scale_range),
                        "cutpaste_area_range": list(self.augment.cutpaste_area_range),
                        "cutpaste_aspect_range": list(self.augment.cutpaste_aspect_range)},
            "backbone": {"pretrain": self.backbone_pretrain.to_dict(),
                         "retrain": self.backbone_retrain.to_dict()},
            "train": {"pretrain": self.train_pretrain.to_dict(),
                      "retrain": self.train_retrain.to_dict()},
            "synth": self.synth.to_dict(),
        }

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds: must list at least one seed")
        if self.scorer not in (SCORER_MOCK, SCORER_PRODUCTION):
            raise ConfigError(f"scorer: {self.scorer!r} is not '{SCORER_MOCK}' "
                              f"or '{SCORER_PRODUCTION}'")
        if self.scorer == SCORER_PRODUCTION and self.scorer_model_path is None:
            raise ConfigError("scorer_model_path: required when scorer is 'production'")
        if self.sw < 1:
            raise ConfigError("sw: must be >= 1")
        _wrap("preprocess", self.preprocess.validate)
        _wrap("augment", self.augment.validate)
        _wrap("backbone.pretrain", self.backbone_pretrain.validate)
        _wrap("backbone.retrain", self.backbone_retrain.validate)
        _wrap("train.pretrain", self.train_pretrain.validate)
        _wrap("train.retrain", self.train_retrain.validate)
        _wrap("synth", self.synth.validate)
        if self.train_pretrain.stage != PRETRAIN:
            raise ConfigError("train.pretrain.stage: must be 'pretrain'")
        if self.train_retrain.stage != RETRAIN:
            raise ConfigError("train.retrain.stage: must be 'retrain'")


def _wrap(prefix: str, fn) -> None:
    try:
        fn()
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"{prefix}: {exc}") from exc


def _pick(d: dict, key: str, default, path: str):
    value = d.get(key, default)
    if value is None and default is not None:
        raise ConfigError(f"{path}.{key}: missing required key")
    return value


def config_from_dict(d: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a RunConfig from parsed JSON; relative paths resolve against
    the config file's directory."""
    def as_path(value):
        if value is None:
            return None
        p = Path(value)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        return p

    try:
        pp = d.get("preprocess", {})
        aug = d.get("augment", {})
        bb = d.get("backbone", {})
        tr = d.get("train", {})
        cfg = RunConfig(
            dataset_root=as_path(_pick(d, "dataset_root", None, "config")),
            split_spec=as_path(_pick(d, "split_spec", None, "config")),
            run_dir=as_path(_pick(d, "run_dir", None, "config")),
            seeds=[int(s) for s in d.get("seeds", [])],
            sw=int(d.get("sw", 3)),
            scorer=d.get("scorer", SCORER_MOCK),
            scorer_model_path=as_path(d.get("scorer_model_path")),
            statement_file=as_path(d.get("statement_file")),
            cutoff_z=float(d.get("cutoff_z", 2.0)),
            absolute_cutoff=float(d.get("absolute_cutoff", 0.5)),
            preprocess=PreprocessSpec(
                target_side=int(pp.get("target_side", 224)),
                mean=tuple(pp.get("mean", PreprocessSpec.mean)),
                std=tuple(pp.get("std", PreprocessSpec.std))),
            augment=AugmentParams(
                jitter_max_shift=int(aug.get("jitter_max_shift", 4)),
                jitter_mode=aug.get("jitter_mode", "translate"),
                jitter_intensity_span=float(aug.get("jitter_intensity_span", 0.05)),
                sharpness_range=tuple(aug.get("sharpness_range", (0.8, 1.2))),
                brightness_range=tuple(aug.get("brightness_range", (0.8, 1.2))),
                crop_scale_range=tuple(aug.get("crop_scale_range", (0.6, 0.9))),
                cutpaste_area_range=tuple(aug.get("cutpaste_area_range", (0.02, 0.15))),
                cutpaste_aspect_range=tuple(aug.get("cutpaste_aspect_range", (0.3, 3.3)))),
            backbone_pretrain=BackboneSpec.from_dict(
                bb.get("pretrain", {"architecture": COMPACT, "weights_source": "random:0"})),
            backbone_retrain=BackboneSpec.from_dict(
                bb.get("retrain", {"architecture": LARGE, "weights_source": "random:1"})),
            train_pretrain=TrainConfig.from_dict(
                tr.get("pretrain", TrainConfig(stage=PRETRAIN, epochs=30).to_dict())),
            train_retrain=TrainConfig.from_dict(
                tr.get("retrain", TrainConfig(stage=RETRAIN, epochs=20).to_dict())),
            synth=SynthSpec.from_dict(d.get("synth", {})),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    cfg.validate()
    return cfg


def load_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing config file: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)


def default_config(dataset_root: str = "corpus", run_dir: str = "runs/default",
                   seeds: list[int] | None = None) -> dict:
    """Full-default synthetic-pipeline configuration as a plain dict."""
    cfg = RunConfig(
        dataset_root=Path(dataset_root),
        split_spec=Path(dataset_root) / "split.json",
        run_dir=Path(run_dir),
        seeds=seeds or [1, 2, 3, 4, 5],
        preprocess=PreprocessSpec(target_side=128),
    )
    return cfg.to_dict()


def save_config(path: Path, config: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
