"""Persistence for checkpoints, reference banks, score tables, and traces.

Every artifact records a format version and the digest of the run config
that produced it. Restoring an artifact written by an incompatible format
(or from a truncated/empty file) raises ArtifactError rather than guessing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backbone import BackboneSpec, FeatureExtractor, rebuild_from_state
from .errors import ArtifactError
from .patches import PatchEmbeddingMap
from .scoring import ReferenceBank, ScoreRecord
from .training import TraceRecord, TrainConfig, TrainResult

CHECKPOINT_FORMAT = 1
BANK_FORMAT = 1


def save_checkpoint(path: Path, result: TrainResult, config_digest: str = "") -> None:
    payload = {
        "kind": "checkpoint",
        "format_version": CHECKPOINT_FORMAT,
        "backbone": result.backbone_spec.to_dict(),
        "train_config": result.config.to_dict(),
        "state_dict": result.model.layers.state_dict(),
        "weight_hash": result.model.weight_hash,
        "init_weight_hash": result.init_weight_hash,
        "epoch_losses": list(result.epoch_losses),
        "config_digest": config_digest,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: Path) -> tuple[FeatureExtractor, dict]:
    """Rebuild the extractor from a checkpoint; returns (extractor, metadata)."""
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing checkpoint: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ArtifactError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != "checkpoint":
        raise ArtifactError(f"{path} is not a checkpoint artifact")
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ArtifactError(
            f"checkpoint {path} has format {payload.get('format_version')}, "
            f"expected {CHECKPOINT_FORMAT}")
    spec = BackboneSpec.from_dict(payload["backbone"])
    extractor = rebuild_from_state(spec, payload["state_dict"])
    if extractor.weight_hash != payload["weight_hash"]:
        raise ArtifactError(f"checkpoint {path} failed its weight-hash integrity check")
    meta = {k: payload[k] for k in ("train_config", "epoch_losses", "config_digest",
                                    "weight_hash", "init_weight_hash")}
    meta["backbone"] = payload["backbone"]
    return extractor, meta


def save_bank(path: Path, bank: ReferenceBank, config_digest: str = "") -> None:
    bank.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        format_version=np.int64(BANK_FORMAT),
        maps=np.stack([m.values for m in bank.maps]).astype(np.float32),
        ids=np.array([m.source_id for m in bank.maps]),
        sw=np.int64(bank.sw),
        baseline=np.float64(bank.baseline),
        model_ref=np.str_(bank.model_ref),
        config_digest=np.str_(config_digest),
    )


def load_bank(path: Path) -> ReferenceBank:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing reference bank: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            if int(z["format_version"]) != BANK_FORMAT:
                raise ArtifactError(
                    f"bank {path} has format {int(z['format_version'])}, expected {BANK_FORMAT}")
            stacked = z["maps"]
            ids = [str(s) for s in z["ids"]]
            sw = int(z["sw"])
            baseline = float(z["baseline"])
            model_ref = str(z["model_ref"])
    except ArtifactError:
        raise
    except Exception as exc:
        raise ArtifactError(f"unreadable reference bank {path}: {exc}") from exc
    maps = [PatchEmbeddingMap(values=stacked[k], sw=sw, source_id=ids[k])
            for k in range(stacked.shape[0])]
    bank = ReferenceBank(maps=maps, baseline=baseline, model_ref=model_ref, sw=sw)
    bank.validate()
    return bank


SCORE_HEADER = ["id", "score", "grade", "pseudo_candidate", "denoise_removed"]


def write_scores(path: Path, records: Sequence[ScoreRecord], config_digest: str = "") -> None:
    """Score table CSV; floats use repr so the table round-trips exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if config_digest:
            fh.write(f"# config_digest={config_digest}\n")
        writer = csv.writer(fh)
        writer.writerow(SCORE_HEADER)
        for r in records:
            writer.writerow([
                r.id,
                repr(float(r.score)),
                "" if r.grade is None else r.grade,
                "true" if r.pseudo_candidate else "false",
                "true" if r.denoise_removed else "false",
            ])


def read_scores(path: Path) -> list[ScoreRecord]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing score table: {path}")
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines:
        raise ArtifactError(f"score table {path} is empty")
    reader = csv.DictReader(lines)
    if reader.fieldnames != SCORE_HEADER:
        raise ArtifactError(f"score table {path} has header {reader.fieldnames}, "
                            f"expected {SCORE_HEADER}")
    records = []
    for row in reader:
        records.append(ScoreRecord(
            id=row["id"],
            score=float(row["score"]),
            grade=int(row["grade"]) if row["grade"] else None,
            pseudo_candidate=row["pseudo_candidate"] == "true",
            denoise_removed=row["denoise_removed"] == "true",
        ))
    return records


def score_table_digest(path: Path) -> str:
    """The config digest recorded in a score table, if any."""
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# config_digest="):
        return first[len("# config_digest="):].strip()
    return ""


def write_trace(path: Path, trace: Sequence[TraceRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def read_trace(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
