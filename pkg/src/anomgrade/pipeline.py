"""Stage orchestration: each CLI subcommand maps to one function here.

Per-seed artifacts live under ``<run_dir>/seed_<seed>/`` in ``checkpoints/``,
``banks/``, ``scores/``, ``metrics/``, ``trace/`` and ``pseudo/``; aggregate
outputs (metrics, report, plots) live at the top of the run directory. Every
artifact embeds the digest of the resolved run config, and stages raise
OrderingError naming the missing prerequisite when invoked out of order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts, metrics, scoring, synth, training
from .config import SCORER_MOCK, RunConfig
from .data import load_dataset, load_labels
from .errors import ArtifactError, OrderingError, TrainingError
from .pseudo import BrightArtifactScorer, ClipStatementScorer, denoise, select_candidates

PRETRAIN = training.PRETRAIN
RETRAIN = training.RETRAIN


def _paths(cfg: RunConfig, seed: int) -> dict[str, Path]:
    d = cfg.seed_dir(seed)
    return {
        "checkpoint_pretrain": d / "checkpoints" / "pretrain.pt",
        "checkpoint_retrain": d / "checkpoints" / "retrain.pt",
        "bank_pretrain": d / "banks" / "pretrain.npz",
        "bank_retrain": d / "banks" / "retrain.npz",
        "scores_pretrain_test": d / "scores" / "pretrain_test.csv",
        "scores_retrain_test": d / "scores" / "retrain_test.csv",
        "scores_unlabeled": d / "scores" / "pretrain_unlabeled.csv",
        "metrics_pretrain": d / "metrics" / "pretrain.json",
        "metrics_retrain": d / "metrics" / "retrain.json",
        "trace_pretrain": d / "trace" / "pretrain.jsonl",
        "trace_retrain": d / "trace" / "retrain.jsonl",
        "denoise_audit": d / "pseudo" / "denoise_audit.csv",
        "denoised_ids": d / "pseudo" / "denoised_ids.txt",
    }


def _require(path: Path, prior: str) -> Path:
    if not path.is_file():
        raise OrderingError(f"missing {path}; run `{prior}` first")
    return path


def _write_config_snapshot(cfg: RunConfig) -> None:
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = dict(cfg.to_dict())
    snapshot["config_digest"] = cfg.digest()
    with open(run_dir / "config.json", "w") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True)
        fh.write("\n")


def make_scorer(cfg: RunConfig):
    if cfg.scorer == SCORER_MOCK:
        return BrightArtifactScorer()
    return ClipStatementScorer(cfg.scorer_model_path)


def stage_synth(cfg: RunConfig, corpus_seed: int = 0) -> dict:
    manifest = synth.generate(cfg.synth, corpus_seed, cfg.dataset_root)
    print(f"synth: wrote {manifest['images']} images to {manifest['out_dir']} "
          f"({manifest['confounded']} confounded)")
    return manifest


def stage_pretrain(cfg: RunConfig, seed: int) -> None:
    p = _paths(cfg, seed)
    split = load_dataset(cfg.dataset_root, cfg.split_spec, normal_seed=seed)
    config = replace(cfg.train_pretrain, seed=seed)
    result = training.pretrain(split.normals, cfg.backbone_pretrain, cfg.augment,
                               config, cfg.preprocess, cfg.sw)
    digest = cfg.digest()
    artifacts.save_checkpoint(p["checkpoint_pretrain"], result, digest)
    artifacts.write_trace(p["trace_pretrain"], result.trace)
    bank = scoring.build_reference_bank(result.model, split.normals, cfg.preprocess, cfg.sw)
    artifacts.save_bank(p["bank_pretrain"], bank, digest)
    print(f"[seed {seed}] pretrain: {config.epochs} epochs, "
          f"loss {result.epoch_losses[0]:.4f} -> {result.epoch_losses[-1]:.4f}, "
          f"baseline {bank.baseline:.4f}")


def _load_stage_model(cfg: RunConfig, seed: int, stage: str):
    p = _paths(cfg, seed)
    ckpt = _require(p[f"checkpoint_{stage}"], stage)
    bank_path = _require(p[f"bank_{stage}"], stage)
    extractor, meta = artifacts.load_checkpoint(ckpt)
    bank = artifacts.load_bank(bank_path)
    return extractor, bank, meta


def stage_score(cfg: RunConfig, seed: int, stage: str = PRETRAIN) -> None:
    if stage not in (PRETRAIN, RETRAIN):
        raise ValueError(f"stage must be {PRETRAIN!r} or {RETRAIN!r}")
    p = _paths(cfg, seed)
    extractor, bank, _ = _load_stage_model(cfg, seed, stage)
    split = load_dataset(cfg.dataset_root, cfg.split_spec, normal_seed=seed)
    records = scoring.score_batch(bank, split.test, extractor, cfg.preprocess)
    artifacts.write_scores(p[f"scores_{stage}_test"], records, cfg.digest())
    print(f"[seed {seed}] score ({stage}): {len(records)} test images")


def stage_pseudo_label(cfg: RunConfig, seed: int) -> None:
    p = _paths(cfg, seed)
    extractor, bank, _ = _load_stage_model(cfg, seed, PRETRAIN)
    split = load_dataset(cfg.dataset_root, cfg.split_spec, normal_seed=seed)
    records = scoring.score_batch(bank, split.unlabeled, extractor, cfg.preprocess)
    selected = {r.id for r in select_candidates(records, bank.baseline)}
    flagged = [replace(r, pseudo_candidate=r.id in selected) for r in records]
    artifacts.write_scores(p["scores_unlabeled"], flagged, cfg.digest())
    print(f"[seed {seed}] pseudo-label: {len(selected)}/{len(records)} above "
          f"2x baseline ({2 * bank.baseline:.4f})")


def stage_denoise(cfg: RunConfig, seed: int) -> None:
    p = _paths(cfg, seed)
    score_path = _require(p["scores_unlabeled"], "pseudo-label")
    records = artifacts.read_scores(score_path)
    split = load_dataset(cfg.dataset_root, cfg.split_spec, normal_seed=seed)
    images = {im.id: im for im in split.unlabeled}
    candidates = [r for r in records if r.pseudo_candidate]
    result = denoise(candidates, images, make_scorer(cfg), cfg.statement_dictionary())

    removed = {r.id: r.denoise_removed for r in result.records}
    updated = [replace(r, denoise_removed=removed.get(r.id, False)) for r in records]
    artifacts.write_scores(score_path, updated, cfg.digest())

    p["denoised_ids"].parent.mkdir(parents=True, exist_ok=True)
    kept_ids = [im.id for im in result.kept]
    p["denoised_ids"].write_text("".join(f"{i}\n" for i in kept_ids))
    with open(p["denoise_audit"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "statement", "score", "z_score", "removed"])
        for row in result.audit:
            writer.writerow([row.image_id, row.statement, repr(row.score),
                             repr(row.z_score), "true" if row.removed else "false"])
    n_removed = sum(1 for r in result.records if r.denoise_removed)
    print(f"[seed {seed}] denoise ({result.mode}): removed {n_removed}/{len(candidates)}, "
          f"|X_d| = {len(kept_ids)}")


def stage_retrain(cfg: RunConfig, seed: int) -> None:
    p = _paths(cfg, seed)
    ids_path = _require(p["denoised_ids"], "denoise")
    denoised_ids = [line.strip() for line in ids_path.read_text().splitlines() if line.strip()]
    if not denoised_ids:
        raise TrainingError("denoised pool is empty; skip the retraining stage")
    split = load_dataset(cfg.dataset_root, cfg.split_spec, normal_seed=seed)
    by_id = {im.id: im for im in split.unlabeled}
    denoised = [by_id[i] for i in denoised_ids]
    config = replace(cfg.train_retrain, seed=seed)
    result = training.retrain(split.normals, denoised, cfg.backbone_retrain,
                              config, cfg.preprocess, cfg.sw)
    digest = cfg.digest()
    artifacts.save_checkpoint(p["checkpoint_retrain"], result, digest)
    artifacts.write_trace(p["trace_retrain"], result.trace)
    bank = scoring.build_reference_bank(result.model, split.normals, cfg.preprocess, cfg.sw)
    artifacts.save_bank(p["bank_retrain"], bank, digest)
    print(f"[seed {seed}] retrain: {config.epochs} epochs on {len(denoised)} pseudo labels, "
          f"loss {result.epoch_losses[0]:.4f} -> {result.epoch_losses[-1]:.4f}")


def stage_evaluate(cfg: RunConfig, seed: int, stage: str = PRETRAIN) -> metrics.MetricReport:
    p = _paths(cfg, seed)
    score_path = _require(p[f"scores_{stage}_test"], f"score --stage {stage}")
    records = artifacts.read_scores(score_path)
    graded = [(r.score, r.grade) for r in records if r.grade is not None]
    scores = [s for s, _ in graded]
    grades = [g for _, g in graded]
    report = metrics.MetricReport(
        srcc=metrics.srcc(scores, grades),
        auc_g4=metrics.auc_grade4(scores, grades),
        n_test=len(graded), seed=seed)
    payload = report.to_dict()
    payload["stage"] = stage
    payload["config_digest"] = cfg.digest()
    p[f"metrics_{stage}"].parent.mkdir(parents=True, exist_ok=True)
    with open(p[f"metrics_{stage}"], "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"[seed {seed}] evaluate ({stage}): SRCC={report.srcc:.4f} "
          f"AUC_g4={report.auc_g4:.4f} (n={report.n_test})")
    return report


def _collect_reports(cfg: RunConfig, stage: str, force: bool) -> list[metrics.MetricReport]:
    reports = []
    digest = cfg.digest()
    for seed in cfg.seeds:
        path = _paths(cfg, seed)[f"metrics_{stage}"]
        if not path.is_file():
            continue
        with open(path) as fh:
            d = json.load(fh)
        if not force and d.get("config_digest") != digest:
            raise ArtifactError(
                f"{path} was produced under a different config "
                f"(digest {d.get('config_digest', '')[:12]}...); rerun or use --force")
        reports.append(metrics.MetricReport(srcc=d["srcc"], auc_g4=d["auc_g4"],
                                            n_test=d["n_test"], seed=d["seed"]))
    return reports


def _pooled_scores(cfg: RunConfig, stage: str) -> tuple[list[float], list[int]]:
    scores: list[float] = []
    grades: list[int] = []
    for seed in cfg.seeds:
        path = _paths(cfg, seed)[f"scores_{stage}_test"]
        if not path.is_file():
            continue
        for r in artifacts.read_scores(path):
            if r.grade is not None:
                scores.append(r.score)
                grades.append(r.grade)
    return scores, grades


def _roc_points(scores: list[float], grades: list[int]) -> tuple[list[float], list[float]]:
    s = np.asarray(scores)
    positive = np.asarray(grades) == metrics.SEVERE_GRADE
    order = np.argsort(-s, kind="mergesort")
    tps = np.cumsum(positive[order])
    fps = np.cumsum(~positive[order])
    tpr = (tps / max(int(positive.sum()), 1)).tolist()
    fpr = (fps / max(int((~positive).sum()), 1)).tolist()
    return [0.0] + fpr, [0.0] + tpr


def _render_plots(cfg: RunConfig, stage: str) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scores, grades = _pooled_scores(cfg, stage)
    if not scores:
        return []
    plots_dir = Path(cfg.run_dir) / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    out = []

    fig, ax = plt.subplots(figsize=(6, 4))
    per_grade = [[s for s, g in zip(scores, grades) if g == k] for k in range(5)]
    ax.boxplot([p or [np.nan] for p in per_grade], tick_labels=[str(k) for k in range(5)])
    ax.set_xlabel("ground-truth grade")
    ax.set_ylabel("anomaly score")
    ax.set_title(f"score distribution by grade ({stage})")
    path = plots_dir / f"score_by_grade_{stage}.png"
    fig.tight_layout(); fig.savefig(path, dpi=120); plt.close(fig)
    out.append(path)

    fig, ax = plt.subplots(figsize=(5, 5))
    fpr, tpr = _roc_points(scores, grades)
    ax.plot(fpr, tpr)
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"ROC, grade 4 vs rest ({stage})")
    path = plots_dir / f"roc_g4_{stage}.png"
    fig.tight_layout(); fig.savefig(path, dpi=120); plt.close(fig)
    out.append(path)
    return out


def _external_column(cfg: RunConfig, baseline_csv: Path) -> dict:
    """Metrics for an externally produced score file (columns id,score)."""
    grades_by_id = load_labels(cfg.dataset_root)
    scores, grades = [], []
    with open(baseline_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            g = grades_by_id.get(row["id"])
            if g is not None:
                scores.append(float(row["score"]))
                grades.append(g)
    return {"srcc": metrics.srcc(scores, grades),
            "auc_g4": metrics.auc_grade4(scores, grades),
            "n": len(scores), "source": str(baseline_csv)}


def stage_report(cfg: RunConfig, baseline_csv: Path | None = None,
                 force: bool = False) -> dict:
    run_dir = Path(cfg.run_dir)
    aggregate: dict = {"config_digest": cfg.digest(), "stages": {}}
    lines = ["stage        AUC_g4 (%)      SRCC", "-" * 40]
    for stage in (PRETRAIN, RETRAIN):
        reports = _collect_reports(cfg, stage, force)
        if len(reports) >= 2:
            agg = metrics.multi_seed_report(reports)
            formatted = metrics.format_aggregate(agg)
            aggregate["stages"][stage] = {"aggregate": agg, "formatted": formatted}
            lines.append(f"{stage:<12} {formatted['auc_g4']:<15} {formatted['srcc']}")
        elif len(reports) == 1:
            r = reports[0]
            aggregate["stages"][stage] = {"single": r.to_dict()}
            lines.append(f"{stage:<12} {100 * r.auc_g4:<15.1f} {r.srcc:.2f}")
    if not aggregate["stages"]:
        raise OrderingError("no metrics found under the run directory; run `evaluate` first")
    if baseline_csv is not None:
        ext = _external_column(cfg, baseline_csv)
        aggregate["external"] = ext
        lines.append(f"{'external':<12} {100 * ext['auc_g4']:<15.1f} {ext['srcc']:.2f}")

    metrics_dir = run_dir / "metrics"
    metrics_dir.mkdir(parents=True, exist_ok=True)
    with open(metrics_dir / "aggregate.json", "w") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = "\n".join(lines) + "\n"
    (run_dir / "report.txt").write_text(table)
    for stage in (PRETRAIN, RETRAIN):
        _render_plots(cfg, stage)
    print(table, end="")
    return aggregate


def run_pipeline(cfg: RunConfig) -> dict:
    """The full sequence per seed, then the aggregate report."""
    _write_config_snapshot(cfg)
    for seed in cfg.seeds:
        stage_pretrain(cfg, seed)
        stage_score(cfg, seed, PRETRAIN)
        stage_evaluate(cfg, seed, PRETRAIN)
        stage_pseudo_label(cfg, seed)
        stage_denoise(cfg, seed)
        try:
            stage_retrain(cfg, seed)
        except TrainingError as exc:
            print(f"[seed {seed}] retrain skipped: {exc}")
            continue
        stage_score(cfg, seed, RETRAIN)
        stage_evaluate(cfg, seed, RETRAIN)
    return stage_report(cfg)
