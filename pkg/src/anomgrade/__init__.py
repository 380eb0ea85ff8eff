"""Few-shot continuous severity grading via patch-level anomaly scoring.

Learns a compact patch representation of "normal" images from a handful of
examples, scores new images by their distance to that representation, and
bootstraps itself with thresholded, statement-denoised pseudo labels. The
output is a continuous severity score validated by rank correlation against
ordinal ground truth.
"""

__version__ = "0.1.0"

from .augment import AugmentParams, AnomTransform, NormTransform, make_training_pair
from .backbone import BackboneSpec, FeatureExtractor, build_backbone, extract
from .config import RunConfig, load_config
from .data import DatasetSplit, GradedImage, PreprocessSpec, load_dataset, preprocess
from .metrics import MetricReport, auc_grade4, multi_seed_report, srcc
from .patches import PatchEmbeddingMap, patch_count, to_patch_embedding_map
from .pseudo import StatementDictionary, denoise, select_candidates
from .scoring import ReferenceBank, ScoreRecord, anomaly_score, build_reference_bank, score_batch
from .synth import SynthSpec
from .synth import generate as generate_corpus
from .training import TrainConfig, bce_patch_loss, patchwise_cosine, pretrain, retrain

__all__ = [
    "AugmentParams", "AnomTransform", "NormTransform", "make_training_pair",
    "BackboneSpec", "FeatureExtractor", "build_backbone", "extract",
    "RunConfig", "load_config",
    "DatasetSplit", "GradedImage", "PreprocessSpec", "load_dataset", "preprocess",
    "MetricReport", "auc_grade4", "multi_seed_report", "srcc",
    "PatchEmbeddingMap", "patch_count", "to_patch_embedding_map",
    "StatementDictionary", "denoise", "select_candidates",
    "ReferenceBank", "ScoreRecord", "anomaly_score", "build_reference_bank", "score_batch",
    "SynthSpec", "generate_corpus",
    "TrainConfig", "bce_patch_loss", "patchwise_cosine", "pretrain", "retrain",
]
