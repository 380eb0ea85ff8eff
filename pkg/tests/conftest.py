from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from anomgrade.config import config_from_dict
from anomgrade.data import GradedImage
from anomgrade.synth import SynthSpec, generate


def micro_config_dict(dataset_root: str, run_dir: str, seeds: list[int]) -> dict:
    """A pipeline config small enough for unit tests (side 64, 2 epochs)."""
    train_common = {"batch_size": 8, "learning_rate": 1e-4, "optimizer": "adam",
                    "seed": 0, "clamp_epsilon": 1e-6, "anomaly_pair_fraction": 0.5}
    return {
        "dataset_root": dataset_root,
        "split_spec": f"{dataset_root}/split.json",
        "run_dir": run_dir,
        "seeds": seeds,
        "sw": 3,
        "preprocess": {"target_side": 64},
        "train": {"pretrain": {"stage": "pretrain", "epochs": 2, **train_common},
                  "retrain": {"stage": "retrain", "epochs": 2, **train_common}},
        "synth": {"image_side": 64, "normal_pool": 40,
                  "unlabeled_per_grade": {"0": 40, "1": 10, "2": 10, "3": 10, "4": 10},
                  "test_per_grade": {"0": 10, "1": 10, "2": 10, "3": 10, "4": 10},
                  "split_normal_count": 10},
    }


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory) -> Path:
    """Small synthetic corpus shared by data/CLI tests."""
    root = tmp_path_factory.mktemp("micro_corpus")
    spec = SynthSpec.from_dict(micro_config_dict("x", "y", [1])["synth"])
    generate(spec, seed=0, out_dir=root)
    return root


@pytest.fixture(scope="session")
def micro_cfg_factory(micro_corpus, tmp_path_factory):
    def factory(seeds=(1,), name="run"):
        run_dir = tmp_path_factory.mktemp(name)
        return config_from_dict(
            micro_config_dict(str(micro_corpus), str(run_dir), list(seeds)))
    return factory


def random_graded_image(rng: np.random.Generator, side: int = 32,
                        image_id: str = "img", grade: int | None = None) -> GradedImage:
    pixels = rng.random((side, side)).astype(np.float32)
    return GradedImage(id=image_id, pixels=pixels, grade=grade)
