from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import pytest
import torch

from anomgrade.data import (GradedImage, PreprocessSpec, load_dataset, normalize,
                            preprocess, to_model_intensity, write_image)
from anomgrade.errors import CapacityError, LoadError, ValidationError

IDENTITY_NORM = PreprocessSpec(target_side=64, mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))


def _write_corpus(root: Path, n_grade0: int = 100, n_graded: int = 10) -> None:
    (root / "images").mkdir(parents=True)
    rng = np.random.default_rng(0)
    rows = []
    for k in range(n_grade0):
        image_id = f"g0_{k:03d}"
        write_image(root / "images" / f"{image_id}.png", rng.random((32, 32)))
        rows.append((image_id, 0))
    for k in range(n_graded):
        image_id = f"g3_{k:03d}"
        write_image(root / "images" / f"{image_id}.png", rng.random((32, 32)))
        rows.append((image_id, 3))
    with open(root / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "grade"])
        writer.writerows(rows)


def _split_spec(n: int = 30, seed: int = 1) -> dict:
    return {"normal_count": n, "normal_seed": seed,
            "test_ids": [f"g3_{k:03d}" for k in range(5)],
            "unlabeled_ids": [f"g3_{k:03d}" for k in range(5, 10)]}


class TestLoadDataset:
    def test_seeded_sampling_returns_n_unique_grade0_ids(self, tmp_path):
        _write_corpus(tmp_path)
        split = load_dataset(tmp_path, _split_spec(n=30, seed=1))
        assert len(split.normals) == 30
        assert len({im.id for im in split.normals}) == 30
        assert all(im.grade == 0 for im in split.normals)

    def test_sampling_is_repeatable_across_calls(self, tmp_path):
        _write_corpus(tmp_path)
        a = load_dataset(tmp_path, _split_spec(seed=1))
        b = load_dataset(tmp_path, _split_spec(seed=1))
        assert [im.id for im in a.normals] == [im.id for im in b.normals]

    def test_different_seeds_give_different_sets(self, tmp_path):
        _write_corpus(tmp_path)
        a = load_dataset(tmp_path, _split_spec(seed=1))
        b = load_dataset(tmp_path, _split_spec(seed=2))
        assert len(a.normals) == len(b.normals) == 30
        assert {im.id for im in a.normals} != {im.id for im in b.normals}

    def test_normal_seed_override_wins(self, tmp_path):
        _write_corpus(tmp_path)
        a = load_dataset(tmp_path, _split_spec(seed=1), normal_seed=2)
        b = load_dataset(tmp_path, _split_spec(seed=2))
        assert {im.id for im in a.normals} == {im.id for im in b.normals}

    def test_missing_image_file_names_the_id(self, tmp_path):
        _write_corpus(tmp_path)
        spec = _split_spec()
        spec["test_ids"] = ["g3_000", "missing_id"]
        with pytest.raises((LoadError, ValidationError), match="missing_id"):
            load_dataset(tmp_path, spec)

    def test_duplicate_ids_in_labels_rejected(self, tmp_path):
        _write_corpus(tmp_path)
        with open(tmp_path / "labels.csv", "a", newline="") as fh:
            csv.writer(fh).writerow(["g0_000", 0])
        with pytest.raises(ValidationError, match="duplicate"):
            load_dataset(tmp_path, _split_spec())

    def test_capacity_error_when_n_exceeds_grade0_pool(self, tmp_path):
        _write_corpus(tmp_path, n_grade0=20)
        with pytest.raises(CapacityError):
            load_dataset(tmp_path, _split_spec(n=30))

    def test_splits_are_disjoint(self, tmp_path):
        _write_corpus(tmp_path)
        split = load_dataset(tmp_path, _split_spec())
        ids_n = {im.id for im in split.normals}
        ids_u = {im.id for im in split.unlabeled}
        ids_t = {im.id for im in split.test}
        assert not (ids_n & ids_u) and not (ids_n & ids_t) and not (ids_u & ids_t)

    def test_overlapping_split_lists_rejected(self, tmp_path):
        _write_corpus(tmp_path)
        spec = _split_spec()
        spec["unlabeled_ids"] = spec["test_ids"]
        with pytest.raises(ValidationError, match="overlap"):
            load_dataset(tmp_path, spec)

    def test_malformed_split_spec_rejected(self, tmp_path):
        _write_corpus(tmp_path)
        with pytest.raises(ValidationError, match="unlabeled_ids"):
            load_dataset(tmp_path, {"test_ids": [], "normal_count": 3, "normal_seed": 0})
        with pytest.raises(ValidationError, match="normal"):
            load_dataset(tmp_path, {"test_ids": [], "unlabeled_ids": []})


class TestPreprocess:
    def test_constant_image_stays_constant_under_identity_normalization(self):
        img = GradedImage(id="c", pixels=np.full((50, 70), 0.4, dtype=np.float32))
        out = preprocess(img, IDENTITY_NORM)
        assert out.shape == (3, 64, 64)
        assert torch.allclose(out, torch.full_like(out, 0.4), atol=1e-6)

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(3)
        img = GradedImage(id="d", pixels=rng.random((41, 33)).astype(np.float32))
        a = preprocess(img, PreprocessSpec(target_side=64))
        b = preprocess(img, PreprocessSpec(target_side=64))
        assert torch.equal(a, b)

    def test_output_shape_contract(self):
        img = GradedImage(id="s", pixels=np.random.default_rng(0).random((300, 400)))
        out = preprocess(img, PreprocessSpec(target_side=224))
        assert out.shape == (3, 224, 224)

    def test_channels_identical_before_normalization(self):
        rng = np.random.default_rng(4)
        img = GradedImage(id="ch", pixels=rng.random((64, 64)).astype(np.float32))
        t = to_model_intensity(img, PreprocessSpec(target_side=48))
        assert torch.equal(t[0], t[1]) and torch.equal(t[1], t[2])
        assert float(t.min()) >= 0.0 and float(t.max()) <= 1.0

    def test_degenerate_image_rejected(self):
        img = GradedImage(id="tiny", pixels=np.zeros((7, 30), dtype=np.float32))
        with pytest.raises(ValidationError, match="degenerate"):
            preprocess(img, PreprocessSpec(target_side=64))

    def test_normalization_applies_mean_and_std(self):
        img = GradedImage(id="n", pixels=np.full((64, 64), 0.5, dtype=np.float32))
        spec = PreprocessSpec(target_side=64, mean=(0.5, 0.25, 0.0), std=(1.0, 0.5, 2.0))
        out = preprocess(img, spec)
        assert torch.allclose(out[0], torch.zeros(64, 64), atol=1e-6)
        assert torch.allclose(out[1], torch.full((64, 64), 0.5), atol=1e-6)
        assert torch.allclose(out[2], torch.full((64, 64), 0.25), atol=1e-6)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValidationError):
            PreprocessSpec(target_side=0).validate()
        with pytest.raises(ValidationError):
            PreprocessSpec(std=(1.0, 0.0, 1.0)).validate()


class TestGradedImageInvariants:
    def test_pixels_out_of_range_rejected(self):
        img = GradedImage(id="bad", pixels=np.array([[0.0, 1.5]], dtype=np.float32))
        with pytest.raises(ValidationError):
            img.validate()

    def test_grade_out_of_range_rejected(self):
        img = GradedImage(id="bad", pixels=np.zeros((8, 8), dtype=np.float32), grade=5)
        with pytest.raises(ValidationError):
            img.validate()

    def test_png_round_trip_preserves_values_to_quantization(self, tmp_path):
        from anomgrade.data import read_image
        rng = np.random.default_rng(9)
        pixels = rng.random((16, 16))
        write_image(tmp_path / "x.png", pixels)
        back = read_image(tmp_path / "x.png")
        assert np.abs(back - pixels).max() <= 0.5 / 255 + 1e-9
