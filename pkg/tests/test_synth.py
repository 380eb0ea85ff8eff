from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np
import pytest

from anomgrade.data import load_dataset, read_image
from anomgrade.synth import SynthSpec, base_texture, generate

TINY = SynthSpec(
    image_side=32, normal_pool=6,
    unlabeled_per_grade={0: 10, 1: 3, 2: 3, 3: 3, 4: 3},
    test_per_grade={g: 3 for g in range(5)},
    confounder_fraction=0.2, split_normal_count=4,
)


def _dir_hash(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("synth")
    generate(TINY, seed=0, out_dir=root)
    return root


def _meta(root: Path) -> list[dict]:
    with open(root / "meta.csv", newline="") as fh:
        return list(csv.DictReader(fh))


class TestDeterminism:
    def test_same_spec_and_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate(TINY, seed=3, out_dir=a)
        generate(TINY, seed=3, out_dir=b)
        assert _dir_hash(a) == _dir_hash(b)

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate(TINY, seed=3, out_dir=a)
        generate(TINY, seed=4, out_dir=b)
        assert _dir_hash(a) != _dir_hash(b)


class TestCorpusStructure:
    def test_labels_cover_every_image_exactly_once(self, corpus):
        with open(corpus / "labels.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        label_ids = [r["id"] for r in rows]
        png_ids = sorted(p.stem for p in (corpus / "images").glob("*.png"))
        assert sorted(label_ids) == png_ids
        assert len(set(label_ids)) == len(label_ids)

    def test_split_loads_into_disjoint_pools(self, corpus):
        split = load_dataset(corpus, corpus / "split.json", normal_seed=1)
        assert len(split.normals) == TINY.split_normal_count
        assert all(im.grade == 0 for im in split.normals)
        assert len(split.unlabeled) == sum(TINY.unlabeled_per_grade.values())
        assert len(split.test) == sum(TINY.test_per_grade.values())

    def test_confounder_count_matches_fraction(self, corpus):
        meta = _meta(corpus)
        confounded = [r for r in meta if r["confounder"] == "true"]
        expected = round(TINY.confounder_fraction * TINY.unlabeled_per_grade[0])
        assert len(confounded) == expected
        assert all(r["pool"] == "unlabeled" and r["grade"] == "0" for r in confounded)


class TestImageContent:
    def test_grade_zero_deviates_from_template_only_by_noise(self, corpus):
        base = base_texture(TINY)
        meta = _meta(corpus)
        clean_g0 = [r for r in meta if r["grade"] == "0" and r["confounder"] == "false"]
        for row in clean_g0[:5]:
            img = read_image(corpus / "images" / f"{row['id']}.png")
            assert np.abs(img - np.clip(base, 0.02, 0.90)).mean() < 3 * TINY.noise_sigma

    def test_confounder_flag_iff_saturated_pixels(self, corpus):
        meta = _meta(corpus)
        for row in meta:
            img = read_image(corpus / "images" / f"{row['id']}.png")
            has_metal = bool((img >= 0.95).any())
            assert has_metal == (row["confounder"] == "true"), row["id"]

    def test_deviation_energy_monotone_in_grade(self, corpus):
        base = np.clip(base_texture(TINY), 0.02, 0.90)
        meta = _meta(corpus)
        mean_dev = {}
        for g in range(5):
            ids = [r["id"] for r in meta
                   if r["grade"] == str(g) and r["confounder"] == "false"]
            devs = [np.abs(read_image(corpus / "images" / f"{i}.png") - base).mean()
                    for i in ids]
            mean_dev[g] = float(np.mean(devs))
        for g in range(4):
            assert mean_dev[g] <= mean_dev[g + 1] + 1e-6

    def test_grade4_deviates_more_than_grade1_for_most_pairs(self, tmp_path):
        spec = SynthSpec(
            image_side=32, normal_pool=2,
            unlabeled_per_grade={1: 20, 4: 20},
            test_per_grade={},
            confounder_fraction=0.0, split_normal_count=2,
        )
        generate(spec, seed=7, out_dir=tmp_path)
        base = np.clip(base_texture(spec), 0.02, 0.90)
        dev = {1: [], 4: []}
        for row in _meta(tmp_path):
            if row["grade"] in ("1", "4"):
                img = read_image(tmp_path / "images" / f"{row['id']}.png")
                dev[int(row["grade"])].append(np.abs(img - base).mean())
        wins = sum(1 for d4 in dev[4] for d1 in dev[1] if d4 > d1)
        assert wins / (len(dev[4]) * len(dev[1])) >= 0.95

    def test_lesion_count_recorded_matches_grade(self, corpus):
        for row in _meta(corpus):
            assert int(row["lesion_count"]) == int(row["grade"])


class TestSpecValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(image_side=8).validate()
        with pytest.raises(ValueError):
            SynthSpec(confounder_fraction=1.0).validate()
        with pytest.raises(ValueError):
            SynthSpec(unlabeled_per_grade={7: 10}).validate()

    def test_round_trip_through_dict(self):
        spec = SynthSpec()
        assert SynthSpec.from_dict(spec.to_dict()) == spec
