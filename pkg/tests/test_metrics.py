from __future__ import annotations

import numpy as np
import pytest

from anomgrade.errors import MetricError
from anomgrade.metrics import (MetricReport, auc_grade4, format_aggregate,
                               multi_seed_report, srcc)


def oracle_midranks(values) -> list[float]:
    """Counting oracle: rank = #smaller + (#equal + 1) / 2."""
    out = []
    for v in values:
        smaller = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        out.append(smaller + (equal + 1) / 2.0)
    return out


def oracle_pearson(x, y) -> float:
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    dx = sum((a - mx) ** 2 for a in x) ** 0.5
    dy = sum((b - my) ** 2 for b in y) ** 0.5
    return num / (dx * dy)


def oracle_srcc(scores, grades) -> float:
    return oracle_pearson(oracle_midranks(scores), oracle_midranks(grades))


def oracle_auc(scores, grades) -> float:
    pos = [s for s, g in zip(scores, grades) if g == 4]
    neg = [s for s, g in zip(scores, grades) if g != 4]
    wins = sum(1.0 if p > n else (0.5 if p == n else 0.0) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestSrcc:
    def test_perfect_monotone(self):
        assert srcc([0.1, 0.2, 0.3], [0, 1, 2]) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_antitone(self):
        assert srcc([0.3, 0.2, 0.1], [0, 1, 2]) == pytest.approx(-1.0, abs=1e-12)

    def test_tied_grades_match_midrank_oracle(self):
        scores, grades = [1, 2, 3, 4], [0, 0, 1, 1]
        assert srcc(scores, grades) == pytest.approx(oracle_srcc(scores, grades), abs=1e-12)

    def test_zero_variance_reported_not_silently_zero(self):
        with pytest.raises(MetricError, match="variance"):
            srcc([0.1, 0.2, 0.3], [2, 2, 2])

    def test_too_short_rejected(self):
        with pytest.raises(MetricError):
            srcc([0.1], [1])


class TestAucGrade4:
    def test_perfect_separation(self):
        scores = [0.9, 0.8, 0.1, 0.2, 0.3]
        grades = [4, 4, 0, 1, 3]
        assert auc_grade4(scores, grades) == pytest.approx(1.0)

    def test_inverted_separation(self):
        scores = [0.1, 0.2, 0.9, 0.8, 0.7]
        grades = [4, 4, 0, 1, 3]
        assert auc_grade4(scores, grades) == pytest.approx(0.0)

    def test_hand_counted_ties(self):
        # positives (grade 4): 0.9, 0.5; negatives: 0.5, 0.1
        # pairs: (0.9,0.5)=1, (0.9,0.1)=1, (0.5,0.5)=0.5, (0.5,0.1)=1 -> 3.5/4
        scores = [0.9, 0.5, 0.5, 0.1]
        grades = [4, 4, 1, 0]
        assert auc_grade4(scores, grades) == pytest.approx(0.875, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(MetricError):
            auc_grade4([0.1, 0.2], [4, 4])
        with pytest.raises(MetricError):
            auc_grade4([0.1, 0.2], [1, 2])

    def test_rank_formula_path_matches_pairwise_counting(self):
        rng = np.random.default_rng(0)
        n = 10_001  # crosses into the rank-based branch
        scores = np.round(rng.random(n), 2)  # heavy ties
        grades = rng.integers(0, 5, size=n)
        fast = auc_grade4(scores, grades)
        pos = scores[grades == 4]
        neg = scores[grades != 4]
        greater = (pos[:, None] > neg[None, :]).sum()
        equal = (pos[:, None] == neg[None, :]).sum()
        exact = (greater + 0.5 * equal) / (len(pos) * len(neg))
        assert fast == pytest.approx(float(exact), abs=1e-12)


class TestOracleEquivalence:
    def test_hundred_random_tied_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(5, 31))
            scores = np.round(rng.random(n), 1).tolist()  # induce score ties too
            grades = rng.integers(0, 5, size=n).tolist()
            if len(set(grades)) < 2:
                grades[0] = (grades[0] + 1) % 5
            assert srcc(scores, grades) == pytest.approx(
                oracle_srcc(scores, grades), abs=1e-9)
            if any(g == 4 for g in grades) and any(g != 4 for g in grades):
                assert auc_grade4(scores, grades) == pytest.approx(
                    oracle_auc(scores, grades), abs=1e-9)

    def test_monotone_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(6, 25))
            scores = rng.random(n)
            grades = rng.integers(0, 5, size=n)
            if len(set(grades.tolist())) < 2:
                grades[0] = (grades[0] + 1) % 5
            transformed = np.exp(3.0 * scores) + 7.0
            assert srcc(scores, grades) == pytest.approx(
                srcc(transformed, grades), abs=1e-9)
            if (grades == 4).any() and (grades != 4).any():
                assert auc_grade4(scores, grades) == pytest.approx(
                    auc_grade4(transformed, grades), abs=1e-9)

    def test_antisymmetry_under_negation(self):
        rng = np.random.default_rng(3)
        scores = rng.random(30)
        grades = rng.integers(0, 5, size=30)
        grades[:3] = 4
        grades[3:6] = 0
        assert srcc(-scores, grades) == pytest.approx(-srcc(scores, grades), abs=1e-9)
        assert auc_grade4(-scores, grades) == pytest.approx(
            1.0 - auc_grade4(scores, grades), abs=1e-9)

    def test_ranges(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n = int(rng.integers(5, 40))
            scores = np.round(rng.random(n), 1)
            grades = rng.integers(0, 5, size=n)
            if len(set(grades.tolist())) < 2:
                continue
            assert -1.0 - 1e-12 <= srcc(scores, grades) <= 1.0 + 1e-12
            if (grades == 4).any() and (grades != 4).any():
                assert 0.0 <= auc_grade4(scores, grades) <= 1.0


class TestMultiSeedReport:
    def _reports(self, srcc_values, auc=0.9):
        return [MetricReport(srcc=v, auc_g4=auc, n_test=100, seed=k)
                for k, v in enumerate(srcc_values)]

    def test_identical_runs(self):
        agg = multi_seed_report(self._reports([0.4, 0.4]))
        assert agg["srcc"]["mean"] == pytest.approx(0.40)
        assert agg["srcc"]["std"] == pytest.approx(0.0)
        assert format_aggregate(agg)["srcc"] == "0.40±0.00"

    def test_sample_standard_deviation(self):
        agg = multi_seed_report(self._reports([0.3, 0.5]))
        assert agg["srcc"]["mean"] == pytest.approx(0.40)
        assert agg["srcc"]["std"] == pytest.approx(0.14142135, abs=1e-6)

    def test_single_report_rejected(self):
        with pytest.raises(ValueError):
            multi_seed_report(self._reports([0.4]))

    def test_auc_formatted_as_percentage(self):
        agg = multi_seed_report(self._reports([0.3, 0.5], auc=0.866))
        assert format_aggregate(agg)["auc_g4"] == "86.6±0.0"
