"""Rank-correlation and severe-grade detection metrics.

Grades take only five values, so ties dominate; Spearman's coefficient is
therefore computed as the Pearson correlation of midranks (average rank over
each tie group) rather than the tie-free 6*sum(d^2) shortcut. AUC uses the
pairwise-counting definition (ties count one half), which equals the
trapezoidal ROC area; above ``_PAIRWISE_LIMIT`` samples an equivalent
rank-based formula takes over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError

SEVERE_GRADE = 4
_PAIRWISE_LIMIT = 10_000


@dataclass
class MetricReport:
    srcc: float
    auc_g4: float
    n_test: int
    seed: int

    def to_dict(self) -> dict:
        return {"srcc": self.srcc, "auc_g4": self.auc_g4,
                "n_test": self.n_test, "seed": self.seed}


def midranks(values) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    sorted_v = v[order]
    while i < len(v):
        j = i
        while j + 1 < len(v) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(scores, grades) -> float:
    """Spearman rank correlation with midrank tie handling."""
    s = np.asarray(scores, dtype=np.float64)
    g = np.asarray(grades, dtype=np.float64)
    if s.shape != g.shape or s.ndim != 1 or len(s) < 2:
        raise MetricError("srcc needs two equal-length vectors with at least two entries")
    rs = midranks(s)
    rg = midranks(g)
    rs = rs - rs.mean()
    rg = rg - rg.mean()
    denom = np.sqrt((rs * rs).sum() * (rg * rg).sum())
    if denom == 0.0:
        raise MetricError("srcc undefined: a rank vector has zero variance")
    return float((rs * rg).sum() / denom)


def auc_grade4(scores, grades) -> float:
    """P(random severe-grade score > random other score), ties counting half."""
    s = np.asarray(scores, dtype=np.float64)
    g = np.asarray(grades)
    if s.shape != g.shape or s.ndim != 1:
        raise MetricError("auc_grade4 needs two equal-length vectors")
    pos = s[g == SEVERE_GRADE]
    neg = s[g != SEVERE_GRADE]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("auc_grade4 undefined: needs at least one grade-4 "
                          "and one non-grade-4 sample")
    if len(s) <= _PAIRWISE_LIMIT:
        greater = (pos[:, None] > neg[None, :]).sum()
        equal = (pos[:, None] == neg[None, :]).sum()
        return float((greater + 0.5 * equal) / (len(pos) * len(neg)))
    # rank formula; midranks make ties contribute exactly one half
    ranks = midranks(s)
    rank_sum = ranks[g == SEVERE_GRADE].sum()
    n_pos, n_neg = len(pos), len(neg)
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def multi_seed_report(reports: list[MetricReport]) -> dict:
    """Mean and sample standard deviation (n-1) of each metric across seeds."""
    if len(reports) < 2:
        raise ValueError("multi-seed aggregation needs at least two reports")
    out = {"n_seeds": len(reports), "seeds": [r.seed for r in reports]}
    for name in ("srcc", "auc_g4"):
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        mean = float(values.mean())
        std = float(values.std(ddof=1))
        out[name] = {"mean": mean, "std": std, "values": values.tolist()}
    return out


def format_aggregate(aggregate: dict) -> dict[str, str]:
    """Render mean±std strings: SRCC to two decimals, AUC as a percentage."""
    srcc_m = aggregate["srcc"]
    auc_m = aggregate["auc_g4"]
    return {
        "srcc": f"{srcc_m['mean']:.2f}±{srcc_m['std']:.2f}",
        "auc_g4": f"{100 * auc_m['mean']:.1f}±{100 * auc_m['std']:.1f}",
    }
