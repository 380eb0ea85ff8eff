from __future__ import annotations

import numpy as np
import pytest
import torch

from anomgrade.errors import ValidationError
from anomgrade.patches import (patch_count, pool_patch_grid, to_patch_embedding_map)


def naive_window_means(fm: np.ndarray, sw: int) -> np.ndarray:
    """Triple-loop oracle: mean of each stride-1 window, per channel."""
    c, h, w = fm.shape
    g_h, g_w = h - sw + 1, w - sw + 1
    out = np.zeros((g_h, g_w, c))
    for a in range(g_h):
        for b in range(g_w):
            for ch in range(c):
                out[a, b, ch] = fm[ch, a:a + sw, b:b + sw].mean()
    return out


class TestPatchCount:
    def test_six_by_six_window_three(self):
        assert patch_count(6, 6, 3) == 16

    def test_unit_window_counts_cells(self):
        assert patch_count(9, 7, 1) == 63

    def test_window_equal_to_map(self):
        assert patch_count(5, 5, 5) == 1

    @pytest.mark.parametrize("sw", [0, 6, -1])
    def test_out_of_range_window_rejected(self, sw):
        with pytest.raises(ValueError):
            patch_count(5, 5, sw)


class TestPoolPatchGrid:
    def test_hand_computed_three_by_three(self):
        fm = np.array([[[1, 2, 3], [4, 5, 6], [7, 8, 9]]], dtype=np.float32)
        m = to_patch_embedding_map(fm, sw=2)
        expected = np.array([[[3.0], [4.0]], [[6.0], [7.0]]])
        assert np.allclose(m.values, expected, atol=1e-7)

    def test_constant_map_pools_to_constant(self):
        fm = np.full((4, 6, 6), 2.5, dtype=np.float32)
        for sw in (1, 2, 3, 6):
            m = to_patch_embedding_map(fm, sw=sw)
            assert np.allclose(m.values, 2.5, atol=1e-7)

    def test_unit_window_is_transpose_layout(self):
        rng = np.random.default_rng(0)
        fm = rng.random((3, 5, 5)).astype(np.float32)
        m = to_patch_embedding_map(fm, sw=1)
        assert np.allclose(m.values, np.transpose(fm, (1, 2, 0)), atol=1e-7)

    def test_matches_naive_oracle_on_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            h = int(rng.integers(3, 13))
            c = int(rng.integers(1, 9))
            sw = int(rng.integers(1, min(3, h) + 1))
            fm = rng.normal(size=(c, h, h)).astype(np.float32)
            m = to_patch_embedding_map(fm, sw=sw)
            assert m.values.shape == (h - sw + 1, h - sw + 1, c)
            assert np.abs(m.values - naive_window_means(fm, sw)).max() < 1e-6

    def test_linearity(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(2, 8, 8)).astype(np.float32)
        b = rng.normal(size=(2, 8, 8)).astype(np.float32)
        alpha, beta = 0.7, -1.3
        combo = to_patch_embedding_map(alpha * a + beta * b, sw=3).values
        parts = (alpha * to_patch_embedding_map(a, sw=3).values
                 + beta * to_patch_embedding_map(b, sw=3).values)
        assert np.abs(combo - parts).max() < 1e-6

    def test_shape_law(self):
        rng = np.random.default_rng(6)
        for h in (3, 5, 9, 12):
            for sw in (1, 2, 3):
                fm = rng.normal(size=(2, h, h)).astype(np.float32)
                m = to_patch_embedding_map(fm, sw=sw)
                g = h - sw + 1
                assert m.values.shape[:2] == (g, g)
                assert patch_count(h, h, sw) == g * g

    def test_non_square_rejected(self):
        fm = np.zeros((1, 4, 5), dtype=np.float32)
        with pytest.raises(ValidationError, match="square"):
            to_patch_embedding_map(fm, sw=2)

    def test_window_out_of_range_rejected(self):
        fm = np.zeros((1, 4, 4), dtype=np.float32)
        with pytest.raises(ValueError):
            to_patch_embedding_map(fm, sw=5)

    def test_batched_pooling_matches_per_item(self):
        rng = np.random.default_rng(8)
        batch = torch.from_numpy(rng.normal(size=(4, 3, 6, 6)).astype(np.float32))
        grids = pool_patch_grid(batch, sw=2)
        for k in range(4):
            single = pool_patch_grid(batch[k], sw=2)
            assert torch.allclose(grids[k], single, atol=1e-7)
