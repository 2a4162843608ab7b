import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regionaug.geometry import (BoxRegion, ConfigurationError, PyramidLevel,
                                ScoredRegion, generate_anchor_grid, iou, nms)


def brute_force_nms(boxes, scores, threshold, keep):
    """Vectorized reference: full IoU matrix + greedy scan over a sort."""
    b = np.asarray(boxes, dtype=float)
    n = len(b)
    x1 = np.maximum(b[:, None, 0], b[None, :, 0])
    y1 = np.maximum(b[:, None, 1], b[None, :, 1])
    x2 = np.minimum(b[:, None, 2], b[None, :, 2])
    y2 = np.minimum(b[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    area = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    mat = inter / (area[:, None] + area[None, :] - inter)
    order = np.lexsort((np.arange(n), -np.asarray(scores)))
    kept = []
    for i in order:
        if all(mat[i, j] <= threshold for j in kept):
            kept.append(i)
            if len(kept) == keep:
                break
    return kept


def random_regions(rng, n, span=20.0):
    regions = []
    for _ in range(n):
        x1, y1 = rng.uniform(0, span, 2)
        w, h = rng.uniform(0.5, span / 2, 2)
        regions.append(ScoredRegion(BoxRegion(x1, y1, x1 + w, y1 + h),
                                    float(rng.normal())))
    return regions


class TestBoxRegion:
    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            BoxRegion(1, 1, 1, 2)
        with pytest.raises(ValueError):
            BoxRegion(0, 5, 3, 5)

    def test_area(self):
        assert BoxRegion(0, 0, 2, 3).area == 6


class TestAnchorGrid:
    def test_single_scale_grid(self):
        spec = (PyramidLevel(stride=32, base_size=32.0, scales=(1.0,), ratios=(1.0,)),)
        boxes = generate_anchor_grid((64, 64), spec)
        assert len(boxes) == 4
        centers = sorted(((b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2) for b in boxes)
        assert centers == [(16, 16), (16, 48), (48, 16), (48, 48)]
        assert all(b.x2 - b.x1 == 32 and b.y2 - b.y1 == 32 for b in boxes)

    def test_default_config_count(self):
        # independent enumeration: cells per level x scales x ratios
        spec = (PyramidLevel(8, 16.0, (1.0, 1.26), (0.5, 1.0, 2.0)),
                PyramidLevel(16, 32.0, (1.0, 1.26), (0.5, 1.0, 2.0)),
                PyramidLevel(32, 48.0, (1.0, 1.26), (0.5, 1.0, 2.0)))
        expected = sum((64 // s) * (64 // s) * 6 for s in (8, 16, 32))
        assert len(generate_anchor_grid((64, 64), spec)) == expected == 504

    def test_border_anchor_clipped_valid(self):
        spec = (PyramidLevel(16, 64.0, (1.0,), (1.0,)),)
        boxes = generate_anchor_grid((32, 32), spec)
        for b in boxes:
            assert 0 <= b.x1 < b.x2 <= 32
            assert 0 <= b.y1 < b.y2 <= 32

    def test_empty_spec_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_anchor_grid((64, 64), ())

    def test_ordering_deterministic(self):
        spec = (PyramidLevel(16, 24.0, (1.0, 2.0), (1.0, 0.5)),)
        a = generate_anchor_grid((64, 64), spec)
        b = generate_anchor_grid((64, 64), spec)
        assert a == b


class TestIoU:
    def test_identical(self):
        b = BoxRegion(1, 2, 4, 6)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BoxRegion(0, 0, 1, 1), BoxRegion(2, 2, 3, 3)) == 0.0

    def test_hand_case(self):
        # inter = 1, union = 4 + 4 - 1 = 7
        assert iou(BoxRegion(0, 0, 2, 2), BoxRegion(1, 1, 3, 3)) == pytest.approx(1 / 7)

    @given(st.lists(st.floats(0, 50), min_size=8, max_size=8))
    def test_symmetric(self, vals):
        a = BoxRegion(vals[0], vals[1], vals[0] + vals[2] + 0.5, vals[1] + vals[3] + 0.5)
        b = BoxRegion(vals[4], vals[5], vals[4] + vals[6] + 0.5, vals[5] + vals[7] + 0.5)
        assert iou(a, b) == pytest.approx(iou(b, a))
        assert 0.0 <= iou(a, b) <= 1.0


class TestNMS:
    def test_disjoint_all_kept(self):
        regions = [ScoredRegion(BoxRegion(i * 10, 0, i * 10 + 5, 5), float(i))
                   for i in range(4)]
        kept = nms(regions, 0.5, keep=4)
        assert len(kept) == 4
        scores = [r.informativeness for r in kept]
        assert scores == sorted(scores, reverse=True)

    def test_identical_boxes_suppressed(self):
        box = BoxRegion(0, 0, 4, 4)
        kept = nms([ScoredRegion(box, 0.9), ScoredRegion(box, 0.8)], 0.5, keep=4)
        assert len(kept) == 1
        assert kept[0].informativeness == 0.9

    def test_empty_input(self):
        assert nms([], 0.5, keep=3) == []

    def test_tie_break_by_index(self):
        box_a = BoxRegion(0, 0, 4, 4)
        box_b = BoxRegion(100, 100, 104, 104)
        kept = nms([ScoredRegion(box_a, 1.0), ScoredRegion(box_b, 1.0)], 0.5, keep=1)
        assert kept[0].box == box_a

    def test_kept_pairs_below_threshold(self):
        rng = np.random.default_rng(7)
        regions = random_regions(rng, 60)
        kept = nms(regions, 0.3, keep=10)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert iou(kept[i].box, kept[j].box) <= 0.3

    def test_matches_brute_force_200_boxes(self):
        rng = np.random.default_rng(42)
        regions = random_regions(rng, 200)
        kept = nms(regions, 0.4, keep=50)
        boxes = [(r.box.x1, r.box.y1, r.box.x2, r.box.y2) for r in regions]
        scores = [r.informativeness for r in regions]
        expected = brute_force_nms(boxes, scores, 0.4, 50)
        assert [regions[i] for i in expected] == kept

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.95), st.integers(1, 12))
    def test_property_matches_brute_force(self, seed, threshold, keep):
        rng = np.random.default_rng(seed)
        regions = random_regions(rng, int(rng.integers(1, 40)))
        kept = nms(regions, threshold, keep=keep)
        boxes = [(r.box.x1, r.box.y1, r.box.x2, r.box.y2) for r in regions]
        scores = [r.informativeness for r in regions]
        expected = brute_force_nms(boxes, scores, threshold, keep)
        assert [regions[i] for i in expected] == kept
        assert len(kept) <= keep
