import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psrank import p2r
from psrank.errors import DimensionError
from psrank.p2r import InstanceCandidate, RankedInstance


def cand(partition, mask=None, origin=(0, 0, 0)):
    if mask is None:
        mask = np.zeros((4, 4))
        mask[origin[2] % 4, origin[1] % 4] = 1.0
    return InstanceCandidate(mask=np.asarray(mask, dtype=float),
                             partition=np.asarray(partition, dtype=float), origin=origin)


def random_candidates(rng, count, n=5, canvas=8):
    out = []
    for i in range(count):
        mask = rng.random((canvas, canvas))
        partition = rng.random(n)
        out.append(InstanceCandidate(mask=mask, partition=partition, origin=(0, i % 4, i // 4)))
    return out


class TestAssociate:
    def test_floor_filters_rows(self):
        values = np.full((20, 5), 0.01)
        values[3] = [0.5, 0.6, 0.7, 0.8, 0.9]
        values[8, 4] = 0.2
        values[15, 0] = 0.1
        masks = np.zeros((20, 4, 4))
        cands = p2r.associate(masks, values, objectness_floor=0.1)
        assert len(cands) == 3

    def test_empty_matrix(self):
        assert p2r.associate(np.zeros((0, 4, 4)), np.zeros((0, 5))) == []

    def test_zero_floor_keeps_all(self):
        values = np.random.default_rng(0).random((7, 3)) * 0.05
        cands = p2r.associate(np.zeros((7, 2, 2)), values, objectness_floor=0.0)
        assert len(cands) == 7

    def test_row_mismatch(self):
        with pytest.raises(DimensionError):
            p2r.associate(np.zeros((3, 2, 2)), np.zeros((4, 5)))


class TestAlleviate:
    def test_high_then_low_discarded(self):
        c = cand([0.8, 0.1, 0.9, 0.9, 0.9])
        assert p2r.alleviate([c], 0.3) == []

    def test_monotone_kept(self):
        c = cand([0.1, 0.2, 0.4, 0.8, 0.9])
        assert p2r.alleviate([c], 0.3) == [c]

    def test_all_below_threshold_kept(self):
        c = cand([0.1, 0.05, 0.2, 0.1, 0.25])
        assert p2r.alleviate([c], 0.3) == [c]

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8))
    def test_survivors_monotone_discards_witnessed(self, values):
        c = cand(values)
        threshold = 0.3
        kept = p2r.alleviate([c], threshold)
        above = np.asarray(values) >= threshold
        if kept:
            assert np.all(np.diff(above.astype(int)) >= 0)
        else:
            witnessed = any(above[j] and not above[i]
                            for i in range(len(values)) for j in range(i))
            assert witnessed


class TestMaskIoU:
    def test_identical(self):
        m = np.zeros((4, 4), dtype=bool)
        m[1:3, 1:3] = True
        assert p2r.mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0] = True
        b[3, 3] = True
        assert p2r.mask_iou(a, b) == 0.0

    def test_partial_overlap_pixel_count(self):
        # two 2x2 squares sharing one column: intersection 2, union 6
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0:2, 0:2] = True
        b[0:2, 1:3] = True
        assert p2r.mask_iou(a, b) == pytest.approx(2 / 6)

    def test_both_empty(self):
        z = np.zeros((3, 3), dtype=bool)
        assert p2r.mask_iou(z, z) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            p2r.mask_iou(np.zeros((2, 2), dtype=bool), np.zeros((3, 3), dtype=bool))


class TestBinarize:
    def test_above(self):
        assert p2r.binarize(np.full((2, 2), 0.7), 0.5).all()

    def test_below(self):
        assert not p2r.binarize(np.full((2, 2), 0.3), 0.5).any()

    def test_boundary_is_on(self):
        assert p2r.binarize(np.array([[0.5]]), 0.5).all()


class TestSelectRanks:
    def test_largest_partition1_gets_rank1(self):
        cands = [
            cand([0.4, 0.5, 0.6, 0.7, 0.9], origin=(0, 0, 0)),
            cand([0.8, 0.9, 0.9, 0.9, 0.9], origin=(0, 1, 0)),
            cand([0.3, 0.8, 0.9, 0.9, 0.9], origin=(0, 2, 0)),
        ]
        out = p2r.select_ranks(cands, 5, 0.3, 0.5)
        assert out[0].rank == 1
        assert out[0].score == pytest.approx(0.8)

    def test_empty_input(self):
        assert p2r.select_ranks([], 5, 0.3, 0.5) == []

    def test_identical_masks_suppressed(self):
        mask = np.zeros((4, 4))
        mask[1:3, 1:3] = 1.0
        cands = [
            cand([0.9, 0.9, 0.9, 0.9, 0.9], mask=mask, origin=(0, 0, 0)),
            cand([0.8, 0.8, 0.8, 0.8, 0.8], mask=mask, origin=(0, 1, 0)),
        ]
        out = p2r.select_ranks(cands, 5, 0.3, 0.5)
        assert len(out) == 1
        assert out[0].rank == 1 and out[0].score == pytest.approx(0.9)

    def test_stop_when_column_max_below_threshold(self):
        cands = [cand([0.9, 0.1, 0.1, 0.1, 0.1], origin=(0, 0, 0)),
                 cand([0.7, 0.2, 0.2, 0.2, 0.2], origin=(0, 1, 0))]
        out = p2r.select_ranks(cands, 5, 0.3, 0.5)
        assert [r.rank for r in out] == [1]

    def test_ranks_contiguous_and_unique(self):
        rng = np.random.default_rng(1)
        cands = p2r.alleviate(random_candidates(rng, 6), 0.3)
        out = p2r.select_ranks(cands, 5, 0.3, 0.5)
        assert [r.rank for r in out] == list(range(1, len(out) + 1))

    def test_order_invariance_with_distinct_probs(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            cands = p2r.alleviate(random_candidates(rng, 5), 0.3)
            out = p2r.select_ranks(list(cands), 5, 0.3, 0.5)
            shuffled = list(cands)
            rng.shuffle(shuffled)
            out_s = p2r.select_ranks(shuffled, 5, 0.3, 0.5)
            assert len(out) == len(out_s)
            for a, b in zip(out, out_s):
                assert a.rank == b.rank and a.score == b.score
                np.testing.assert_array_equal(a.mask, b.mask)

    def test_selected_overlap_bounded(self):
        rng = np.random.default_rng(3)
        for trial in range(30):
            cands = p2r.alleviate(random_candidates(rng, 6), 0.3)
            out = p2r.select_ranks(cands, 5, 0.3, 0.5)
            for i, a in enumerate(out):
                for b in out[i + 1 :]:
                    assert p2r.mask_iou(a.mask, b.mask) <= 0.5


class TestReferenceEquivalence:
    def assert_same(self, got, expected):
        assert len(got) == len(expected)
        for a, b in zip(got, expected):
            assert a.rank == b.rank
            assert a.score == pytest.approx(b.score, abs=0)
            np.testing.assert_array_equal(a.mask, b.mask)

    def test_single_candidate_above_threshold(self):
        c = cand([0.9, 0.9, 0.9, 0.9, 0.9])
        got = p2r.select_ranks(p2r.alleviate([c], 0.3), 5, 0.3, 0.5)
        ref = p2r.p2r_reference([c], 5, 0.3, 0.5)
        assert [r.rank for r in got] == [1]
        self.assert_same(got, ref)

    def test_empty(self):
        assert p2r.p2r_reference([], 5, 0.3, 0.5) == []

    def test_thousand_random_sets(self):
        rng = np.random.default_rng(2024)
        for trial in range(1000):
            count = int(rng.integers(0, 7))
            cands = random_candidates(rng, count)
            got = p2r.select_ranks(p2r.alleviate(cands, 0.3), 5, 0.3, 0.5)
            ref = p2r.p2r_reference(cands, 5, 0.3, 0.5)
            self.assert_same(got, ref)
