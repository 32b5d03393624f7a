from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crisp.splice import SlideCollage, SpliceConfig, nearest_rank_index, splice_case_pool, splice_slide

from conftest import axis_patches, make_patch, random_slide
from oracles import splice_reference


def kept_ids(patches, s_t: float) -> tuple[str, ...]:
    return splice_slide(patches, SpliceConfig(s_t)).kept


class TestNearestRank:
    @pytest.mark.parametrize(
        "s_t,m,expected",
        [(0, 5, 0), (50, 3, 1), (50, 1, 0), (100, 7, 6), (20, 10, 1), (40, 10, 3)],
    )
    def test_known_ranks(self, s_t, m, expected):
        assert nearest_rank_index(s_t, m) == expected

    def test_clamped_to_valid_range(self):
        assert nearest_rank_index(0, 1) == 0
        assert nearest_rank_index(100, 1) == 0


class TestSpliceSlide:
    def test_single_patch_kept(self):
        patches = axis_patches([0.3])
        for s_t in (0, 37, 100):
            collage = splice_slide(patches, SpliceConfig(s_t))
            assert collage.kept == (patches[0].patch_id,)
            assert collage.discarded_count == 0

    def test_axis_example_at_fifty(self):
        # reference 0: distances {0.1, 0.2, 1.0}, 50th percentile 0.2,
        # so only the patch at 0.1 is strictly below and drops out
        patches = axis_patches([0.0, 0.1, 0.2, 1.0])
        assert kept_ids(patches, 50) == ("s0:0:0", "s0:2:0", "s0:3:0")

    def test_zero_percentile_keeps_distinct_patches(self):
        patches = axis_patches([0.0, 0.1, 0.2, 1.0])
        assert kept_ids(patches, 0) == tuple(p.patch_id for p in patches)

    def test_identical_descriptors_collapse_to_one(self):
        patches = axis_patches([0.4] * 6)
        for s_t in (0, 20, 100):
            assert kept_ids(patches, s_t) == (patches[0].patch_id,)

    def test_empty_input_is_empty_collage(self):
        assert splice_slide([], SpliceConfig(30)) == SlideCollage("", (), 0)

    def test_partition_invariant(self, rng):
        patches = random_slide(rng, 120)
        collage = splice_slide(patches, SpliceConfig(30))
        assert len(collage.kept) + collage.discarded_count == len(patches)
        assert len(set(collage.kept)) == len(collage.kept)

    def test_deterministic(self, rng):
        patches = random_slide(rng, 200)
        first = splice_slide(patches, SpliceConfig(25))
        second = splice_slide(patches, SpliceConfig(25))
        assert first == second

    def test_non_finite_descriptor_rejected(self):
        bad = make_patch("s0", 0, 0, descriptor=(float("nan"), 0.5, 0.5, 0.1, 0.1, 0.1))
        with pytest.raises(ValueError, match="non-finite"):
            splice_slide([bad, make_patch("s0", 1, 0)], SpliceConfig(20))

    def test_s_t_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="s_t"):
            SpliceConfig(101)

    @pytest.mark.parametrize("s_t", [0, 20, 30, 40, 100])
    def test_matches_reference_on_random_slides(self, s_t, rng):
        for n in (1, 2, 7, 40, 160, 500):
            patches = random_slide(rng, n)
            expected = splice_reference([p.descriptor for p in patches], s_t)
            got = splice_slide(patches, SpliceConfig(s_t))
            assert got.kept == tuple(patches[i].patch_id for i in expected)

    @given(
        values=st.lists(
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False, width=32),
            min_size=1,
            max_size=25,
        ),
        s_t=st.floats(min_value=0.0, max_value=100.0, allow_nan=False),
    )
    @settings(max_examples=120, deadline=None)
    def test_matches_reference_including_ties(self, values, s_t):
        # one-axis descriptors provoke exact duplicates and tied distances
        patches = axis_patches(values)
        expected = splice_reference([p.descriptor for p in patches], s_t)
        got = splice_slide(patches, SpliceConfig(s_t))
        assert got.kept == tuple(patches[i].patch_id for i in expected)
        assert len(got.kept) + got.discarded_count == len(patches)

    def test_higher_threshold_prunes_more_on_average(self):
        rng = np.random.default_rng(99)
        sizes_20 = []
        sizes_40 = []
        for _ in range(100):
            patches = random_slide(rng, int(rng.integers(20, 120)))
            sizes_20.append(len(kept_ids(patches, 20)))
            sizes_40.append(len(kept_ids(patches, 40)))
        assert np.mean(sizes_40) <= np.mean(sizes_20)


class TestSpliceCasePool:
    def test_single_slide_pool_reduces_to_splice_slide(self, rng):
        patches = random_slide(rng, 60)
        direct = splice_slide(patches, SpliceConfig(25))
        pooled = splice_case_pool(patches, SpliceConfig(25), pool_id="c0")
        assert pooled.kept == direct.kept
        assert pooled.discarded_count == direct.discarded_count

    def test_duplicated_slide_mostly_discarded(self, rng):
        patches = random_slide(rng, 50, slide_id="sa")
        twins = [
            make_patch("sb", p.grid_x, p.grid_y, descriptor=p.descriptor)
            for p in patches
        ]
        pooled = splice_case_pool(patches + twins, SpliceConfig(25), pool_id="c0")
        assert len(pooled.kept) < len(patches) + len(twins)
        # every exact twin of an admitted patch dies to the duplicate rule
        assert len(pooled.kept) <= len(patches)

    def test_pool_ordering_is_slide_then_raster(self):
        a = make_patch("sa", 0, 0, descriptor=(0.2, 0.5, 0.5, 0.1, 0.1, 0.1))
        b = make_patch("sb", 0, 0, descriptor=(0.9, 0.5, 0.5, 0.1, 0.1, 0.1))
        pooled = splice_case_pool([b, a], SpliceConfig(0), pool_id="c0")
        assert pooled.kept == (a.patch_id, b.patch_id)

    def test_empty_pool(self):
        assert splice_case_pool([], SpliceConfig(20), pool_id="c0").kept == ()
