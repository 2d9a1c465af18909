import numpy as np
import pytest

from promptseg.core import Mask
from promptseg.errors import EmptyInput, InvalidGrid, ShapeMismatch
from promptseg.features import (
    bald_map,
    boundary_gradient_feature,
    build_action,
    build_region_pool,
    build_state,
    class_distribution,
    entropy_map,
    kl_divergence,
    region_to_prompt,
    summarize_kl,
)
from promptseg.segmenter import ProbabilityMap

LN2 = np.log(2.0)


class TestEntropyMap:
    def test_uniform_half_is_ln2(self):
        out = entropy_map(ProbabilityMap(np.full((5, 5), 0.5)))
        np.testing.assert_allclose(out, LN2)

    def test_degenerate_probs_are_zero(self):
        probs = np.zeros((3, 3))
        probs[1, 1] = 1.0
        out = entropy_map(ProbabilityMap(probs))
        assert out.sum() == 0.0

    def test_symmetry_q_vs_1mq(self):
        rng = np.random.default_rng(3)
        q = rng.random((8, 8))
        a = entropy_map(ProbabilityMap(q))
        b = entropy_map(ProbabilityMap(1.0 - q))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(4)
        out = entropy_map(ProbabilityMap(rng.random((32, 32))))
        assert out.min() >= 0.0 and out.max() <= LN2 + 1e-15


class TestBoundaryGradient:
    def test_uniform_map_is_zero(self):
        # all-foreground map has no boundary inside and zero gradient
        assert boundary_gradient_feature(ProbabilityMap(np.ones((6, 6)))).total >= 0.0
        assert boundary_gradient_feature(ProbabilityMap(np.zeros((6, 6)))) == (0.0, 0.0)

    def test_hard_vertical_edge_central_difference(self):
        from promptseg.features import Region

        probs = np.zeros((6, 8))
        probs[:, 4:] = 1.0
        # the vertical-edge boundary pixels carry magnitude (1 - 0) / 2 under
        # central differences; restrict to the edge column away from borders
        edge = Region(0, x0=4, y0=1, w=1, h=4)
        summary = boundary_gradient_feature(ProbabilityMap(probs), edge)
        assert summary.mean == pytest.approx(0.5)
        assert summary.total == pytest.approx(0.5 * 4)

    def test_all_zero_map(self):
        assert boundary_gradient_feature(ProbabilityMap(np.zeros((5, 5)))) == (0.0, 0.0)


class TestClassDistribution:
    def test_all_foreground(self):
        assert class_distribution(ProbabilityMap(np.ones((4, 4)))) == (1.0, 0.0)

    def test_half_foreground_tile(self):
        probs = np.zeros((8, 8))
        probs[:4, :] = 1.0
        assert class_distribution(ProbabilityMap(probs)) == (0.5, 0.5)

    def test_all_zero_map(self):
        assert class_distribution(ProbabilityMap(np.zeros((4, 4)))) == (0.0, 1.0)

    def test_mask_counted_directly(self):
        bits = np.zeros((4, 4), dtype=bool)
        bits[0, 0] = True
        assert class_distribution(Mask(bits)) == (1 / 16, 15 / 16)


class TestKl:
    def test_identity_zero(self):
        assert kl_divergence((0.3, 0.7), (0.3, 0.7)) == 0.0

    def test_half_vs_degenerate(self):
        assert kl_divergence((1.0, 0.0), (0.5, 0.5)) == pytest.approx(LN2, abs=1e-6)

    def test_opposite_degenerate_large_finite(self):
        val = kl_divergence((1.0, 0.0), (0.0, 1.0))
        assert val == pytest.approx(np.log(1e8), rel=1e-3)
        assert np.isfinite(val)

    def test_nonnegative_random(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            p, q = rng.random(), rng.random()
            assert kl_divergence((p, 1 - p), (q, 1 - q)) >= 0.0

    def test_summarize(self):
        assert summarize_kl([0.2, 0.7, 0.1], "max") == 0.7
        assert summarize_kl([0.2, 0.7, 0.1], "sum") == pytest.approx(1.0)
        assert summarize_kl([0.42], "max") == summarize_kl([0.42], "sum") == 0.42
        with pytest.raises(EmptyInput):
            summarize_kl([], "max")


class TestBald:
    def test_constant_ensemble_zero(self):
        member = ProbabilityMap(np.random.default_rng(1).random((6, 6)))
        out = bald_map([member, member, member])
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_opposite_certainty_is_ln2(self):
        a = ProbabilityMap(np.zeros((3, 3)))
        b = ProbabilityMap(np.ones((3, 3)))
        np.testing.assert_allclose(bald_map([a, b]), LN2, atol=1e-12)

    def test_nonnegative_random(self):
        rng = np.random.default_rng(6)
        members = [ProbabilityMap(rng.random((10, 10))) for _ in range(7)]
        assert bald_map(members).min() >= -1e-15

    def test_single_member_zero(self):
        member = ProbabilityMap(np.random.default_rng(2).random((4, 4)))
        assert bald_map([member]).sum() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            bald_map([ProbabilityMap(np.zeros((3, 3))), ProbabilityMap(np.zeros((4, 4)))])


class TestRegionPool:
    def test_even_tiling(self):
        pool = build_region_pool(64, 64, (8, 8))
        assert len(pool) == 64
        assert all(r.w == 8 and r.h == 8 for r in pool.regions)

    def test_remainder_goes_to_last_column(self):
        pool = build_region_pool(65, 64, (8, 8))
        widths = {r.x0: r.w for r in pool.regions}
        assert widths[56] == 9
        assert all(r.w == 8 for r in pool.regions if r.x0 < 56)

    def test_exact_coverage(self):
        for w, h, grid in ((64, 64, (8, 8)), (65, 63, (8, 4)), (33, 17, (5, 3))):
            pool = build_region_pool(w, h, grid)
            cover = np.zeros((h, w), dtype=int)
            for r in pool.regions:
                sy, sx = r.slices()
                cover[sy, sx] += 1
            assert cover.min() == cover.max() == 1

    def test_row_major_order(self):
        pool = build_region_pool(16, 16, (2, 2))
        coords = [(r.x0, r.y0) for r in pool.regions]
        assert coords == [(0, 0), (8, 0), (0, 8), (8, 8)]

    def test_invalid_grid(self):
        with pytest.raises(InvalidGrid):
            build_region_pool(8, 8, (16, 2))


class TestRegionToPrompt:
    def test_uniform_map_picks_top_left(self):
        pool = build_region_pool(16, 16, (2, 2))
        prompt = region_to_prompt(pool.regions[3], ProbabilityMap(np.zeros((16, 16))))
        assert (prompt.x, prompt.y) == (8, 8)
        assert prompt.polarity.value == "pos"

    def test_unique_entropy_max_is_chosen(self):
        probs = np.zeros((16, 16))
        probs[12, 13] = 0.5  # max entropy pixel
        probs[3, 3] = 1.0  # zero entropy elsewhere
        pool = build_region_pool(16, 16, (2, 2))
        prompt = region_to_prompt(pool.regions[3], ProbabilityMap(probs))
        assert (prompt.x, prompt.y) == (13, 12)

    def test_result_always_inside_region(self):
        rng = np.random.default_rng(8)
        pool = build_region_pool(30, 22, (4, 3))
        for _ in range(40):
            p = ProbabilityMap(rng.random((22, 30)))
            region = pool.regions[int(rng.integers(len(pool)))]
            prompt = region_to_prompt(region, p)
            assert region.x0 <= prompt.x < region.x0 + region.w
            assert region.y0 <= prompt.y < region.y0 + region.h


class TestStateAction:
    def test_zero_map_zero_state(self):
        pool = build_region_pool(16, 16, (4, 4))
        state = build_state(ProbabilityMap(np.zeros((16, 16))), pool)
        assert state.shape == (48,)
        assert not state.any()

    def test_state_length_always_3k(self):
        rng = np.random.default_rng(9)
        pool = build_region_pool(24, 24, (3, 3))
        for _ in range(5):
            state = build_state(ProbabilityMap(rng.random((24, 24))), pool)
            assert state.shape == (3 * len(pool),)

    def test_state_mean_entropy_matches_direct_recomputation(self):
        rng = np.random.default_rng(10)
        probs = rng.random((16, 16))
        pool = build_region_pool(16, 16, (4, 4))
        state = build_state(ProbabilityMap(probs), pool)
        ent = entropy_map(ProbabilityMap(probs))
        for region in pool.regions:
            sy, sx = region.slices()
            assert state[3 * region.index] == pytest.approx(ent[sy, sx].mean())

    def test_action_vector_shape_and_conventions(self):
        rng = np.random.default_rng(11)
        probs = rng.random((16, 16))
        pool = build_region_pool(16, 16, (4, 4))
        pmap = ProbabilityMap(probs)
        regions = pool.regions
        # no labeled regions yet: labeled-KL must be zero
        vec = build_action(regions[0], pmap, [], list(regions[1:]))
        assert vec.shape == (5,)
        assert vec[3] == 0.0
        # candidate equal to the pooled unlabeled distribution: unlabeled-KL 0
        uniform = ProbabilityMap(np.ones((16, 16)))
        vec2 = build_action(regions[0], uniform, [], list(regions[1:]))
        assert vec2[4] == pytest.approx(0.0, abs=1e-12)

    def test_action_kl_uses_truth_when_given(self):
        probs = np.zeros((16, 16))
        probs[:8, :8] = 1.0  # prediction: region 0 foreground
        pmap = ProbabilityMap(probs)
        pool = build_region_pool(16, 16, (2, 2))
        truth_bits = np.zeros((16, 16), dtype=bool)
        truth_bits[8:, 8:] = True  # truth says region 3 instead
        truth = Mask(truth_bits)
        labeled = [pool.regions[0]]
        vec_pred = build_action(pool.regions[3], pmap, labeled, [pool.regions[1]])
        vec_truth = build_action(pool.regions[3], pmap, labeled, [pool.regions[1]], truth=truth)
        # prediction of region 0 is all-fg, truth there is all-bg: the
        # labeled-KL of the all-bg candidate flips accordingly
        assert vec_pred[3] > 0.0
        assert vec_truth[3] == pytest.approx(0.0, abs=1e-6)

    def test_state_shape_mismatch(self):
        pool = build_region_pool(16, 16, (4, 4))
        with pytest.raises(ShapeMismatch):
            build_state(ProbabilityMap(np.zeros((8, 8))), pool)
