import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from patchdelta.dct import dct2
from patchdelta.patches import BitPlan, PatchGrid, allocate_bits, importance_scores, patchlize, reassemble
from reference import level_counts


def test_patchlize_4x4():
    x = np.arange(16, dtype=np.float32).reshape(4, 4)
    grid = patchlize(x, 2)
    assert len(grid) == 4
    np.testing.assert_array_equal(grid.patches[0], [[0, 1], [4, 5]])
    np.testing.assert_array_equal(grid.patches[1], [[2, 3], [6, 7]])
    np.testing.assert_array_equal(grid.patches[2], [[8, 9], [12, 13]])


def test_patchlize_pads_with_zeros():
    x = np.ones((5, 3), dtype=np.float32)
    grid = patchlize(x, 4)
    assert grid.padded_shape == (8, 4)
    assert len(grid) == 2
    assert grid.patches[0][:, 3].sum() == 0
    assert grid.patches[1][1:].sum() == 0
    assert grid.patches.sum() == 15
    assert reassemble(grid).shape == (5, 3)


def test_patch_size_zero_rejected():
    with pytest.raises(ValueError):
        patchlize(np.ones((2, 2)), 0)


def test_single_patch_reassembles_verbatim():
    x = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(reassemble(patchlize(x, 3)), x)


def test_reassemble_rejects_wrong_count():
    grid = patchlize(np.ones((4, 4)), 2)
    bad = PatchGrid(grid.patches[:3], 2, (4, 4))
    with pytest.raises(ValueError):
        reassemble(bad)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float32, st.tuples(st.integers(1, 20), st.integers(1, 20)),
           elements=st.floats(-1e6, 1e6, width=32)),
    st.integers(1, 9),
)
def test_round_trip_property(x, p):
    grid = patchlize(x, p)
    gr, gc = grid.grid_shape
    assert len(grid) == gr * gc
    np.testing.assert_array_equal(reassemble(grid), x)
    padded = np.zeros(grid.padded_shape, np.float32)
    padded[: x.shape[0], : x.shape[1]] = x
    # padding neutrality: norms over padded patches equal norms over in-bounds values
    for k, s in enumerate(importance_scores(grid)):
        br, bc = divmod(k, gc)
        block = x[br * p : (br + 1) * p, bc * p : (bc + 1) * p].astype(np.float64)
        assert s == pytest.approx(np.sqrt((block**2).sum()), rel=1e-12)


def test_importance_scores():
    grid = PatchGrid(np.array([[[3.0, 0.0], [0.0, 4.0]], [[0.0, 0.0], [0.0, 0.0]]]), 2, (2, 4))
    np.testing.assert_array_equal(importance_scores(grid), [5.0, 0.0])


def test_scores_survive_dct(rng):
    grid = patchlize(rng.normal(size=(32, 48)).astype(np.float32), 8)
    spatial = importance_scores(grid)
    freq = importance_scores(PatchGrid(dct2(grid.patches), 8, grid.original_shape))
    np.testing.assert_allclose(freq, spatial, rtol=1e-6)


def test_allocate_example():
    out = allocate_bits(np.array([3.0, 1.0, 2.0, 0.5]), BitPlan(((2, 0.5), (0, 0.5))))
    assert out.per_patch.tolist() == [2, 0, 2, 0]


def test_odd_count_goes_to_higher_bits():
    assert BitPlan(((2, 0.5), (0, 0.5))).counts(5) == [3, 2]


def test_equal_scores_follow_raster_order():
    out = allocate_bits(np.ones(6), BitPlan(((8, 0.5), (3, 1 / 3), (0, 1 / 6))))
    assert out.per_patch.tolist() == [8, 8, 8, 3, 3, 0]


def test_empty_scores_rejected():
    with pytest.raises(ValueError):
        allocate_bits(np.array([]), BitPlan())


@pytest.mark.parametrize("spec", ["2:0.5,0:0.5", "8:0.1,3:0.4,2:0.5", "1:1.0", "2:0.3,0:0.7"])
@pytest.mark.parametrize("m", [1, 2, 3, 7, 10, 33, 64, 1000])
def test_counts_match_reference(spec, m):
    plan = BitPlan.parse(spec)
    assert plan.counts(m) == level_counts(plan.levels, m)
    assert sum(plan.counts(m)) == m


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=80), st.sampled_from(
    ["2:0.5,0:0.5", "8:0.1,3:0.4,2:0.5", "4:0.25,2:0.25,1:0.25,0:0.25"]))
def test_allocation_monotone_and_exact(scores, spec):
    plan = BitPlan.parse(spec)
    scores = np.array(scores)
    out = allocate_bits(scores, plan).per_patch
    order = np.argsort(scores)
    for a, b in zip(order, order[1:]):
        if scores[b] > scores[a]:
            assert out[b] >= out[a]
    for (bits, _), count in zip(plan.levels, plan.counts(len(scores))):
        assert int((out == bits).sum()) == count


def test_allocation_deterministic(rng):
    scores = rng.random(500)
    a = allocate_bits(scores, BitPlan.parse("8:0.1,3:0.4,2:0.5")).per_patch
    b = allocate_bits(scores.copy(), BitPlan.parse("8:0.1,3:0.4,2:0.5")).per_patch
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("levels", [
    ((2, 0.5), (2, 0.5)),
    ((0, 0.5), (2, 0.5)),
    ((2, 0.6), (0, 0.6)),
    ((33, 1.0),),
    (),
])
def test_invalid_plans(levels):
    with pytest.raises(ValueError):
        BitPlan(levels)


@pytest.mark.parametrize("spec", ["2", "2:x", "a:0.5,0:0.5", "2:0.5;0:0.5"])
def test_malformed_specs(spec):
    with pytest.raises(ValueError):
        BitPlan.parse(spec)


def test_parse_sorts_levels():
    assert BitPlan.parse("0:0.5,2:0.5").levels == ((2, 0.5), (0, 0.5))
