import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsessc.fusion import dominant_layer, mvf_lift, refine
from sparsessc.network import SPNBlock
from sparsessc.oracles import mvf_oracle
from sparsessc.sparse.tensor import SparseTensor


def random_pair(rng, max_xy=12, max_z=6, k=5):
    X, Y = rng.integers(1, max_xy + 1, 2)
    Z = int(rng.integers(1, max_z + 1))
    p3 = np.where(rng.random((X, Y, Z)) < rng.uniform(0.05, 0.4), rng.integers(1, k, (X, Y, Z)), 0)
    p2 = rng.integers(0, k, (X, Y))
    return p3, p2


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=80)
def test_lift_matches_loop_oracle(seed):
    p3, p2 = random_pair(np.random.default_rng(seed))
    out = mvf_lift(p3, p2)
    assert np.array_equal(out, mvf_oracle(p3, p2))
    # occupied voxels are never overwritten
    assert np.array_equal(out[p3 > 0], p3[p3 > 0])
    assert np.array_equal(mvf_lift(out, p2), out)


def test_single_pass_places_next_to_existing_voxel():
    p3 = np.zeros((3, 3, 4), int)
    p3[0, 0, 2] = 7
    p2 = np.zeros((3, 3), int)
    p2[1, 1] = 7
    out = mvf_lift(p3, p2, max_passes=1)
    assert out[1, 1].tolist() == [0, 0, 7, 0] and (out > 0).sum() == 2


def test_column_containing_class_is_untouched():
    p3 = np.zeros((2, 2, 3), int)
    p3[0, 0, 0] = p3[1, 1, 2] = 4
    p2 = np.full((2, 2), 4)
    out = mvf_lift(p3, p2, max_passes=1)
    assert out[0, 0].tolist() == [4, 0, 0] and out[1, 1].tolist() == [0, 0, 4]


def test_missing_class_or_empty_bev_changes_nothing(rng):
    p3, _ = random_pair(rng, k=3)
    assert np.array_equal(mvf_lift(p3, np.zeros(p3.shape[:2], int)), p3)
    assert np.array_equal(mvf_lift(p3, np.full(p3.shape[:2], 15)), p3)


def test_dominant_layer_prefers_lowest_on_ties():
    g = np.zeros((2, 2, 3), int)
    g[0, 0, 1] = g[1, 1, 2] = 3
    assert dominant_layer(g, 3) == 1 and dominant_layer(g, 4) is None


def test_lift_validates_arguments():
    with pytest.raises(ValueError):
        mvf_lift(np.zeros((2, 2, 2), int), np.zeros((3, 2), int))
    with pytest.raises(ValueError):
        mvf_lift(np.zeros((2, 2, 2), int), np.zeros((2, 2), int), n=2)


def test_refine_keeps_occupancy(rng):
    labels = np.where(rng.random((6, 6, 4)) < 0.3, rng.integers(1, 20, (6, 6, 4)), 0)
    n = int((labels > 0).sum())
    out = refine(labels, affinity=rng.uniform(-0.03, 0.03, (n, 27)))
    assert np.array_equal(out > 0, labels > 0)


def test_refine_with_zero_affinity_is_identity(rng):
    labels = np.where(rng.random((5, 5, 3)) < 0.4, rng.integers(1, 20, (5, 5, 3)), 0)
    n = int((labels > 0).sum())
    assert np.array_equal(refine(labels, affinity=np.zeros((n, 27))), labels)


def test_refine_with_spn_block(rng):
    labels = np.zeros((4, 4, 4), int)
    labels[1:3, 1:3, 1:3] = 2
    labels[1, 1, 1] = 6
    coords = np.argwhere(labels > 0)
    guide = SparseTensor.from_arrays(coords, rng.standard_normal((len(coords), 3)))
    spn = SPNBlock(3, 20, 3, hidden=4, iterations=2, rng=rng)
    out = refine(labels, spn=spn, guide=guide)
    assert np.array_equal(out > 0, labels > 0)
    with pytest.raises(ValueError):
        refine(labels, spn=spn)
    with pytest.raises(ValueError):
        refine(labels)
    assert not refine(np.zeros((2, 2, 2), int), affinity=np.zeros((0, 27))).any()
