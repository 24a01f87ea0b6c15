import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsessc.errors import FormatError
from sparsessc.oracles import directional_check, spn_oracle
from sparsessc.selfcheck import conv_case, random_sparse
from sparsessc.sparse import autograd as ag
from sparsessc.sparse import checkpoint, ops
from sparsessc.sparse.autograd import Var
from sparsessc.sparse.dense import ResourceError, dense_oracle, dense_values_at
from sparsessc.sparse.kernel_map import build_kernel_map, build_output_coords
from sparsessc.sparse.nn import BatchNorm, Conv
from sparsessc.sparse.tensor import AlignmentError, CoordSet, SparseTensor, kernel_offsets
from sparsessc.sparse.tensor_io import decode_tensor, encode_tensor


def test_kernel_offsets_order():
    k3 = kernel_offsets(3, 3)
    assert k3.shape == (27, 3)
    assert tuple(k3[0]) == (-1, -1, -1) and tuple(k3[1]) == (-1, -1, 0) and tuple(k3[13]) == (0, 0, 0)
    k2 = kernel_offsets(2, 2)
    assert k2.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]


def test_coordset_rejects_duplicates_and_bad_stride():
    with pytest.raises(ValueError):
        CoordSet(np.array([[0, 0, 0], [0, 0, 0]]), 1)
    with pytest.raises(ValueError):
        CoordSet(np.array([[1, 0, 0]]), 2)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30)
def test_conv_matches_dense_oracle(seed):
    assert conv_case(np.random.default_rng(seed), size=10) <= 1e-5


def test_conv_2d_matches_dense(rng):
    coords, feats = random_sparse(rng, 12, dim=2, m=2)
    w = rng.standard_normal((9, 2, 3))
    y = ops.conv(SparseTensor.from_arrays(coords, feats), Var(w), 3)
    grid, lo = dense_oracle(coords, feats, 1, w, 3)
    assert np.allclose(y.feats.data, dense_values_at(grid, lo, y.coords), atol=1e-12)


def test_same_conv_keeps_coordinates(rng):
    coords, feats = random_sparse(rng, 8)
    x = SparseTensor.from_arrays(coords, feats)
    y = ops.conv(x, Var(rng.standard_normal((27, 2, 2))), 3)
    assert y.cset is x.cset


def test_strided_output_coordinates():
    x = CoordSet(np.array([[0, 0, 0], [1, 1, 1], [3, 0, 2]]), 1)
    out = build_output_coords(x, "strided", 2, 2)
    assert out.coords.tolist() == [[0, 0, 0], [2, 0, 2]] and out.stride == (2, 2, 2)


def test_transposed_cap():
    x = CoordSet(np.array([[0, 0], [2, 2]]), 2)
    out = build_output_coords(x, "transposed", 3, 2, cap=(3, 3))
    assert out.stride == (1, 1)
    assert out.coords.min() >= 0 and out.coords.max() <= 2
    assert len(out) == 7  # {0,1}^2 and {1,2}^2 share (1,1)


def test_kernel_map_pairs_are_exact(rng):
    coords, _ = random_sparse(rng, 6)
    cs = CoordSet(coords, 1)
    km = build_kernel_map(cs, cs, 3)
    members = {tuple(c) for c in coords.tolist()}
    expect = sum((tuple(c + o) in members) for c in coords for o in kernel_offsets(3, 3))
    assert km.num_pairs == expect
    for off, i, o in zip(km.offsets, km.in_rows, km.out_rows):
        assert np.array_equal(coords[i], coords[o] + off)


def test_dense_oracle_refuses_large_grids():
    coords = np.array([[0, 0, 0], [60, 60, 60]])
    with pytest.raises(ResourceError):
        dense_oracle(coords, np.ones((2, 1)), 1, np.ones((27, 1, 1)), 3)


def test_prune_keeps_exactly_positive_or_forced():
    x = SparseTensor.from_arrays(np.arange(4)[:, None], np.arange(4.0)[:, None])
    y = ops.prune(x, np.array([-1.0, 2.0, 0.0, 3.0]), force_keep=np.array([1, 0, 0, 0], bool))
    assert y.coords.ravel().tolist() == [0, 1, 3]


def test_add_requires_alignment(rng):
    a = SparseTensor.from_arrays(np.array([[0], [1]]), np.ones((2, 1)))
    b = SparseTensor.from_arrays(np.array([[0], [2]]), np.ones((2, 1)))
    with pytest.raises(AlignmentError):
        ops.add(a, b)
    c = ops.add_matching(a, b)
    assert c.feats.data.ravel().tolist() == [2.0, 1.0]


def test_max_pool_and_gradient(rng):
    coords, feats = random_sparse(rng, 6, m=2)
    x = SparseTensor.from_arrays(coords, feats)
    y = ops.max_pool(x, 3).feats.data
    members = {tuple(c): f for c, f in zip(coords.tolist(), feats)}
    for c, v in zip(coords.tolist(), y):
        nb = [members[t] for o in kernel_offsets(3, 3) if (t := tuple(np.add(c, o))) in members]
        assert np.array_equal(v, np.max(nb, axis=0))
    f = Var(feats, requires_grad=True)
    r = rng.standard_normal(feats.shape)
    _, _, err = directional_check(lambda f: ag.sum(ag.mul(ops.max_pool(x.with_feats(f), 3).feats, r)),
                                  [f], rng)
    assert err < 1e-4


def test_batch_norm_gradient(rng):
    f = Var(rng.standard_normal((9, 3)), requires_grad=True)
    g = Var(rng.standard_normal(3), requires_grad=True)
    b = Var(rng.standard_normal(3), requires_grad=True)
    r = rng.standard_normal((9, 3))
    fn = lambda f, g, b: ag.sum(ag.mul(ops.batch_norm(f, g, b), r))
    assert directional_check(fn, [f, g, b], rng)[2] < 1e-4


def test_batchnorm_module_running_stats(rng):
    bn = BatchNorm(2)
    x = SparseTensor.from_arrays(np.arange(5)[:, None], rng.standard_normal((5, 2)) * 3 + 1)
    y = bn(x).feats.data
    assert np.allclose(y.mean(axis=0), 0, atol=1e-12)
    bn.eval()
    assert bn(x).feats.data.shape == (5, 2)


def test_neighbor_mix_matches_oracle(rng):
    coords, feats = random_sparse(rng, 5, m=2)
    cs = CoordSet(coords, 1)
    km = build_kernel_map(cs, cs, 3)
    a = rng.uniform(-0.05, 0.05, (len(coords), 27))
    y = Var(feats)
    for _ in range(3):
        y = ag.add(ag.mul(y, 1.0 - a.sum(axis=1, keepdims=True)), ops.neighbor_mix(y, Var(a), km))
    assert np.allclose(y.data, spn_oracle(coords, feats, a, 3), atol=1e-12)


def test_conv_gradient(rng):
    coords, feats = random_sparse(rng, 6, m=2)
    conv = Conv(3, 2, 3, 3, stride=2, rng=rng)
    x = SparseTensor.from_arrays(coords, feats)
    r = None

    def fn(*params):
        nonlocal r
        y = conv(x)
        if r is None:
            r = np.random.default_rng(0).standard_normal(y.feats.shape)
        return ag.sum(ag.mul(y.feats, r))

    assert directional_check(fn, conv.parameters(), rng)[2] < 1e-4


@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 30))
def test_tensor_file_round_trip(d, m, n):
    rng = np.random.default_rng(n)
    coords = np.unique(rng.integers(-50, 50, (n, d)), axis=0) * 2
    x = SparseTensor.from_arrays(coords, rng.standard_normal((len(coords), m)).astype(np.float32), 2)
    y = decode_tensor(encode_tensor(x))
    assert np.array_equal(y.coords, x.coords) and y.stride == x.stride
    assert np.array_equal(y.feats.data, x.feats.data)


def test_tensor_file_errors():
    x = SparseTensor.from_arrays(np.zeros((1, 3), int), np.ones((1, 2)))
    blob = encode_tensor(x)
    with pytest.raises(FormatError, match="magic"):
        decode_tensor(b"XXXX" + blob[4:])
    with pytest.raises(FormatError, match="expected"):
        decode_tensor(blob[:-1])
    with pytest.raises(FormatError, match="truncated"):
        decode_tensor(blob[:5])


def test_checkpoint_round_trip_and_corruption(tmp_path, rng):
    conv = Conv(3, 2, 4, 3, rng=rng)
    path = tmp_path / "c.ckpt"
    checkpoint.save(path, conv, {"epoch": 7})
    other = Conv(3, 2, 4, 3, rng=np.random.default_rng(99))
    meta = checkpoint.load(path, other)
    assert meta == {"epoch": 7.0}
    assert np.array_equal(other.weight.data, conv.weight.data.astype(np.float32))
    with pytest.raises(checkpoint.CheckpointError, match="stored shape"):
        checkpoint.load(path, Conv(3, 2, 5, 3, rng=rng))
    blob = bytearray(path.read_bytes())
    blob[20] ^= 1
    path.write_bytes(bytes(blob))
    with pytest.raises(checkpoint.CheckpointError, match="checksum"):
        checkpoint.load(path, other)
