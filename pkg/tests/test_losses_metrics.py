import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsessc import metrics
from sparsessc.losses import (LossConfig2D, LossConfig3D, bce_with_logits, class_weights_from_counts,
                              focal, ga_loss, ga_weights, local_stats, loss_2d, loss_3d, weighted_ce)
from sparsessc.oracles import directional_check, iou_oracle
from sparsessc.sparse import autograd as ag
from sparsessc.sparse.autograd import Var


def _logits(rng, n=12, c=20, scale=2.0):
    return Var(rng.standard_normal((n, c)) * scale, requires_grad=True)


# ------------------------------------------------------------ cross entropy

def test_uniform_ce_is_ln20():
    y = np.arange(20) % 20
    assert abs(float(weighted_ce(Var(np.zeros((20, 20))), y).data) - math.log(20)) <= 1e-9


def test_ce_vanishes_for_confident_predictions():
    z = np.full((3, 20), -1e3)
    y = np.array([1, 5, 19])
    z[np.arange(3), y] = 1e3
    assert float(weighted_ce(Var(z), y).data) == 0.0


def test_class_weights_scale_ce(rng):
    z, y = rng.standard_normal((8, 20)), rng.integers(0, 20, 8)
    w = np.full(20, 3.0)
    assert float(weighted_ce(Var(z), y, w).data) == pytest.approx(3 * float(weighted_ce(Var(z), y).data))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30)
def test_focal_with_zero_gamma_equals_ce(seed):
    rng = np.random.default_rng(seed)
    z, y = rng.standard_normal((9, 20)) * 3, rng.integers(0, 20, 9)
    assert float(focal(Var(z), y, 0.0).data) == float(weighted_ce(Var(z), y).data)


def test_focal_half_probability():
    z = np.array([[0.0, 0.0]])
    assert float(focal(Var(z), np.array([0]), 2.0).data) == pytest.approx(0.25 * math.log(2), abs=1e-12)
    with pytest.raises(ValueError):
        focal(Var(z), np.array([0]), -1.0)


def test_bce_values():
    assert float(bce_with_logits(Var(np.zeros(5)), np.ones(5, bool)).data) == pytest.approx(math.log(2))
    assert float(bce_with_logits(Var(np.array([50.0, -50.0])), np.array([1, 0])).data) < 1e-20
    assert float(bce_with_logits(Var(np.zeros(0)), np.zeros(0)).data) == 0.0


@pytest.mark.parametrize("kind", ["ce", "focal", "ga", "bce"])
def test_loss_gradients(kind, rng):
    for _ in range(10):
        z = _logits(rng)
        y = rng.integers(0, 20, len(z.data))
        if kind == "ce":
            w = rng.uniform(0.5, 2, 20)
            fn = lambda z: weighted_ce(z, y, w)
        elif kind == "focal":
            fn = lambda z: focal(z, y, 2.0)
        elif kind == "ga":
            w = rng.uniform(0, 27, len(y))
            fn = lambda z: ga_loss(z, y, w)
        else:
            z = Var(rng.standard_normal(15), requires_grad=True)
            t = rng.random(15) < 0.5
            fn = lambda z: bce_with_logits(z, t)
        assert directional_check(fn, [z], rng)[2] < 1e-6


def test_class_weights_from_counts():
    w = class_weights_from_counts([0, 10, 90])
    assert w[0] == pytest.approx(1 / math.log(1.02)) and w[1] > w[2] > 0


# ---------------------------------------------------- neighbourhood statistics

def test_homogeneous_cube_has_zero_weight():
    cube = np.full((7, 7, 7), 9)
    interior = np.argwhere(np.ones((5, 5, 5), bool)) + 1
    assert np.all(ga_weights(cube, interior) == 0)
    s = local_stats(cube, (3, 3, 3))
    assert (s.m_lga, s.xi, s.k) == (0, 0.0, 26)


def test_isolated_voxel_reaches_26():
    g = np.full((3, 3, 3), 3)
    g[1, 1, 1] = 5
    s = local_stats(g, (1, 1, 1))
    p = np.array([26, 1]) / 27
    assert s.m_lga == 26 and s.eta == 1.0
    assert s.xi == pytest.approx(-(p * np.log(p)).sum())
    assert ga_weights(g, np.array([[1, 1, 1]]))[0] == pytest.approx(26 + s.xi)


def test_planar_boundary_is_downscaled():
    g = np.full((3, 3, 3), 1)
    g[2] = 2
    s = local_stats(g, (1, 1, 1))
    assert s.m_lga == 9 and s.eta < 1 and 0 < s.xi <= math.log(2)


def test_border_clipping_reduces_k():
    g = np.zeros((4, 4, 4), int)
    assert local_stats(g, (0, 0, 0)).k == 7 and local_stats(g, (0, 1, 1)).k == 17


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40)
def test_vectorized_weights_match_local_stats(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(2, 4))
    lab = rng.integers(0, int(rng.integers(1, 5)), tuple(rng.integers(1, 6, dim)))
    coords = np.argwhere(np.ones(lab.shape, bool))
    w = ga_weights(lab, coords)
    for c, wi in zip(coords, w):
        s = local_stats(lab, c)
        assert 0 <= s.m_lga <= s.k and 0 <= s.eta <= 1
        assert s.xi <= math.log(len(s.classes)) + 1e-12
        assert abs(s.xi + s.eta * s.m_lga - wi) <= 1e-12


def test_ga_loss_is_nonnegative_and_zero_on_zero_weights(rng):
    z, y = rng.standard_normal((6, 20)), rng.integers(0, 20, 6)
    assert float(ga_loss(Var(z), y, np.zeros(6)).data) == 0.0
    assert float(ga_loss(Var(z), y, rng.uniform(0, 5, 6)).data) > 0


# ---------------------------------------------------------- combined losses

def test_loss_recomposition(rng):
    z, y = rng.standard_normal((10, 20)), rng.integers(0, 20, 10)
    comp = {2: bce_with_logits(Var(rng.standard_normal(4)), rng.random(4) < 0.5),
            1: bce_with_logits(Var(rng.standard_normal(6)), rng.random(6) < 0.5)}
    cfg = LossConfig2D(alpha=0.3, beta=0.7, omega=2.0, gamma=2.0)
    expect = (0.3 * weighted_ce(Var(z), y).data + 0.7 * focal(Var(z), y, 2.0).data
              + 2.0 * (comp[1].data + comp[2].data))
    assert loss_2d(Var(z), y, comp, cfg).item() == pytest.approx(float(expect), rel=1e-12)
    w = rng.uniform(0, 3, 10)
    t = loss_3d(Var(z), y, w, comp, LossConfig3D(lam=1.0))
    assert t.item() == pytest.approx(float(comp[1].data + comp[2].data), rel=1e-12)
    assert loss_3d(Var(z), y, np.zeros(10), {}, LossConfig3D()).item() == 0.0


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig2D(alpha=-1)
    with pytest.raises(ValueError):
        LossConfig2D(class_weights=(1.0, 0.0))
    with pytest.raises(ValueError):
        LossConfig3D(lam=1.5)


def test_empty_inputs_give_zero_loss():
    z = Var(np.zeros((0, 20)))
    y = np.zeros(0, int)
    assert float(weighted_ce(z, y).data) == float(focal(z, y).data) == float(ga_loss(z, y, y).data) == 0.0
    with ag.Tape():
        pass


# ------------------------------------------------------------------ metrics

def test_hand_case_mean_is_quarter():
    pred = np.ones((2, 2, 2), int)
    gt = pred.copy()
    gt[1] = 2
    per, mean = metrics.miou(pred, gt)
    assert per[1] == 0.5 and per[2] == 0.0 and mean == 0.25


def test_identical_grids_score_one(rng):
    g = rng.integers(0, 20, (5, 5, 5))
    per, mean = metrics.miou(g, g)
    assert mean == 1.0 and metrics.completion_iou(g, g) == 1.0


def test_completion_iou_counts():
    a = np.array([1, 1, 0, 0])
    b = np.array([0, 3, 2, 0])
    assert metrics.completion_iou(a, b) == pytest.approx(1 / 3)
    assert metrics.completion_iou(np.array([1, 0]), np.array([0, 1])) == 0.0


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=60)
def test_metrics_match_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 6, 3))
    k = int(rng.integers(2, 21))
    p, g = rng.integers(0, k, shape), rng.integers(0, k, shape)
    inv = rng.random(shape) < 0.1
    r = metrics.evaluate(p, g, inv)
    o_per, o_mean, o_comp = iou_oracle(p, g, inv)
    assert {c for c in range(1, 20) if not np.isnan(r.per_class[c])} == set(o_per)
    assert all(r.per_class[c] == v for c, v in o_per.items())
    assert r.mean == o_mean and r.completion == o_comp == metrics.completion_iou(p, g, inv)


def test_invalid_voxels_are_ignored():
    p = np.array([1, 2, 2])
    g = np.array([1, 1, 2])
    assert metrics.miou(p, g, np.array([False, True, False]))[1] == 1.0


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        metrics.miou(np.zeros(3, int), np.zeros(4, int))
    with pytest.raises(ValueError):
        metrics.completion_iou(np.zeros(3), np.zeros(4))


def test_report_formats():
    r = metrics.evaluate(np.array([1, 1, 0]), np.array([1, 0, 0]))
    text = metrics.format_report(r)
    assert text.splitlines()[0].split()[-1] == f"{r.completion:.6f}"
    assert len(text.splitlines()) == 21
    csv = metrics.format_report(r, "csv").splitlines()
    assert len(csv) == 2 and len(csv[0].split(",")) == len(csv[1].split(",")) == 21
    with pytest.raises(ValueError):
        metrics.format_report(r, "xml")
