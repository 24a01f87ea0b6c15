import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsessc.oracles import directional_check, gradient_trials
from sparsessc.sparse import autograd as ag
from sparsessc.sparse.autograd import Tape, Var


def _v(rng, *shape, positive=False):
    a = rng.standard_normal(shape)
    if positive:
        a = np.abs(a) + 0.5
    return Var(a, requires_grad=True)


UNARY = {
    "neg": (ag.neg, False),
    "relu": (ag.relu, False),
    "sigmoid": (ag.sigmoid, False),
    "tanh": (ag.tanh, False),
    "exp": (ag.exp, False),
    "log": (ag.log, True),
    "absolute": (ag.absolute, False),
    "clamp_min": (lambda a: ag.clamp_min(a, 0.1), False),
    "sum0": (lambda a: ag.sum(a, axis=0), False),
    "mean1": (lambda a: ag.mean(a, axis=1, keepdims=True), False),
    "reshape": (lambda a: ag.reshape(a, (-1,)), False),
    "take_rows": (lambda a: ag.take_rows(a, np.array([2, -1, 0, 2])), False),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    fn, positive = UNARY[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(20):
        a = _v(rng, 4, 3, positive=positive)
        r = rng.standard_normal(fn(Var(a.data)).shape)
        _, _, err = directional_check(lambda a: ag.sum(ag.mul(fn(a), r)), [a], rng)
        assert err < 1e-4


BINARY = {
    "add": ag.add, "sub": ag.sub, "mul": ag.mul, "div": ag.div,
    "concat": lambda a, b: ag.concat([a, b], axis=1),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients_with_broadcast(name):
    fn = BINARY[name]
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = _v(rng, 5, 3)
        b = _v(rng, 5, 3, positive=True) if name != "concat" else _v(rng, 5, 2)
        r = rng.standard_normal(fn(Var(a.data), Var(b.data)).shape)
        assert directional_check(lambda a, b: ag.sum(ag.mul(fn(a, b), r)), [a, b], rng)[2] < 1e-4
    # broadcasting a row vector
    a, b = _v(rng, 5, 3), _v(rng, 1, 3, positive=True)
    if name != "concat":
        assert directional_check(lambda a, b: ag.sum(fn(a, b)), [a, b], rng)[2] < 1e-4


def test_matmul_gradient(rng):
    a, b = _v(rng, 4, 3), _v(rng, 3, 2)
    assert directional_check(lambda a, b: ag.sum(ag.tanh(ag.matmul(a, b))), [a, b], rng)[2] < 1e-4


def test_gradient_is_repeatable_and_tape_scoped(rng):
    a = _v(rng, 3)
    with Tape() as tape:
        y = ag.sum(ag.mul(a, a))
    g1 = tape.gradient(y, [a])[0]
    g2 = tape.gradient(y, [a])[0]
    assert np.array_equal(g1, g2)
    assert np.allclose(g1, 2 * a.data)
    # operations outside a tape are not recorded
    z = ag.mul(a, 3.0)
    assert len(tape) == 2 and z.requires_grad


def test_unused_source_gets_zero(rng):
    a, b = _v(rng, 3), _v(rng, 2)
    with Tape() as tape:
        y = ag.sum(a)
    ga, gb = tape.gradient(y, [a, b])
    assert np.array_equal(ga, np.ones(3)) and np.array_equal(gb, np.zeros(2))


def test_constants_do_not_receive_gradients(rng):
    a = _v(rng, 3)
    c = Var(np.ones(3))
    with Tape() as tape:
        y = ag.sum(ag.mul(a, c))
    assert np.array_equal(tape.gradient(y, [c])[0], np.zeros(3))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_sigmoid_is_stable_and_bounded(xs):
    s = ag.sigmoid(Var(np.array(xs))).data
    assert np.all((s >= 0) & (s <= 1)) and np.all(np.isfinite(s))


def test_sigmoid_extremes():
    s = ag.sigmoid(Var(np.array([-1e6, 0.0, 1e6]))).data
    assert s[0] == 0.0 and s[1] == 0.5 and s[2] == 1.0


def test_fd_runner_flags_a_wrong_gradient():
    def bad_square(a):
        return ag.record(a.data ** 2, (a,), lambda g: (g * 2.2 * a.data,))

    def make(rng):
        a = Var(rng.standard_normal(4), requires_grad=True)
        return (lambda a: ag.sum(bad_square(a))), [a]

    worst, skipped = gradient_trials(make, 10, np.random.default_rng(0), 1e-4)
    assert worst > 0.05 and skipped == 0


def test_fd_runner_redraws_kink_crossings():
    calls = []

    def make(rng):
        calls.append(1)
        # the first draw sits exactly on the relu kink
        x0 = np.zeros(3) if len(calls) == 1 else rng.standard_normal(3) + 3.0
        a = Var(x0, requires_grad=True)
        return (lambda a: ag.sum(ag.relu(a))), [a]

    worst, skipped = gradient_trials(make, 3, np.random.default_rng(0), 1e-4)
    assert skipped == 1 and worst < 1e-8
