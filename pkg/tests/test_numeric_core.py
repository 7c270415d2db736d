import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dkroot import tensor as T
from dkroot.optim import (
    Adam,
    ParamStore,
    Rng,
    adam_step,
    finite_diff_check,
    grad,
    load_checkpoint,
    save_checkpoint,
)
from dkroot.tensor import NumericError, Tensor, no_grad


def store(**arrays):
    ps = ParamStore()
    for k, v in arrays.items():
        ps.add(k, v)
    return ps


# forward examples ------------------------------------------------------------------


def test_conv1d_examples():
    x = Tensor([[1.0, 2.0, 3.0]])
    assert np.array_equal(T.conv1d(x, Tensor([[[1.0]]]), Tensor([0.0])).data, x.data)
    assert np.array_equal(T.conv1d(x, Tensor([[[1.0, 1.0, 1.0]]])).data, [[3.0, 6.0, 5.0]])
    out = T.conv1d(x, Tensor(np.zeros((1, 1, 3))), Tensor([2.5]))
    assert np.array_equal(out.data, [[2.5, 2.5, 2.5]])


def test_conv1d_matches_direct_loop_and_stride():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(2, 3, 9)), rng.normal(size=(4, 3, 5)), rng.normal(size=4)
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    ref = np.zeros((2, 4, 9))
    for n in range(2):
        for o in range(4):
            for t in range(9):
                ref[n, o, t] = (xp[n, :, t:t + 5] * w[o]).sum() + b[o]
    out = T.conv1d(Tensor(x), Tensor(w), Tensor(b)).data
    assert np.allclose(out, ref, atol=1e-12)
    strided = T.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=2).data
    assert strided.shape == (2, 4, 5)
    assert np.allclose(strided, ref[:, :, ::2], atol=1e-12)


def test_conv1d_shape_errors():
    with pytest.raises(ValueError):
        T.conv1d(Tensor(np.zeros((2, 5))), Tensor(np.zeros((1, 3, 3))))
    with pytest.raises(ValueError):
        T.conv1d(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 1, 2))))


def test_dense_examples():
    x = Tensor([1.0, 1.0])
    assert np.array_equal(T.dense(x, Tensor(np.eye(2))).data, [1.0, 1.0])
    assert np.array_equal(T.dense(x, Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([0.0, 0.0])).data, [3.0, 7.0])
    assert np.array_equal(T.dense(x, Tensor(np.zeros((1, 2))), Tensor([5.0])).data, [5.0])
    with pytest.raises(ValueError):
        T.dense(x, Tensor(np.zeros((2, 3))))


def test_softmax_examples():
    p = T.softmax(Tensor(np.zeros(6))).data
    assert np.allclose(p, 1 / 6)
    assert np.allclose(T.softmax(Tensor([0.0, math.log(3)])).data, [0.25, 0.75], atol=1e-15)
    x = np.random.default_rng(1).normal(size=8)
    assert np.allclose(T.softmax(Tensor(x + 123.4)).data, T.softmax(Tensor(x)).data, atol=1e-12)
    with pytest.raises(ValueError):
        T.softmax(Tensor(np.zeros(0)))


def test_logsumexp_is_stable_and_masked():
    x = Tensor([1e4, 1e4 - 1.0, -1e4])
    assert np.isclose(T.logsumexp(x, axis=0).data, 1e4 + math.log(1 + math.exp(-1)))
    m = T.logsumexp(Tensor([[0.0, 50.0], [1.0, 2.0]]), axis=1, mask=[[True, False], [True, True]])
    assert np.allclose(m.data, [0.0, math.log(math.e + math.e**2)])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=12))
def test_softmax_is_a_simplex_point(xs):
    p = T.softmax(Tensor(xs)).data
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-9


def test_non_finite_is_rejected():
    with pytest.raises(NumericError):
        T.exp(Tensor([1000.0]))
    with pytest.raises(NumericError):
        T.l2_normalize(Tensor([0.0, 0.0]))


# gradients -----------------------------------------------------------------------------


def test_grad_trivial_cases():
    x = np.array([1.0, -2.0, 3.0])
    ps = store(w=np.array([0.5, 0.1, -0.3]))
    g = grad(lambda: T.tsum(ps["w"] * x), ps)
    assert np.array_equal(g["w"], x)
    g = grad(lambda: T.tsum(T.square(ps["w"])), ps)
    assert np.allclose(g["w"], 2 * ps["w"].data)


def test_grad_rejects_non_scalar():
    ps = store(w=np.ones(3))
    with pytest.raises(ValueError):
        grad(lambda: ps["w"] * 2.0, ps)


def test_two_layer_net_matches_finite_differences():
    rng = np.random.default_rng(3)
    ps = store(w1=rng.normal(size=(5, 4)), b1=rng.normal(size=5), w2=rng.normal(size=(3, 5)))
    x = rng.normal(size=(6, 4))

    def loss():
        h = T.relu(T.dense(x, ps["w1"], ps["b1"]))
        return T.mean(T.square(T.dense(h, ps["w2"])))

    rep = finite_diff_check(loss, ps, step=1e-4, tolerance=1e-4)
    assert rep.passed, str(rep)


def test_finite_difference_bounds():
    c = np.array([0.3, -1.2, 2.0])
    ps = store(w=np.array([0.7, 0.2, -0.4]))
    assert finite_diff_check(lambda: T.tsum(ps["w"] * c), ps).max_error < 1e-10
    assert finite_diff_check(lambda: T.tsum(T.square(ps["w"])), ps, step=1e-4).max_error < 1e-6
    with pytest.raises(ValueError):
        finite_diff_check(lambda: T.tsum(ps["w"]), ps, step=0)


PRIMITIVES = {
    "add": lambda a, b: T.tsum(T.square(a + b)),
    "mul": lambda a, b: T.tsum(a * b * a),
    "div": lambda a, b: T.tsum(a / (T.square(b) + 1.0)),
    "sqrt": lambda a, b: T.tsum(T.sqrt(T.square(a) + 1.0)),
    "exp_log": lambda a, b: T.tsum(T.log(T.exp(a) + 1.0) * b),
    "relu": lambda a, b: T.tsum(T.relu(a) * b),
    "reshape_transpose": lambda a, b: T.tsum(T.square(T.transpose(T.reshape(a, (4, 3))))),
    "concat": lambda a, b: T.tsum(T.square(T.concat([a, b], axis=1))),
    "take": lambda a, b: T.tsum(T.square(a[1:, ::2])),
    "broadcast": lambda a, b: T.tsum(T.broadcast_to(T.reshape(a[0], (1, 4)), (5, 4)) * T.mean(b)),
    "upsample": lambda a, b: T.tsum(T.square(T.upsample(a, 2))),
    "logsumexp": lambda a, b: T.tsum(T.logsumexp(a, axis=1)),
    "log_softmax": lambda a, b: T.tsum(T.log_softmax(a, axis=1) * b),
    "softmax": lambda a, b: T.tsum(T.softmax(a, axis=0) * b),
    "l2_normalize": lambda a, b: T.tsum(T.l2_normalize(a, axis=1) * b),
    "matmul": lambda a, b: T.tsum(T.square(a @ T.transpose(b))),
    "layer_norm": lambda a, b: T.tsum(T.layer_norm(a, axes=(0, 1)) * b),
    "mse": lambda a, b: T.mse(a, b),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    ps = store(a=rng.normal(size=(3, 4)) + 0.05, b=rng.normal(size=(3, 4)))
    fn = PRIMITIVES[name]
    rep = finite_diff_check(lambda: fn(ps["a"], ps["b"]), ps, step=1e-5, tolerance=1e-5)
    assert rep.passed, str(rep)


def test_conv_and_embedding_gradients():
    rng = np.random.default_rng(5)
    ps = store(x=rng.normal(size=(2, 3, 7)), w=rng.normal(size=(4, 3, 3)), b=rng.normal(size=4),
               table=rng.normal(size=(6, 3)))
    idx = np.array([0, 2, 2, 5])

    def loss():
        h = T.conv1d(ps["x"], ps["w"], ps["b"], stride=2)
        e = T.embedding(ps["table"], idx)
        return T.tsum(T.square(h)) + T.tsum(T.square(e))

    assert finite_diff_check(loss, ps, step=1e-5, tolerance=1e-5).passed


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = w * 2.0
    assert not y.requires_grad


# optimizer -----------------------------------------------------------------------------


def test_adam_examples():
    p, s = adam_step({"w": np.array(0.0)}, {"w": np.array(1.0)}, {}, lr=0.1)
    assert abs(float(p["w"]) + 0.1) < 1e-6
    p0 = {"w": np.array([1.0, 2.0])}
    state = {"t": 3, "m": {"w": np.array([0.5, 0.5])}, "v": {"w": np.array([0.2, 0.2])}}
    p1, s1 = adam_step(p0, {"w": np.zeros(2)}, state)
    assert np.allclose(s1["m"]["w"], 0.45) and np.allclose(s1["v"]["w"], 0.2 * 0.999)
    p2, s2 = adam_step(p0, {"w": np.zeros(2)}, state)
    assert np.array_equal(p1["w"], p2["w"])
    p_zero, _ = adam_step(p0, {"w": np.zeros(2)}, {})
    assert np.array_equal(p_zero["w"], p0["w"])
    with pytest.raises(NumericError):
        adam_step(p0, {"w": np.array([np.nan, 0.0])}, {})


def test_adam_class_minimizes_quadratic():
    ps = store(w=np.array([3.0, -2.0]))
    opt = Adam(ps, lr=0.1)
    for _ in range(300):
        grad(lambda: T.tsum(T.square(ps["w"])), ps)
        opt.step()
    assert np.all(np.abs(ps["w"].data) < 0.05)


# seeding and checkpoints -----------------------------------------------------------------


def test_rng_determinism_and_split():
    assert np.array_equal(Rng(42).normal(size=5), Rng(42).normal(size=5))
    a = Rng(42).split("a").split("bc").integers(0, 2**31, 4)
    b = Rng(42).split("ab").split("c").integers(0, 2**31, 4)
    assert not np.array_equal(a, b)
    assert np.array_equal(Rng(7).split(3).uniform(size=3), Rng(7).split("3").uniform(size=3))
    assert not np.array_equal(Rng(7).split("x").uniform(size=3), Rng(7).uniform(size=3))


def test_checkpoint_roundtrip_and_fingerprint(tmp_path):
    ps = store(a=np.arange(6.0).reshape(2, 3), b=np.array([1.5]))
    save_checkpoint(tmp_path / "c.npz", ps, {"note": "x"}, "abc")
    arrays, meta = load_checkpoint(tmp_path / "c.npz", "abc")
    assert list(arrays) == ["a", "b"] and np.array_equal(arrays["a"], ps["a"].data)
    assert meta == {"note": "x"}
    with pytest.raises(ValueError, match="fingerprint"):
        load_checkpoint(tmp_path / "c.npz", "other")


def test_paramstore_contract():
    ps = store(a=np.zeros(2))
    with pytest.raises(KeyError):
        ps.add("a", np.zeros(1))
    with pytest.raises(ValueError):
        ps.load_arrays({"a": np.zeros(3)})
    grad(lambda: T.tsum(ps["a"] * 3.0), ps)
    assert ps["a"].grad.shape == ps["a"].data.shape
