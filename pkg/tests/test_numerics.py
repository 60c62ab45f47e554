import itertools
import math

import numpy as np
import pytest

from gradcheck import check
from laneatt import numerics as nx
from laneatt.errors import DataError, DimensionError, TapeError

rng = np.random.default_rng(1234)


def T(a, grad=False):
    return nx.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- conv2d


def test_conv_identity_kernel_is_identity():
    x = rng.normal(size=(4, 5, 6))
    k = np.eye(4).reshape(4, 4, 1, 1)
    out = nx.conv2d(T(x), T(k))
    assert np.array_equal(out.data, x)


def test_conv_zero_kernel():
    out = nx.conv2d(T(rng.normal(size=(2, 7, 9))), T(np.zeros((3, 2, 3, 3))), stride=2, padding=1)
    assert out.shape == (3, 4, 5)
    assert not out.data.any()


@pytest.mark.parametrize("h,w,k,stride,pad", [(7, 9, 3, 2, 1), (8, 8, 1, 1, 0), (6, 5, 3, 1, 0), (9, 9, 5, 3, 2)])
def test_conv_output_shape(h, w, k, stride, pad):
    out = nx.conv2d(T(np.ones((2, h, w))), T(np.ones((3, 2, k, k))), stride=stride, padding=pad)
    assert out.shape == (3, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)


def test_conv_matches_loop_oracle():
    x = rng.normal(size=(2, 6, 7))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = nx.conv2d(T(x), T(k), T(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for o, r, c in itertools.product(range(3), range(out.shape[1]), range(out.shape[2])):
        ref[o, r, c] = np.sum(xp[:, 2 * r : 2 * r + 3, 2 * c : 2 * c + 3] * k[o]) + b[o]
    assert np.allclose(out, ref, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        nx.conv2d(T(np.ones((3, 4, 4))), T(np.ones((2, 2, 1, 1))))


def test_conv_mac_count_example():
    nx.reset_mac_counter()
    nx.conv2d(T(np.zeros((512, 12, 20))), T(np.zeros((64, 512, 1, 1))))
    assert nx.mac_total() == 7_864_320
    # loop-count oracle: one MAC per (out channel, in channel, kernel tap, output pixel)
    assert nx.mac_total() == sum(1 for _ in itertools.product(range(64), range(12), range(20))) * 512


def test_conv_mac_additive():
    x, k = T(rng.normal(size=(3, 10, 10))), T(rng.normal(size=(4, 3, 3, 3)))
    nx.reset_mac_counter()
    nx.conv2d(x, k, stride=2, padding=1)
    one = nx.mac_total()
    nx.conv2d(x, k, stride=2, padding=1)
    assert nx.mac_total() == 2 * one


# ---------------------------------------------------------------- dense / matmul


def test_dense_examples():
    assert np.array_equal(nx.dense(T([1, 1]), T([[1, 2], [3, 4]]), T([0, 0])).data, [3, 7])
    x = rng.normal(size=5)
    assert np.array_equal(nx.dense(T(x), T(np.eye(5)), T(np.zeros(5))).data, x)
    b = rng.normal(size=3)
    assert np.array_equal(nx.dense(T(np.zeros(4)), T(rng.normal(size=(3, 4))), T(b)).data, b)


def test_dense_mac_count():
    nx.reset_mac_counter()
    assert nx.mac_total() == 0
    nx.dense(T(np.ones(3)), T(np.ones((2, 3))), T(np.zeros(2)))
    assert nx.mac_total() == 6


def test_dense_dimension_error():
    with pytest.raises(DimensionError):
        nx.dense(T(np.ones(4)), T(np.ones((2, 3))), T(np.zeros(2)))
    with pytest.raises(DimensionError):
        nx.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


def test_mac_counter_deterministic():
    def run():
        nx.reset_mac_counter()
        nx.conv2d(T(np.ones((2, 8, 8))), T(np.ones((3, 2, 3, 3))), padding=1)
        nx.matmul(T(np.ones((4, 5))), T(np.ones((5, 6))))
        nx.dense(T(np.ones((7, 3))), T(np.ones((2, 3))), T(np.zeros(2)))
        return nx.mac_total()

    assert run() == run() == 3 * 2 * 9 * 64 + 4 * 5 * 6 + 7 * 2 * 3


def test_backward_not_counted():
    x = T(rng.normal(size=(2, 3)), grad=True)
    w = T(rng.normal(size=(4, 3)), grad=True)
    with nx.Tape() as tape:
        out = nx.tsum(nx.dense(x, w, T(np.zeros(4))))
    nx.reset_mac_counter()
    nx.backward(tape, out)
    assert nx.mac_total() == 0


# ---------------------------------------------------------------- softmax


def test_softmax_examples():
    assert nx.softmax(T([3.7])).data.tolist() == [1.0]
    assert np.allclose(nx.softmax(T([2.0] * 4)).data, 0.25, atol=0, rtol=0)
    assert np.allclose(nx.softmax(T([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-15)


def test_softmax_probability_vector_and_shift_invariance():
    for _ in range(50):
        z = rng.normal(scale=30, size=rng.integers(1, 20))
        p = nx.softmax(T(z)).data
        assert (p >= 0).all() and abs(p.sum() - 1) <= 1e-9
        assert np.allclose(nx.softmax(T(z + rng.normal() * 100)).data, p, atol=1e-12)


def test_softmax_extreme_logits_finite():
    p = nx.softmax(T([1000.0, -1000.0, 0.0])).data
    assert np.all(np.isfinite(p)) and p[0] == 1.0


# ---------------------------------------------------------------- backward


def test_backward_square():
    x = T([3.0], grad=True)
    with nx.Tape() as tape:
        y = x * x
    nx.backward(tape, y)
    assert x.grad.tolist() == [6.0]


def test_backward_constant_function():
    x = T(rng.normal(size=6), grad=True)
    with nx.Tape() as tape:
        y = nx.tsum(nx.softmax(x))
    nx.backward(tape, y)
    assert np.allclose(x.grad, 0.0, atol=1e-15)


def test_backward_output_not_on_tape():
    x = T([1.0], grad=True)
    with nx.Tape():
        pass
    with nx.Tape() as tape2:
        pass
    y = x * 2.0  # computed outside any tape
    with pytest.raises(TapeError):
        nx.backward(tape2, y)


def test_backward_needs_scalar():
    x = T(np.ones(3), grad=True)
    with nx.Tape() as tape:
        y = x * 2.0
    with pytest.raises(DimensionError):
        nx.backward(tape, y)


def test_tape_is_topologically_ordered():
    x = T(rng.normal(size=3), grad=True)
    with nx.Tape() as tape:
        y = nx.tsum(nx.exp(x) * x + x)
    seen = {n for n in tape._leaves}
    for op in tape.ops:
        for t in op.inputs:
            if t._tape is tape:
                assert t.node_id in seen
        seen.add(op.output.node_id)
    assert y.node_id in seen


def test_unreached_leaf_gets_zero_grad():
    a, b = T([1.0, 2.0], grad=True), T([5.0], grad=True)
    with nx.Tape() as tape:
        _ = b * 3.0
        y = nx.tsum(a * a)
    nx.backward(tape, y)
    assert b.grad.tolist() == [0.0]


def test_random_three_layer_composition_gradient():
    x = rng.normal(size=(5,))
    w1, b1 = rng.normal(size=(4, 5)), rng.normal(size=4)
    w2, b2 = rng.normal(size=(3, 4)), rng.normal(size=3)
    w3, b3 = rng.normal(size=(2, 3)), rng.normal(size=2)

    def build(x, w1, b1, w2, b2, w3, b3):
        h = nx.relu(nx.dense(x, w1, b1))
        h = nx.softmax(nx.dense(h, w2, b2))
        return nx.tsum(nx.log_softmax(nx.dense(h, w3, b3)) * nx.Tensor([0.3, -1.2]))

    check(build, [x, w1, b1, w2, b2, w3, b3])


# ------------------------------------------------------- per-primitive gradient checks


POS = rng.uniform(0.5, 2.0, size=(3, 4))
ARB = rng.normal(size=(3, 4))


def _weighted(t):
    # fixed random weights so every output element matters to the scalar
    w = np.random.default_rng(t.size).normal(size=t.shape)
    return nx.tsum(t * nx.Tensor(w))


PRIMITIVES = {
    "add": (lambda a, b: _weighted(nx.add(a, b)), [ARB, rng.normal(size=(3, 4))]),
    "add_broadcast": (lambda a, b: _weighted(nx.add(a, b)), [ARB, rng.normal(size=(1, 4))]),
    "neg": (lambda a: _weighted(nx.neg(a)), [ARB]),
    "mul": (lambda a, b: _weighted(nx.mul(a, b)), [ARB, rng.normal(size=(3, 4))]),
    "power": (lambda a: _weighted(nx.power(a, 3.0)), [POS]),
    "exp": (lambda a: _weighted(nx.exp(a)), [ARB]),
    "log": (lambda a: _weighted(nx.log(a)), [POS]),
    "relu": (lambda a: _weighted(nx.relu(a)), [ARB]),
    "maximum": (lambda a: _weighted(nx.maximum(a, 0.1)), [ARB]),
    "smooth_l1": (lambda a: _weighted(nx.smooth_l1(a, np.full((3, 4), 0.3))), [ARB * 2]),
    "tsum_axis": (lambda a: nx.tsum(nx.tsum(a, axis=1) * nx.Tensor([1.0, -2.0, 0.5])), [ARB]),
    "reshape": (lambda a: _weighted(nx.reshape(a, (4, 3)).reshape(3, 4)), [ARB]),
    "concat": (lambda a, b: _weighted(nx.concat([a, b], axis=1)), [ARB, rng.normal(size=(3, 2))]),
    "take_rows": (lambda a: _weighted(nx.take_rows(a, [2, 0, 2])), [ARB]),
    "gather": (lambda a: _weighted(nx.gather(a, np.array([[0, 5, -1], [11, 5, 3]]))), [ARB]),
    "matmul": (lambda a, b: _weighted(nx.matmul(a, b)), [ARB, rng.normal(size=(4, 4))]),
    "dense_vector": (lambda x, w, b: _weighted(nx.dense(x, w, b)), [rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)]),
    "dense_batch": (lambda x, w, b: _weighted(nx.dense(x, w, b)), [rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)]),
    "softmax": (lambda a: _weighted(nx.softmax(a, axis=1)), [ARB]),
    "log_softmax": (lambda a: _weighted(nx.log_softmax(a, axis=1)), [ARB]),
    "conv2d": (
        lambda x, k, b: _weighted(nx.conv2d(x, k, b, stride=2, padding=1)),
        [rng.normal(size=(3, 5, 6)), rng.normal(size=(2, 3, 3, 3)), rng.normal(size=2)],
    ),
    "conv2d_1x1": (
        lambda x, k: _weighted(nx.conv2d(x, k)),
        [rng.normal(size=(3, 4, 4)), rng.normal(size=(2, 3, 1, 1))],
    ),
    "operators": (lambda a, b: _weighted((a - b) * 2.0 + (1.0 - a) / 4.0 + (-b) ** 2), [ARB, rng.normal(size=(3, 4))]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradient(name):
    build, arrays = PRIMITIVES[name]
    check(build, arrays)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    tensors = {"a": rng.normal(size=(2, 3, 4)), "scalar.like": np.array([1.5]), "mat": rng.normal(size=(5, 1))}
    path = tmp_path / "x.latt"
    nx.save_checkpoint(path, tensors)
    back = nx.load_checkpoint(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert np.array_equal(back[k], tensors[k])


def test_checkpoint_layout(tmp_path):
    path = tmp_path / "x.latt"
    nx.save_checkpoint(path, {"w": np.array([[1.0, 2.0]])})
    raw = path.read_bytes()
    assert raw[:4] == b"LATT"
    assert raw[4:12] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert raw[12:14] == (1).to_bytes(2, "little") and raw[14:15] == b"w"
    assert raw[15] == 2
    assert raw[16:32] == (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
    assert np.frombuffer(raw[32:], dtype="<f8").tolist() == [1.0, 2.0]


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.latt"
    path.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(DataError):
        nx.load_checkpoint(path)


def test_tensor_shape_invariant():
    t = nx.Tensor(rng.normal(size=(2, 3)))
    assert t.size == int(np.prod(t.shape))
