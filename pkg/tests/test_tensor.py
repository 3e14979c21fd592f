import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from memevilt import tensor as tm
from memevilt.errors import ParameterError, ShapeError
from memevilt.rng import RngStream
from memevilt.tensor import Tensor


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


# matmul

def test_matmul_identity():
    out = tm.matmul(T(np.eye(2)), T([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_scalar_case():
    assert tm.matmul(T([[2]]), T([[3]])).data.tolist() == [[6]]


def test_matmul_hand_expansion():
    out = tm.matmul(T([[1, 2], [3, 4]]), T([[5, 6], [7, 8]]))
    np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        tm.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


# layer_norm

@pytest.mark.parametrize("c", [-3.5, 0.0, 7.0])
def test_layer_norm_constant_input(c):
    out = tm.layer_norm(T([c] * 4), T(np.ones(4)), T(np.zeros(4)), 1e-5)
    np.testing.assert_array_equal(out.data, np.zeros(4))


def test_layer_norm_hand_values():
    out = tm.layer_norm(T([1, -1]), T([1, 1]), T([0, 0]), 0.0)
    np.testing.assert_allclose(out.data, [1, -1], atol=1e-15)
    out = tm.layer_norm(T([1, -1]), T([2, 2]), T([1, 1]), 0.0)
    np.testing.assert_allclose(out.data, [3, -1], atol=1e-15)


def test_layer_norm_empty_input():
    with pytest.raises(ShapeError):
        tm.layer_norm(T(np.zeros(0)), T(np.zeros(0)), T(np.zeros(0)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 32), elements=st.floats(-1e3, 1e3)))
def test_layer_norm_standardizes(x):
    if x.var() < 1e-2:
        return
    out = tm.layer_norm(T(x), T(np.ones(x.size)), T(np.zeros(x.size)), 1e-5).data
    assert abs(out.mean()) <= 1e-9
    assert abs(out.var() - 1.0) <= 1e-6 + 1e-5 / x.var()


# softmax

def test_softmax_examples():
    np.testing.assert_allclose(tm.softmax(T([0, 0])).data, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(tm.softmax(T([math.log(2), 0])).data, [2 / 3, 1 / 3], atol=1e-15)
    np.testing.assert_allclose(tm.softmax(T([1000, 1000])).data, [0.5, 0.5], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 16), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(x, c):
    y = tm.softmax(T(x)).data
    assert abs(y.sum() - 1) <= 1e-12
    assert ((y > 0) & (y <= 1)).all()
    np.testing.assert_allclose(tm.softmax(T(x + c)).data, y, atol=1e-12)


def test_softmax_mask_gives_exact_zero():
    x = T(np.random.default_rng(0).normal(size=(2, 3, 5)))
    mask = np.array([[1, 1, 0, 1, 0], [0, 0, 0, 0, 1]])
    y = tm.softmax(x, key_mask=mask).data
    assert (y[0][:, [2, 4]] == 0).all() and (y[1][:, :4] == 0).all()
    np.testing.assert_allclose(y.sum(-1), 1, atol=1e-12)


def test_softmax_empty():
    with pytest.raises(ShapeError):
        tm.softmax(T(np.zeros(0)))


# activations

def test_activation_examples():
    assert tm.sigmoid(T([0.0])).data[0] == 0.5
    assert tm.sigmoid(T([math.log(3)])).data[0] == pytest.approx(0.75, abs=1e-15)
    np.testing.assert_array_equal(tm.relu(T([-2, 0, 3])).data, [0, 0, 3])
    np.testing.assert_allclose(tm.tanh(T([0.5])).data, [math.tanh(0.5)])


def test_gelu_matches_erf_form():
    x = np.linspace(-5, 5, 41)
    expected = [v * 0.5 * (1 + math.erf(v / math.sqrt(2))) for v in x]
    np.testing.assert_allclose(tm.gelu(T(x)).data, expected, rtol=1e-14, atol=1e-15)


def test_sigmoid_extremes_stay_in_range():
    y = tm.sigmoid(T([-700.0, 700.0, -30, 30])).data
    assert (y >= 0).all() and (y <= 1).all() and np.isfinite(y).all()


# dropout

def test_dropout_infer_is_identity():
    x = T(np.random.default_rng(1).normal(size=(4, 5)))
    assert tm.dropout(x, 0.3, train=False) is x
    assert tm.dropout(x, 0.0, train=True, rng=RngStream(0)) is x


def test_dropout_inverted_mean_seed_42():
    out = tm.dropout(T(np.ones(10000)), 0.3, True, RngStream(42)).data
    assert abs(out.mean() - 1.0) <= 0.05
    survivors = out[out != 0]
    np.testing.assert_allclose(survivors, 1 / 0.7)


def test_dropout_same_stream_same_mask():
    a = tm.dropout(T(np.ones(500)), 0.5, True, RngStream(9, 3)).data
    b = tm.dropout(T(np.ones(500)), 0.5, True, RngStream(9, 3)).data
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_dropout_rejects_bad_rate(rate):
    with pytest.raises(ParameterError):
        tm.dropout(T([1.0]), rate, True, RngStream(0))


# shape algebra and finiteness

def test_no_silent_broadcast():
    with pytest.raises(ShapeError):
        tm.add(T(np.ones((2, 3))), T(np.ones(3)))
    with pytest.raises(ShapeError):
        tm.mul(T(np.ones((2, 3))), T(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        tm.add_bias(T(np.ones((2, 3))), T(np.ones(2)))


def test_non_finite_values_rejected():
    with pytest.raises(FloatingPointError):
        Tensor([1.0, np.nan])


def test_backward_accumulates_shared_use():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = tm.sum_all(tm.add(tm.mul(x, x), x))
    y.backward()
    np.testing.assert_array_equal(x.grad, [3.0, 5.0])


def test_bce_logits_stable():
    loss = tm.bce_with_logits(T([1e4, -1e4]), [1, 0])
    assert loss.item() == 0.0
    np.testing.assert_allclose(tm.bce_per_sample([0.0], [1]), [math.log(2)])
