import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core_tensor import create_tensor, matmul, reshape
from errors import NonFinite, ShapeMismatch


def test_create_tensor_row_major():
    t = create_tensor((2, 2), [1, 2, 3, 4])
    assert t[1, 1] == 4
    assert t[0, 1] == 2
    assert t.dtype == np.float32


def test_create_tensor_image():
    t = create_tensor((28, 28, 1), range(784))
    assert t.shape == (28, 28, 1)
    assert t[1, 0, 0] == 28


def test_create_tensor_count_mismatch():
    with pytest.raises(ShapeMismatch):
        create_tensor((28, 27, 1), range(784))


def test_create_tensor_rejects_non_finite():
    with pytest.raises(NonFinite):
        create_tensor((2,), [1.0, float("nan")])
    with pytest.raises(NonFinite):
        create_tensor((1,), [float("inf")])


def test_create_tensor_is_immutable():
    t = create_tensor((2,), [1, 2])
    with pytest.raises(ValueError):
        t[0] = 5


def test_reshape_flatten_feature_map():
    t = create_tensor((7, 7, 64), np.arange(3136))
    flat = reshape(t, (3136,))
    assert flat.shape == (3136,)
    assert np.array_equal(flat, np.arange(3136, dtype=np.float32))


def test_reshape_identity_and_mismatch():
    t = create_tensor((7, 7, 64), np.zeros(3136))
    assert np.array_equal(reshape(t, (7, 7, 64)), t)
    with pytest.raises(ShapeMismatch):
        reshape(t, (3000,))


def test_matmul_examples():
    a = create_tensor((2, 2), [1, 2, 3, 4])
    eye = create_tensor((2, 2), [1, 0, 0, 1])
    assert np.array_equal(matmul(eye, a), a)
    ones = create_tensor((2, 1), [1, 1])
    assert matmul(a, ones).tolist() == [[3.0], [7.0]]


def test_matmul_dense_shape():
    out = matmul(np.zeros((1, 3136), np.float32), np.zeros((3136, 64), np.float32))
    assert out.shape == (1, 64)


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeMismatch):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeMismatch):
        matmul(np.zeros(3), np.zeros((3, 1)))


def test_matmul_rejects_overflow():
    big = np.full((1, 2), 3e38, np.float32)
    with pytest.raises(NonFinite):
        matmul(big, np.ones((2, 1), np.float32))


def test_reshape_allows_empty_batch():
    assert reshape(np.zeros((0, 7, 7, 64), np.float32), (0, 3136)).shape == (0, 3136)
    with pytest.raises(ShapeMismatch):
        reshape(np.zeros((2, 3)), (-1, 3))


shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4)


@given(shape=shapes, data=st.data())
def test_round_trip_row_major(shape, data):
    n = int(np.prod(shape))
    values = data.draw(st.lists(st.integers(-1000, 1000), min_size=n, max_size=n))
    t = create_tensor(shape, values)
    assert t.ravel().tolist() == [float(v) for v in values]


@given(shape=shapes)
def test_reshape_inverse_bitwise(shape):
    n = int(np.prod(shape))
    t = create_tensor(shape, np.random.default_rng(n).standard_normal(n))
    back = reshape(reshape(t, (n,)), t.shape)
    assert back.tobytes() == t.tobytes()


small_ints = st.integers(-5, 5)


@settings(max_examples=50)
@given(m=st.integers(1, 4), k=st.integers(1, 4), p=st.integers(1, 4), n=st.integers(1, 4), data=st.data())
def test_matmul_associative_small_integers(m, k, p, n, data):
    def draw(r, c):
        return np.array(data.draw(st.lists(small_ints, min_size=r * c, max_size=r * c)), dtype=np.float64).reshape(r, c)

    a, b, c = draw(m, k), draw(k, p), draw(p, n)
    assert np.array_equal(matmul(matmul(a, b), c), matmul(a, matmul(b, c)))
