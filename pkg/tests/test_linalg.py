import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdnn import linalg
from hdnn.linalg import (
    ShapeError,
    activate,
    add,
    add_row_broadcast,
    hadamard,
    matmul,
    matmul_python,
)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


@pytest.fixture(params=linalg.available_backends())
def backend(request):
    saved = linalg.BACKEND
    linalg.set_backend(request.param)
    yield request.param
    linalg.set_backend(saved)


def test_identity_passthrough(backend):
    m = np.random.default_rng(0).normal(size=(3, 3))
    assert matmul(np.eye(3), m).tobytes() == m.tobytes()
    assert matmul(m, np.eye(3)).tobytes() == m.tobytes()


def test_scalar_product(backend):
    assert matmul([[2.0]], [[3.0]]).tolist() == [[6.0]]


def test_matches_triple_loop_exactly(backend):
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 4))
    assert matmul(a, b).tobytes() == triple_loop(a, b).tobytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(1, 40), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_backends_agree_bitwise(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    ref = triple_loop(a, b)
    assert matmul_python(a, b).tobytes() == ref.tobytes()
    if "compiled" in linalg.available_backends():
        from hdnn import _kernels

        assert _kernels.matmul(a, b).tobytes() == ref.tobytes()


def test_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_associativity():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a, b, c = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3, 6))
        left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-9 * np.max(np.abs(left))


def test_inputs_not_modified():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    a0, b0 = a.copy(), b.copy()
    out1 = matmul(a, b)
    activate(a, "sigmoid")
    hadamard(a, a)
    assert np.array_equal(a, a0) and np.array_equal(b, b0)
    assert matmul(a, b).tobytes() == out1.tobytes()


def test_sigmoid_and_relu_values():
    assert activate([[0.0]], "sigmoid")[0, 0] == 0.5
    assert activate([[-3.2, 1.5]], "relu").tolist() == [[0.0, 1.5]]


def test_sigmoid_extremes_no_overflow():
    with np.errstate(over="raise"):
        out = activate([[500.0, -500.0]], "sigmoid")
    assert abs(out[0, 0] - 1.0) <= 1e-15
    # exp-with-branch oracle for t < 0
    oracle = np.exp(-500.0) / (1.0 + np.exp(-500.0))
    assert abs(out[0, 1] - 0.0) <= 1e-15 and out[0, 1] == oracle


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=30))
def test_activation_ranges(xs):
    x = np.array([xs])
    s = activate(x, "sigmoid")
    assert np.all((s >= 0.0) & (s <= 1.0))
    assert np.all(s[np.abs(x) < 30] > 0.0) and np.all(s[np.abs(x) < 30] < 1.0)
    assert np.all(activate(x, "relu") >= 0.0)


def test_activate_rejects_non_finite():
    with pytest.raises(ValueError):
        activate([[np.nan]], "sigmoid")
    with pytest.raises(ValueError):
        activate([[1.0]], "tanh")


def test_hadamard():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert hadamard(a, np.ones_like(a)).tobytes() == a.tobytes()
    assert not hadamard(a, np.zeros_like(a)).any()
    assert hadamard(a, [[5.0, 6.0], [7.0, 8.0]]).tolist() == [[5, 12], [21, 32]]
    with pytest.raises(ShapeError):
        hadamard(a, np.ones((2, 3)))


def test_add_and_broadcast():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert add(a, np.zeros_like(a)).tobytes() == a.tobytes()
    loop = np.array([[a[i, j] + b[i, j] for j in range(4)] for i in range(3)])
    assert add(a, b).tobytes() == loop.tobytes()
    assert add_row_broadcast(np.ones((2, 2)), [[1.0, 2.0]]).tolist() == [[2, 3], [2, 3]]
    with pytest.raises(ShapeError):
        add_row_broadcast(np.ones((2, 2)), [[1.0, 2.0, 3.0]])
    with pytest.raises(ShapeError):
        add(a, np.ones((4, 3)))
