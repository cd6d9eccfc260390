"""Dense 2-D kernels that all model math is built on.

Matrices are C-contiguous ``float64`` numpy arrays. ``matmul`` accumulates
each output entry over the inner index strictly left to right, which makes
results (and hence training runs) bitwise reproducible. The compiled kernel
in ``hdnn._kernels`` is used when it was built; otherwise a numpy loop with
the same summation order is used. Both give identical bits.
"""

import numpy as np

try:
    from hdnn import _kernels
except ImportError:  # extension not built
    _kernels = None

__all__ = [
    "ShapeError",
    "BACKEND",
    "available_backends",
    "set_backend",
    "as_matrix",
    "matmul",
    "matmul_python",
    "activate",
    "activation_grad",
    "sigmoid",
    "hadamard",
    "add",
    "add_row_broadcast",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


BACKEND = "compiled" if _kernels is not None else "python"


def available_backends():
    return ["compiled", "python"] if _kernels is not None else ["python"]


def set_backend(name):
    """Select the matmul implementation (``"compiled"`` or ``"python"``)."""
    global BACKEND
    if name not in available_backends():
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    BACKEND = name


def as_matrix(x):
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def _check_finite(x, what):
    if not np.isfinite(x).all():
        raise ValueError(f"{what}: non-finite input")


def matmul_python(a, b):
    """Fixed-order product via one rank-1 update per inner index."""
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if BACKEND == "compiled":
        return _kernels.matmul(a, b)
    return matmul_python(a, b)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # 1/(1+e^-t) for t >= 0 and e^t/(1+e^t) for t < 0; neither overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def activate(x, kind):
    x = as_matrix(x)
    _check_finite(x, "activate")
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(pre, post, kind):
    """Derivative of the activation given its input and output.

    The ReLU subgradient at 0 is taken as 0.
    """
    if kind == "sigmoid":
        return post * (1.0 - post)
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    raise ValueError(f"unknown activation {kind!r}")


def hadamard(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def add(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return a + b


def add_row_broadcast(a, bias):
    a = as_matrix(a)
    bias = as_matrix(bias)
    if bias.shape[0] != 1 or bias.shape[1] != a.shape[1]:
        raise ShapeError(f"add_row_broadcast: bias {bias.shape} does not fit {a.shape}")
    return a + bias
