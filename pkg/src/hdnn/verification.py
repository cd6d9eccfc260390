"""Independent checks of the model math.

``numeric_gradient`` differentiates the loss by central differences using
only the forward pass; it shares no code with ``backward_network``.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from hdnn.data import Prng, derive_seed
from hdnn.linalg import add_row_broadcast, matmul
from hdnn.model import (
    ArchSpec,
    backward_network,
    forward_hidden_layer,
    forward_network,
    init_params,
    softmax,
)
from hdnn.training import cross_entropy

DEFAULT_EPS = 1e-5
REL_FLOOR = 1e-8
KINK_FACTOR = 10.0


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR
    )


def central_difference(fn, theta, eps=DEFAULT_EPS):
    """``(fn(theta + eps e_i) - fn(theta - eps e_i)) / 2eps`` for every i.

    ``theta`` is perturbed in place and restored after each coordinate.
    """
    out = np.zeros(theta.shape)
    flat = theta.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn(theta)
        flat[i] = orig - eps
        down = fn(theta)
        flat[i] = orig
        out.reshape(-1)[i] = (up - down) / (2.0 * eps)
    return out


def numeric_gradient(arch, params, batch, targets, eps=DEFAULT_EPS):
    """Central-difference gradient of the mean cross-entropy.

    For ReLU networks, a coordinate whose perturbation moves a pre-activation
    that sits within ``10*eps`` of the kink is not differentiable in the
    finite-difference sense; it comes back as NaN.
    """
    if arch.dropout_rate > 0.0:
        raise ValueError("numeric gradients need dropout_rate == 0")
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    work = params.copy()
    _, base = forward_network(work, arch, batch)
    near_kink = []
    if arch.activation == "relu":
        near_kink = [np.abs(lt.pre) < KINK_FACTOR * eps for lt in base.layers]
        if not any(m.any() for m in near_kink):
            near_kink = []

    grads = work.zeros_like()
    for (name, theta), (_, g) in zip(work.named_arrays(), grads.named_arrays()):
        flat, gflat = theta.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            p_up, t_up = forward_network(work, arch, batch)
            flat[i] = orig - eps
            p_down, t_down = forward_network(work, arch, batch)
            flat[i] = orig
            if near_kink and _moves_kink(base, (t_up, t_down), near_kink):
                gflat[i] = np.nan
                continue
            gflat[i] = (cross_entropy(p_up, targets) - cross_entropy(p_down, targets)) / (2.0 * eps)
    return grads


def _moves_kink(base, traces, near_kink):
    for k, mask in enumerate(near_kink):
        if not mask.any():
            continue
        ref = base.layers[k].pre[mask]
        if any(not np.array_equal(t.layers[k].pre[mask], ref) for t in traces):
            return True
    return False


@dataclass
class GradCheckReport:
    tol: float
    field_errors: dict
    max_error: float
    worst: tuple
    excluded: list = field(default_factory=list)
    max_abs_diff: float = 0.0

    @property
    def passed(self):
        return self.max_error <= self.tol

    def __str__(self):
        lines = [f"{name:>6s}  max rel err {err:.3e}" for name, err in self.field_errors.items()]
        name, idx = self.worst
        lines.append(f"worst: {name}{list(idx)}  {self.max_error:.3e}")
        lines.append(f"max |analytic - numeric| {self.max_abs_diff:.3e}")
        if self.excluded:
            shown = ", ".join(f"{n}{list(i)}" for n, i in self.excluded[:10])
            more = "" if len(self.excluded) <= 10 else f" (+{len(self.excluded) - 10} more)"
            lines.append(f"excluded near ReLU kink: {shown}{more}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'} at tol {self.tol:g}")
        return "\n".join(lines)


def random_batch(arch, seed, batch_size=3):
    prng = Prng(derive_seed(seed, 3))
    x = prng.gaussian_array(batch_size * arch.input_dim).reshape(batch_size, arch.input_dim)
    y = np.array([prng.randbelow(arch.output_dim) for _ in range(batch_size)], dtype=np.int64)
    return x, y


def compare_gradients(analytic, numeric, tol):
    field_errors, excluded = {}, []
    worst, max_error, max_abs = None, -1.0, 0.0
    for (name, a), (_, n) in zip(analytic.named_arrays(), numeric.named_arrays()):
        skip = np.isnan(n)
        excluded.extend((name, tuple(int(i) for i in idx)) for idx in np.argwhere(skip))
        err = np.where(skip, 0.0, relative_error(a, np.where(skip, 0.0, n)))
        field_errors[name] = float(err.max())
        max_abs = max(max_abs, float(np.abs(np.where(skip, 0.0, a - np.where(skip, 0.0, n))).max()))
        if err.max() > max_error:
            idx = np.unravel_index(int(np.argmax(err)), err.shape)
            worst, max_error = (name, tuple(int(i) for i in idx)), float(err.max())
    return GradCheckReport(tol, field_errors, max_error, worst, excluded, max_abs)


def grad_check(arch, seed, tol=1e-6, batch_size=3, eps=DEFAULT_EPS, grad_hook=None):
    """Compare ``backward_network`` with ``numeric_gradient`` on a random batch.

    ``grad_hook`` may modify the analytic gradients before comparison.
    """
    params = init_params(arch, seed)
    x, y = random_batch(arch, seed, batch_size)
    _, trace = forward_network(params, arch, x)
    analytic = backward_network(params, arch, trace, y)
    if grad_hook is not None:
        grad_hook(analytic)
    numeric = numeric_gradient(arch, params, x, y, eps)
    return compare_gradients(analytic, numeric, tol)


# --------------------------------------------------------------------------
# Architecture reductions


@dataclass
class ReductionResult:
    plain: bool
    residual: bool
    identity: bool

    @property
    def passed(self):
        return self.plain and self.residual and self.identity

    def __bool__(self):
        return self.passed


def _chain(params, arch, x, layer_fn):
    outs = []
    h = x
    for layer in range(1, arch.num_hidden_layers + 1):
        h, _ = layer_fn(h, layer, params, arch)
        outs.append(h)
    outs.append(softmax(add_row_broadcast(matmul(h, params.out_w), params.out_b)))
    return outs


def _same_bits(xs, ys):
    return len(xs) == len(ys) and all(
        a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(xs, ys)
    )


def reduction_check(n, num_layers, seed, layer_fn=forward_hidden_layer, batch_size=4, input_dim=3):
    """Check the three exact reductions of the highway layer.

    * transform fixed to one, carry fixed to zero  ==  plain layer
    * transform fixed to one, carry fixed to one   ==  one-layer residual
    * constrained carry with T forced to 0         ==  identity per layer
    """
    full = ArchSpec(input_dim, n, num_layers, 3, layer_kind="highway")
    params = init_params(full, seed)
    prng = Prng(derive_seed(seed, 4))
    x = prng.gaussian_array(batch_size * input_dim).reshape(batch_size, input_dim)
    for layer in range(1, num_layers + 1):
        params.biases[layer - 1] = prng.uniform_array(n, -0.5, 0.5).reshape(1, n)
    gateless = dataclasses.replace(params.copy(), gate_t=None, gate_c=None)

    plain = dataclasses.replace(full, layer_kind="plain")
    as_plain = dataclasses.replace(full, transform_mode="fixed-one", carry_mode="fixed-zero")
    ok_plain = _same_bits(
        _chain(gateless, plain, x, layer_fn), _chain(gateless, as_plain, x, layer_fn)
    )

    residual = dataclasses.replace(full, layer_kind="residual", residual_span=1)
    as_residual = dataclasses.replace(full, transform_mode="fixed-one", carry_mode="fixed-one")
    ok_residual = _same_bits(
        _chain(gateless, residual, x, layer_fn), _chain(gateless, as_residual, x, layer_fn)
    )

    constrained = dataclasses.replace(full, carry_mode="constrained")
    cparams = dataclasses.replace(params.copy(), gate_c=None)
    ok_identity = True
    h = x
    for layer in range(1, num_layers + 1):
        out, _ = layer_fn(h, layer, cparams, constrained, transform_hook=np.zeros_like)
        if layer > 1 and not np.array_equal(out, h):
            ok_identity = False
        h = out
    return ReductionResult(ok_plain, ok_residual, ok_identity)
