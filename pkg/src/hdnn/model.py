"""Plain, highway and residual feedforward networks with hand-written backprop.

Layer 1 always maps the input to the hidden width. For ``layer_kind ==
"highway"`` layers 2..L compute

    h = f(x W_l + b_l) * T + x * C,   T = sigmoid(x W_T),  C = sigmoid(x W_C)

with a single bias-free (W_T, W_C) pair shared by every highway layer. The
transform gate may be pinned to one, and the carry gate may be pinned to zero
or one or coupled as ``C = 1 - T``. Residual layers drop the gates:
``h = f(x W_l + b_l) + skip``.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from hdnn.data import Prng
from hdnn.linalg import (
    ShapeError,
    activate,
    activation_grad,
    add_row_broadcast,
    as_matrix,
    matmul,
    sigmoid,
)

LAYER_KINDS = ("plain", "highway", "residual")
TRANSFORM_MODES = ("learned", "fixed-one")
CARRY_MODES = ("learned", "fixed-zero", "fixed-one", "constrained")
ACTIVATIONS = ("sigmoid", "relu")
INIT_RANGE = 0.5


class ArchError(ValueError):
    """Invalid architecture description."""


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    hidden_dim: int
    num_hidden_layers: int
    output_dim: int
    layer_kind: str = "highway"
    transform_mode: str = "learned"
    carry_mode: str = "learned"
    activation: str = "sigmoid"
    dropout_rate: float = 0.0
    residual_span: int = 1

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "num_hidden_layers", "output_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ArchError(f"{name} must be a positive integer, got {value!r}")
        if self.layer_kind not in LAYER_KINDS:
            raise ArchError(f"layer_kind must be one of {LAYER_KINDS}, got {self.layer_kind!r}")
        if self.transform_mode not in TRANSFORM_MODES:
            raise ArchError(f"transform_mode must be one of {TRANSFORM_MODES}, got {self.transform_mode!r}")
        if self.carry_mode not in CARRY_MODES:
            raise ArchError(f"carry_mode must be one of {CARRY_MODES}, got {self.carry_mode!r}")
        if self.carry_mode == "constrained" and self.transform_mode != "learned":
            raise ArchError("carry_mode 'constrained' requires transform_mode 'learned'")
        if self.activation not in ACTIVATIONS:
            raise ArchError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ArchError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.residual_span not in (1, 2):
            raise ArchError(f"residual_span must be 1 or 2, got {self.residual_span}")

    @property
    def has_transform(self):
        return self.layer_kind == "highway" and self.transform_mode == "learned"

    @property
    def has_carry(self):
        return self.layer_kind == "highway" and self.carry_mode == "learned"

    def layer_input_dim(self, layer):
        return self.input_dim if layer == 1 else self.hidden_dim


def skip_source(layer, arch):
    """Layer whose input is added to this layer's output, or None.

    Residual blocks span ``arch.residual_span`` layers starting at layer 2;
    with span 2 an odd layer out at the top forms a one-layer block.
    """
    if layer < 2 or arch.layer_kind != "residual":
        return None
    if arch.residual_span == 1:
        return layer
    pos = (layer - 2) % 2
    if pos == 1:
        return layer - 1
    return layer if layer == arch.num_hidden_layers else None


# --------------------------------------------------------------------------
# Parameters


@dataclass(eq=False)
class ModelParams:
    """All trainable tensors. Also used, shape for shape, for gradients."""

    weights: list
    biases: list
    gate_t: np.ndarray = None
    gate_c: np.ndarray = None
    out_w: np.ndarray = None
    out_b: np.ndarray = None

    def named_arrays(self):
        """``(name, array)`` pairs in canonical order.

        Order: W1, b1, ..., WL, bL, W_T, W_C, W_out, b_out (absent gates are
        skipped). Checkpoints, the optimizer and gradient checks all use it.
        """
        items = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            items.append((f"W{i}", w))
            items.append((f"b{i}", b))
        if self.gate_t is not None:
            items.append(("W_T", self.gate_t))
        if self.gate_c is not None:
            items.append(("W_C", self.gate_c))
        items.append(("W_out", self.out_w))
        items.append(("b_out", self.out_b))
        return items

    def get(self, name):
        return dict(self.named_arrays())[name]

    def copy(self):
        return ModelParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            gate_t=None if self.gate_t is None else self.gate_t.copy(),
            gate_c=None if self.gate_c is None else self.gate_c.copy(),
            out_w=self.out_w.copy(),
            out_b=self.out_b.copy(),
        )

    def zeros_like(self):
        z = self.copy()
        for _, a in z.named_arrays():
            a[...] = 0.0
        return z

    def equals(self, other):
        mine, theirs = self.named_arrays(), other.named_arrays()
        return [n for n, _ in mine] == [n for n, _ in theirs] and all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(mine, theirs)
        )

    def num_scalars(self):
        return sum(a.size for _, a in self.named_arrays())


Gradients = ModelParams


def param_shapes(arch):
    """Canonical ``(name, shape)`` list for an architecture."""
    n = arch.hidden_dim
    shapes = []
    for layer in range(1, arch.num_hidden_layers + 1):
        shapes.append((f"W{layer}", (arch.layer_input_dim(layer), n)))
        shapes.append((f"b{layer}", (1, n)))
    if arch.has_transform:
        shapes.append(("W_T", (n, n)))
    if arch.has_carry:
        shapes.append(("W_C", (n, n)))
    shapes.append(("W_out", (n, arch.output_dim)))
    shapes.append(("b_out", (1, arch.output_dim)))
    return shapes


def params_from_arrays(arch, arrays):
    """Assemble ModelParams from arrays in canonical order."""
    shapes = param_shapes(arch)
    arrays = list(arrays)
    if len(arrays) != len(shapes):
        raise ShapeError(f"expected {len(shapes)} parameter arrays, got {len(arrays)}")
    named = {}
    for (name, shape), a in zip(shapes, arrays):
        a = as_matrix(a)
        if a.shape != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {a.shape}")
        named[name] = a
    num = arch.num_hidden_layers
    return ModelParams(
        weights=[named[f"W{i}"] for i in range(1, num + 1)],
        biases=[named[f"b{i}"] for i in range(1, num + 1)],
        gate_t=named.get("W_T"),
        gate_c=named.get("W_C"),
        out_w=named["W_out"],
        out_b=named["b_out"],
    )


def init_params(arch, seed):
    """Uniform [-0.5, 0.5) weights, zero biases.

    Draw order: W1..WL, then W_T, then W_C, then W_out, each row-major from
    one splitmix64 stream seeded with ``seed``.
    """
    prng = Prng(seed)
    # biases consume no draws
    filled = []
    for name, shape in param_shapes(arch):
        if name.startswith("b"):
            filled.append(np.zeros(shape))
        else:
            size = shape[0] * shape[1]
            filled.append(prng.uniform_array(size, -INIT_RANGE, INIT_RANGE).reshape(shape))
    return params_from_arrays(arch, filled)


def count_params(arch):
    """Exact number of trainable scalars, biases included."""
    n, num = arch.hidden_dim, arch.num_hidden_layers
    total = arch.input_dim * n + (num - 1) * n * n + num * n
    total += n * arch.output_dim + arch.output_dim
    if arch.has_transform:
        total += n * n
    if arch.has_carry:
        total += n * n
    return total


# --------------------------------------------------------------------------
# Forward


@dataclass(eq=False)
class LayerTrace:
    x: np.ndarray
    pre: np.ndarray
    act: np.ndarray
    h: np.ndarray
    gate_t: np.ndarray = None
    gate_c: np.ndarray = None
    skip: np.ndarray = None


@dataclass(eq=False)
class ForwardTrace:
    batch: np.ndarray
    layers: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    top: np.ndarray = None
    logits: np.ndarray = None
    probs: np.ndarray = None

    @property
    def depth(self):
        return len(self.layers) + 1


def forward_hidden_layer(h_prev, layer, params, arch, skip=None, transform_hook=None):
    """One hidden layer. Returns ``(h, LayerTrace)``.

    ``skip`` is the residual block input (residual layers only; defaults to
    ``h_prev``). ``transform_hook`` may replace the transform gate output
    before it is used; it exists for verification.
    """
    h_prev = as_matrix(h_prev)
    if not 1 <= layer <= arch.num_hidden_layers:
        raise ValueError(f"layer {layer} outside 1..{arch.num_hidden_layers}")
    if h_prev.shape[1] != arch.layer_input_dim(layer):
        raise ShapeError(
            f"layer {layer} expects {arch.layer_input_dim(layer)} inputs, got shape {h_prev.shape}"
        )
    w, b = params.weights[layer - 1], params.biases[layer - 1]
    pre = add_row_broadcast(matmul(h_prev, w), b)
    f = activate(pre, arch.activation)

    if layer == 1 or arch.layer_kind == "plain":
        return f, LayerTrace(h_prev, pre, f, f)

    if arch.layer_kind == "residual":
        if skip_source(layer, arch) is None:
            return f, LayerTrace(h_prev, pre, f, f)
        if skip is None:
            skip = h_prev
        h = f + skip
        return h, LayerTrace(h_prev, pre, f, h, skip=skip)

    if arch.transform_mode == "learned":
        t = sigmoid(matmul(h_prev, params.gate_t))
    else:
        t = np.ones_like(f)
    if transform_hook is not None:
        t = transform_hook(t)
    mode = arch.carry_mode
    if mode == "learned":
        c = sigmoid(matmul(h_prev, params.gate_c))
    elif mode == "constrained":
        c = 1.0 - t
    elif mode == "fixed-one":
        c = np.ones_like(f)
    else:
        c = np.zeros_like(f)

    h = f if arch.transform_mode == "fixed-one" else f * t
    if mode == "fixed-one":
        h = h + h_prev
    elif mode != "fixed-zero":
        h = h + h_prev * c
    return h, LayerTrace(h_prev, pre, f, h, gate_t=t, gate_c=c)


def softmax(logits):
    z = as_matrix(logits)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def apply_dropout(h, p, rng):
    """Inverted dropout. Returns ``(h_dropped, mask)``.

    Mask entries are 0 with probability ``p`` and ``1/(1-p)`` otherwise;
    surviving activations are computed as ``h / (1-p)``.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    h = as_matrix(h)
    if p == 0.0:
        return h.copy(), np.ones_like(h)
    keep = rng.uniform_array(h.size).reshape(h.shape) >= p
    scale = 1.0 - p
    return np.where(keep, h / scale, 0.0), np.where(keep, 1.0 / scale, 0.0)


def forward_network(params, arch, batch, training=False, rng=None, transform_hook=None):
    """Forward pass. Returns ``(probs, ForwardTrace)``.

    Dropout runs after every hidden layer only when ``training`` is true and
    ``arch.dropout_rate > 0``; ``rng`` is consumed only in that case.
    """
    x = as_matrix(batch)
    if x.shape[1] != arch.input_dim:
        raise ShapeError(f"batch has {x.shape[1]} columns, network expects {arch.input_dim}")
    use_dropout = training and arch.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("dropout needs an rng")
    trace = ForwardTrace(batch=x)
    inputs = {}
    h = x
    for layer in range(1, arch.num_hidden_layers + 1):
        inputs[layer] = h
        src = skip_source(layer, arch)
        skip = inputs[src] if src is not None else None
        h, lt = forward_hidden_layer(h, layer, params, arch, skip=skip, transform_hook=transform_hook)
        trace.layers.append(lt)
        if use_dropout:
            h, mask = apply_dropout(h, arch.dropout_rate, rng)
            trace.masks.append(mask)
    trace.top = h
    trace.logits = add_row_broadcast(matmul(h, params.out_w), params.out_b)
    trace.probs = softmax(trace.logits)
    return trace.probs, trace


# --------------------------------------------------------------------------
# Backward


def _sum_rows(a):
    return a.sum(axis=0, keepdims=True)


def backward_network(params, arch, trace, targets, return_gate_terms=False):
    """Gradient of the mean cross-entropy with respect to every parameter.

    The tied gate gradients are sums of per-layer terms over layers 2..L.
    With ``return_gate_terms`` the per-layer terms are returned as well, as
    ``(grads, {"W_T": [...], "W_C": [...]})`` in layer order 2..L.
    """
    targets = np.asarray(targets, dtype=np.int64)
    num_rows = trace.batch.shape[0]
    if targets.shape != (num_rows,):
        raise ShapeError(f"{targets.size} targets for a batch of {num_rows}")
    if len(trace.layers) != arch.num_hidden_layers:
        raise ShapeError("trace depth does not match the architecture")
    if targets.size and (targets.min() < 0 or targets.max() >= arch.output_dim):
        raise ValueError(f"targets must lie in [0, {arch.output_dim})")

    grads = params.zeros_like()
    d_logits = trace.probs.copy()
    d_logits[np.arange(num_rows), targets] -= 1.0
    d_logits /= num_rows

    grads.out_w = matmul(trace.top.T, d_logits)
    grads.out_b = _sum_rows(d_logits)
    dh = matmul(d_logits, params.out_w.T)

    t_terms, c_terms = [], []
    pending = {}
    for layer in range(arch.num_hidden_layers, 0, -1):
        lt = trace.layers[layer - 1]
        if trace.masks:
            dh = dh * trace.masks[layer - 1]
        x = lt.x

        if layer == 1 or arch.layer_kind != "highway":
            d_act = dh
        elif arch.transform_mode == "fixed-one":
            d_act = dh
        else:
            d_act = dh * lt.gate_t

        d_pre = d_act * activation_grad(lt.pre, lt.act, arch.activation)
        grads.weights[layer - 1] = matmul(x.T, d_pre)
        grads.biases[layer - 1] = _sum_rows(d_pre)
        dx = matmul(d_pre, params.weights[layer - 1].T)

        if layer > 1 and arch.layer_kind == "residual":
            src = skip_source(layer, arch)
            if src == layer:
                dx = dx + dh
            elif src is not None:
                pending[src] = dh

        if layer > 1 and arch.layer_kind == "highway":
            mode = arch.carry_mode
            d_gate_t = None
            if arch.transform_mode == "learned":
                d_gate_t = dh * lt.act
            if mode == "learned":
                d_gate_c = dh * x
                dz_c = d_gate_c * lt.gate_c * (1.0 - lt.gate_c)
                c_terms.append(matmul(x.T, dz_c))
                dx = dx + matmul(dz_c, params.gate_c.T)
            elif mode == "constrained":
                d_gate_t = d_gate_t - dh * x
            if d_gate_t is not None:
                dz_t = d_gate_t * lt.gate_t * (1.0 - lt.gate_t)
                t_terms.append(matmul(x.T, dz_t))
                dx = dx + matmul(dz_t, params.gate_t.T)
            if mode == "fixed-one":
                dx = dx + dh
            elif mode != "fixed-zero":
                dx = dx + dh * lt.gate_c

        if layer in pending:
            dx = dx + pending.pop(layer)
        dh = dx

    t_terms.reverse()
    c_terms.reverse()
    if arch.has_transform:
        grads.gate_t = _sum_terms(t_terms, params.gate_t)
    if arch.has_carry:
        grads.gate_c = _sum_terms(c_terms, params.gate_c)
    if return_gate_terms:
        return grads, {"W_T": t_terms, "W_C": c_terms}
    return grads


def _sum_terms(terms, like):
    total = np.zeros_like(like)
    for term in terms:
        total = total + term
    return total


def arch_fields():
    return [f.name for f in fields(ArchSpec)]
