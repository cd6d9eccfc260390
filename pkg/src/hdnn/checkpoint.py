"""HWNN checkpoint files.

Layout (little-endian)::

    b"HWNN"  u32 version
    u32 input_dim, hidden_dim, num_hidden_layers, output_dim
    u32 layer_kind, transform_mode, carry_mode, activation   (enum indices)
    f64 dropout_rate  u32 residual_span
    per parameter, in ModelParams.named_arrays() order:
        u32 rows, u32 cols, rows*cols f64 row-major
"""

import struct

import numpy as np

from hdnn.model import (
    ACTIVATIONS,
    CARRY_MODES,
    LAYER_KINDS,
    TRANSFORM_MODES,
    ArchSpec,
    param_shapes,
    params_from_arrays,
)

MAGIC = b"HWNN"
VERSION = 1
_ARCH = struct.Struct("<4sI8IdI")
_DIMS = struct.Struct("<II")


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


def encode_checkpoint(arch, params):
    head = _ARCH.pack(
        MAGIC,
        VERSION,
        arch.input_dim,
        arch.hidden_dim,
        arch.num_hidden_layers,
        arch.output_dim,
        LAYER_KINDS.index(arch.layer_kind),
        TRANSFORM_MODES.index(arch.transform_mode),
        CARRY_MODES.index(arch.carry_mode),
        ACTIVATIONS.index(arch.activation),
        arch.dropout_rate,
        arch.residual_span,
    )
    parts = [head]
    for _, a in params.named_arrays():
        parts.append(_DIMS.pack(*a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def _enum(table, index, what):
    if index >= len(table):
        raise CheckpointError(f"unknown {what} code {index}")
    return table[index]


def decode_checkpoint(buf):
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < _ARCH.size:
        raise CheckpointError("truncated checkpoint header")
    _, version, ind, hid, num, outd, kind, tmode, cmode, act, drop, span = _ARCH.unpack_from(buf)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch = ArchSpec(
        input_dim=ind,
        hidden_dim=hid,
        num_hidden_layers=num,
        output_dim=outd,
        layer_kind=_enum(LAYER_KINDS, kind, "layer_kind"),
        transform_mode=_enum(TRANSFORM_MODES, tmode, "transform_mode"),
        carry_mode=_enum(CARRY_MODES, cmode, "carry_mode"),
        activation=_enum(ACTIVATIONS, act, "activation"),
        dropout_rate=drop,
        residual_span=span,
    )
    off = _ARCH.size
    arrays = []
    for name, shape in param_shapes(arch):
        if len(buf) < off + _DIMS.size:
            raise CheckpointError(f"truncated before {name}")
        rows, cols = _DIMS.unpack_from(buf, off)
        off += _DIMS.size
        if (rows, cols) != shape:
            raise CheckpointError(f"{name}: stored shape {(rows, cols)}, architecture needs {shape}")
        nbytes = 8 * rows * cols
        if len(buf) < off + nbytes:
            raise CheckpointError(f"truncated inside {name}")
        a = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off)
        arrays.append(a.astype(np.float64).reshape(rows, cols))
        off += nbytes
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes")
    return arch, params_from_arrays(arch, arrays)


def save_checkpoint(path, arch, params):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(arch, params))


def load_checkpoint(path):
    """Returns ``(arch, params)``."""
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
