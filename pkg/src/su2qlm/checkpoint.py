"""Bit-exact binary checkpoints of a symmetric MPS.

Layout, all little-endian::

    magic        9 bytes  b"SU2QLMPS1"
    version      uint32
    params       float64 t, g1, eps; uint32 L, N_M
    center       uint32
    per site     uint32 block count, then per block (sorted by key):
                 int32 q_left, ell_left; uint32 physical; int32 q_right, ell_right;
                 uint32 rows, cols; rows*cols float64 in row-major order
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .model import ModelParams
from .mps import SymmetricMPS, site_bases
from .symtensor import BlockTensor

MAGIC = b"SU2QLMPS1"
VERSION = 1

_HEADER = struct.Struct("<I3d2I")
_COUNT = struct.Struct("<I")
_BLOCK = struct.Struct("<2iI2i2I")


class CheckpointError(ValueError):
    pass


def dumps(state: SymmetricMPS) -> bytes:
    p = state.params
    parts = [MAGIC, _HEADER.pack(VERSION, p.t, p.g1, p.eps, p.L, p.N_M), _COUNT.pack(state.center)]
    for tensor in state.tensors:
        parts.append(_COUNT.pack(len(tensor.blocks)))
        for (l, phys, r), block in sorted(tensor.blocks.items()):
            rows, cols = block.shape
            parts.append(_BLOCK.pack(l[0], l[1], phys, r[0], r[1], rows, cols))
            parts.append(np.ascontiguousarray(block, dtype="<f8").tobytes(order="C"))
    return b"".join(parts)


def loads(data: bytes) -> SymmetricMPS:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = len(MAGIC)
    try:
        version, t, g1, eps, L, N_M = _HEADER.unpack_from(data, pos)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos += _HEADER.size
        params = ModelParams(t=t, L=L, N_M=N_M, g1=g1, eps=eps)
        (center,) = _COUNT.unpack_from(data, pos)
        pos += _COUNT.size
        tensors = []
        for basis in site_bases(L):
            (count,) = _COUNT.unpack_from(data, pos)
            pos += _COUNT.size
            blocks = {}
            for _ in range(count):
                ql, ll, phys, qr, lr, rows, cols = _BLOCK.unpack_from(data, pos)
                pos += _BLOCK.size
                n = rows * cols * 8
                if pos + n > len(data):
                    raise CheckpointError("truncated block data")
                block = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos)
                blocks[((ql, ll), phys, (qr, lr))] = block.reshape(rows, cols).astype(float)
                pos += n
            tensors.append(BlockTensor(basis, blocks))
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    state = SymmetricMPS(params, tensors, center)
    try:
        state.check_structure()
    except (AssertionError, ValueError) as exc:
        raise CheckpointError(f"inconsistent tensors: {exc}") from exc
    return state


def save(state: SymmetricMPS, path):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(state))
    os.replace(tmp, path)


def load(path) -> SymmetricMPS:
    with open(path, "rb") as fh:
        return loads(fh.read())
