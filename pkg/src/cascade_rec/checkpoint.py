"""Binary parameter checkpoints.

Layout (little-endian)::

    offset  size  field
    0       4     magic b"CRCK"
    4       2     format version (1)
    6       1     model kind (0 = retriever, 1 = ranker)
    7       1     ranker activation (0 = logistic, 1 = tanh; 0 for retriever)
    8       4     num_items
    12      4     dim
    16      4     hidden width (0 for retriever)
    20      8     seed
    28      ...   float64 row-major arrays, in this order:
                  retriever: item_embeddings (num_items x dim)
                  ranker:    item_embeddings (num_items x dim),
                             hidden_weights (hidden x 3*dim), hidden_bias (hidden),
                             output_weights (hidden), output_bias (1)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .models import Ranker, Retriever

MAGIC = b"CRCK"
VERSION = 1
_HEADER = struct.Struct("<4sHBBIIIQ")
_KINDS = {"retriever": 0, "ranker": 1}
_ACTIVATIONS = ("logistic", "tanh")
_ORDER = {
    "retriever": ("item_embeddings",),
    "ranker": ("item_embeddings", "hidden_weights", "hidden_bias", "output_weights", "output_bias"),
}


class CheckpointError(ValueError):
    pass


def to_bytes(model) -> bytes:
    hidden = getattr(model, "hidden", 0)
    act = _ACTIVATIONS.index(getattr(model, "activation", "logistic"))
    header = _HEADER.pack(MAGIC, VERSION, _KINDS[model.kind], act, model.num_items, model.dim,
                          hidden, model.seed)
    body = b"".join(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes()
                    for name in _ORDER[model.kind])
    return header + body


def from_bytes(blob: bytes):
    if len(blob) < _HEADER.size:
        raise CheckpointError("truncated header")
    magic, version, kind_code, act_code, num_items, dim, hidden, seed = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("bad magic")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kinds = {v: k for k, v in _KINDS.items()}
    if kind_code not in kinds:
        raise CheckpointError(f"unknown model kind code {kind_code}")
    kind = kinds[kind_code]
    if act_code >= len(_ACTIVATIONS):
        raise CheckpointError(f"unknown activation code {act_code}")
    if kind == "retriever":
        model = Retriever(num_items, dim, seed)
    else:
        model = Ranker(num_items, dim, seed, hidden, _ACTIVATIONS[act_code])
    offset = _HEADER.size
    for name in _ORDER[kind]:
        shape = model.params[name].shape
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"truncated array {name}")
        model.params[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise CheckpointError("trailing bytes after last array")
    return model


def save(model, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path: str | Path):
    return from_bytes(Path(path).read_bytes())
