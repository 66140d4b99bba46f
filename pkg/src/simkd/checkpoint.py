"""Binary checkpoints for models and SimKD assemblies.

Layout (little-endian): magic ``SKDC``, u16 version, then a sequence of
named tensors (u16 name length, UTF-8 name, u8 rank, u32 extents, float64
payload) and finally the 64-bit FNV-1a checksum of every preceding byte.

BatchNorm running statistics live under the reserved ``__bn__.`` prefix.
The structure needed to rebuild the object (network spec, or the stack list
and branch wiring of an assembly) is JSON stored byte-per-element in the
reserved rank-1 tensor ``__spec__``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .distill import Assembly, Branch
from .errors import CorruptionError, InputError
from .network import Model, NetworkSpec, Sequential, layer_from_dict, layer_to_dict
from .numeric import DTYPE, fnv1a64

MAGIC = b"SKDC"
VERSION = 1
BN_PREFIX = "__bn__."
SPEC_NAME = "__spec__"


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=DTYPE)
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise InputError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 2 + 8:
        raise CorruptionError("checkpoint is truncated")
    body, (checksum,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if fnv1a64(body) != checksum:
        raise CorruptionError("checkpoint checksum mismatch")
    if body[:4] != MAGIC:
        raise CorruptionError(f"bad magic {body[:4]!r}")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != VERSION:
        raise CorruptionError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    pos = 6
    try:
        while pos < len(body):
            (n,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", body, pos)
            shape = struct.unpack_from(f"<{rank}I", body, pos + 1)
            pos += 1 + 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(body):
                raise CorruptionError(f"tensor {name!r} runs past the end of the file")
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(DTYPE).reshape(shape)
            pos += 8 * count
            if name in out:
                raise CorruptionError(f"duplicate tensor {name!r}")
            out[name] = arr
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptionError(f"malformed checkpoint: {exc}") from None
    return out


def _spec_tensor(meta: dict) -> np.ndarray:
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(DTYPE)


def _put_stack(tensors: dict, prefix: str, seq: Sequential) -> None:
    for k, v in seq.params.items():
        tensors[f"{prefix}.{k}"] = v
    for k, v in seq.stats.items():
        tensors[f"{BN_PREFIX}{prefix}.{k}"] = v


def _take_stack(tensors: dict, prefix: str, layers, input_shape) -> Sequential:
    seq = Sequential(layers, input_shape)
    for store, pre in ((seq.params, f"{prefix}."), (seq.stats, f"{BN_PREFIX}{prefix}.")):
        for name, arr in tensors.items():
            if name.startswith(pre):
                store[name[len(pre):]] = arr.copy()
    expected = {f"{i}.{s}" for i, layer in enumerate(seq.layers) for s in layer.param_shapes()}
    if set(seq.params) != expected:
        raise CorruptionError(f"stack {prefix!r} has parameters {sorted(seq.params)}, expected {sorted(expected)}")
    return seq


def checkpoint_tensors(obj) -> dict[str, np.ndarray]:
    """Flatten a :class:`Model` or :class:`Assembly` into named tensors."""
    tensors: dict[str, np.ndarray] = {}
    if isinstance(obj, Model):
        meta = {"kind": "model", "spec": obj.spec.to_dict()}
        _put_stack(tensors, "encoder", obj.encoder)
        _put_stack(tensors, "classifier", obj.classifier)
    elif isinstance(obj, Assembly):
        stacks: list[Sequential] = []
        index: dict[int, int] = {}

        def ref(seq):
            if seq is None:
                return None
            if id(seq) not in index:
                index[id(seq)] = len(stacks)
                stacks.append(seq)
            return index[id(seq)]

        trunk = ref(obj.trunk)
        heads = {
            name: [
                {
                    "head": ref(br.head),
                    "projector": ref(br.projector),
                    "student_pool": br.student_pool,
                    "reference": ref(br.reference),
                    "target_pool": br.target_pool,
                }
                for br in branches
            ]
            for name, branches in obj.heads.items()
        }
        meta = {
            "kind": "assembly",
            "trunk": trunk,
            "heads": heads,
            "head_order": list(obj.heads),
            "stacks": [
                {"input_shape": list(s.input_shape), "layers": [layer_to_dict(x) for x in s.layers]} for s in stacks
            ],
        }
        for i, seq in enumerate(stacks):
            _put_stack(tensors, f"s{i}", seq)
    else:
        raise InputError(f"cannot checkpoint a {type(obj).__name__}")
    return {SPEC_NAME: _spec_tensor(meta), **tensors}


def from_tensors(tensors: dict[str, np.ndarray]):
    if SPEC_NAME not in tensors:
        raise CorruptionError("checkpoint has no structure record")
    try:
        meta = json.loads(bytes(tensors[SPEC_NAME].astype(np.uint8)).decode("utf-8"))
        if meta["kind"] == "model":
            spec = NetworkSpec.from_dict(meta["spec"])
            encoder = _take_stack(tensors, "encoder", spec.encoder, spec.input_shape)
            classifier = _take_stack(tensors, "classifier", (spec.classifier,), (spec.feature_dim,))
            return Model(spec, encoder, classifier)
        stacks = [
            _take_stack(tensors, f"s{i}", [layer_from_dict(x) for x in s["layers"]], s["input_shape"])
            for i, s in enumerate(meta["stacks"])
        ]

        def get(i):
            return None if i is None else stacks[i]

        heads = {
            name: [
                Branch(get(b["head"]), get(b["projector"]), b["student_pool"], get(b["reference"]), b["target_pool"])
                for b in meta["heads"][name]
            ]
            for name in meta["head_order"]
        }
        return Assembly(stacks[meta["trunk"]], heads)
    except CorruptionError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptionError(f"invalid checkpoint structure: {exc}") from None


def write_checkpoint(obj, path) -> None:
    Path(path).write_bytes(encode_tensors(checkpoint_tensors(obj)))


def read_checkpoint(path):
    """Load a :class:`Model` or :class:`Assembly`; raises on any corruption."""
    return from_tensors(decode_tensors(Path(path).read_bytes()))
