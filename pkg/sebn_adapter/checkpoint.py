"""Binary checkpoint format.

    magic "SEBN" | u32 version | u32 n + n bytes of JSON `CheckpointMeta`
    u32 entry count, then per entry:
    u16 n + n bytes utf-8 name | u8 trainable | u8 dtype | u8 rank | rank x u32 dims
    | little-endian payload

Running BN statistics are stored as ordinary entries (trainable 0) and told
apart from parameters by name.
"""

import struct
from pathlib import Path
from typing import Tuple, Union

import anyio
import numpy as np
from loguru import logger
from pydantic import ValidationError

from .const import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .errors import CheckpointError
from .model import ParameterStore
from .model.names import is_known_buffer, is_known_param
from .types import CheckpointMeta

DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {v: k.newbyteorder("<") for k, v in DTYPE_CODES.items()}

PathLike = Union[str, Path]


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.raw):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.raw[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _entry(name: str, value: np.ndarray, trainable: bool) -> bytes:
    if (code := DTYPE_CODES.get(value.dtype)) is None:
        raise CheckpointError(f"{name}: unsupported dtype {value.dtype}")
    encoded = name.encode("u8")
    return b"".join(
        [
            struct.pack("<H", len(encoded)),
            encoded,
            struct.pack("<BBB", int(trainable), code, value.ndim),
            struct.pack(f"<{value.ndim}I", *value.shape),
            np.ascontiguousarray(value, dtype=CODE_DTYPES[code]).tobytes(),
        ],
    )


def encode_checkpoint(params: ParameterStore, meta: CheckpointMeta) -> bytes:
    header = meta.model_dump_json().encode("u8")
    entries = [_entry(k, t.data, params.is_trainable(k)) for k, t in params.items()]
    entries.extend(_entry(k, v, False) for k, v in params.buffers())
    return b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<II", CHECKPOINT_VERSION, len(header)),
            header,
            struct.pack("<I", len(entries)),
            *entries,
        ],
    )


def decode_checkpoint(raw: bytes) -> Tuple[ParameterStore, CheckpointMeta]:
    reader = _Reader(raw)
    if (magic := reader.take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint: magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version, size = reader.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version}, this reader handles {CHECKPOINT_VERSION}",
        )
    try:
        meta = CheckpointMeta.model_validate_json(reader.take(size))
    except ValidationError as e:
        raise CheckpointError(f"bad checkpoint header: {e.errors()[0]['msg']}") from e

    params = ParameterStore()
    (count,) = reader.unpack("<I")
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("u8")
        trainable, code, rank = reader.unpack("<BBB")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        shape = reader.unpack(f"<{rank}I")
        dtype = CODE_DTYPES[code]
        payload = reader.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
        value = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

        if is_known_buffer(name):
            params.add_buffer(name, value)
        elif is_known_param(name):
            params.add(name, value, bool(trainable))
        else:
            raise CheckpointError(f"unknown entry {name}")

    if reader.offset != len(raw):
        raise CheckpointError(f"{len(raw) - reader.offset} trailing bytes after the last entry")
    return params, meta


async def save_checkpoint(path: PathLike, params: ParameterStore, meta: CheckpointMeta):
    await anyio.Path(path).write_bytes(encode_checkpoint(params, meta))
    logger.info(f"Saved {meta.method} checkpoint ({len(params)} tensors) to {path}")


async def load_checkpoint(path: PathLike) -> Tuple[ParameterStore, CheckpointMeta]:
    try:
        raw = await anyio.Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from e
    return decode_checkpoint(raw)
