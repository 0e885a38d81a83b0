"""Binary checkpoint codec.

Layout (little-endian):
    b"CPRN"  magic
    u32      format version
    records until end of file, each:
        u32 name length, UTF-8 name, u32 rank, rank x u32 extents,
        prod(extents) x f64 payload
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from core.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"CPRN"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_checkpoint(state: Mapping[str, np.ndarray]) -> bytes:
    """Serialize a name -> array mapping."""
    chunks = [MAGIC, _U32.pack(VERSION)]
    for name, values in state.items():
        encoded = name.encode("utf-8")
        array = np.asarray(values)
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.astype("<f8").tobytes(order="C"))
    return b"".join(chunks)


def decode_checkpoint(payload: bytes) -> Dict[str, np.ndarray]:
    """Parse a checkpoint payload back into arrays.

    Raises:
        CheckpointError: On bad magic, unsupported version or truncation
    """
    if payload[:4] != MAGIC:
        raise CheckpointError("Not a CPRN checkpoint (bad magic bytes)")
    if len(payload) < 8:
        raise CheckpointError("Checkpoint truncated before version field")
    (version,) = _U32.unpack_from(payload, 4)
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version: {version}")

    state: Dict[str, np.ndarray] = {}
    offset = 8
    try:
        while offset < len(payload):
            (name_length,) = _U32.unpack_from(payload, offset)
            offset += 4
            name = payload[offset:offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = _U32.unpack_from(payload, offset)
            offset += 4
            extents = struct.unpack_from(f"<{rank}I", payload, offset)
            offset += 4 * rank
            count = int(np.prod(extents)) if rank else 1
            end = offset + 8 * count
            if end > len(payload):
                raise CheckpointError(f"Checkpoint truncated inside record '{name}'")
            values = np.frombuffer(payload[offset:end], dtype="<f8").reshape(extents)
            state[name] = values.astype(np.float64)
            offset = end
    except struct.error as exc:
        raise CheckpointError(f"Checkpoint truncated: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"Checkpoint record name at offset {offset} is not UTF-8") from exc
    return state


def save_checkpoint(state: Mapping[str, np.ndarray], path: Union[str, Path]) -> Path:
    """Write a checkpoint file and return its path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(state))
    logger.info(f"Checkpoint saved to {path} ({len(state)} tensors)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Read a checkpoint file.

    Raises:
        CheckpointError: If the file is missing or malformed
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
