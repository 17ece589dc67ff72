"""
EMCK container: a self-describing tensor file with a JSON header.

Byte layout (all integers little-endian)::

    offset 0   4 bytes  magic b"EMCK"
    offset 4   1 byte   format version (currently 1)
    offset 5   4 bytes  header length H (uint32)
    offset 9   H bytes  header, canonical UTF-8 JSON (sorted keys, no spaces)
    offset 9+H          payload: float64 tensors, row-major, in header order

The header is ``{"metadata": {...}, "tensors": [{"name", "shape", "offset",
"nbytes"}, ...]}``; offsets are relative to the payload start, contiguous and
non-overlapping. ``metadata["kind"]`` tags what the tensors encode.
"""

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import structlog
import torch

from src.autodiff import DTYPE
from src.exceptions import (
    CheckpointConsistencyError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
)

logger = structlog.get_logger(__name__)

MAGIC = b"EMCK"
VERSION = 1
_PREAMBLE = struct.Struct("<4sBI")
_ITEM_SIZE = 8


@dataclass
class Container:
    """Decoded file: metadata plus tensors in header order."""

    metadata: dict[str, Any]
    tensors: dict[str, torch.Tensor]

    @property
    def kind(self) -> str:
        return str(self.metadata.get("kind", ""))


def canonical_json(value: Any) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def encode(metadata: dict[str, Any], tensors: list[tuple[str, torch.Tensor]]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, tensor in tensors:
        data = tensor.detach().to(DTYPE).contiguous().numpy().astype("<f8").tobytes()
        entries.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)}
        )
        chunks.append(data)
        offset += len(data)
    header = canonical_json({"metadata": metadata, "tensors": entries})
    return _PREAMBLE.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)


def decode(data: bytes) -> Container:
    """Parse and fully validate a container; nothing is returned on any defect."""
    if len(data) < _PREAMBLE.size:
        if MAGIC.startswith(data[:4]) and data:
            raise CheckpointTruncatedError("File ends inside the preamble", size=len(data))
        raise CheckpointFormatError("Not an EMCK checkpoint (bad magic)")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError("Not an EMCK checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointFormatError(f"Unknown checkpoint version {version}", version=version)

    payload_start = _PREAMBLE.size + header_len
    if len(data) < payload_start:
        raise CheckpointTruncatedError("File ends inside the header", size=len(data))
    try:
        header = json.loads(data[_PREAMBLE.size:payload_start].decode("utf-8"))
        metadata = header["metadata"]
        entries = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"Unparsable checkpoint header: {exc}") from exc
    if not isinstance(metadata, dict) or not isinstance(entries, list):
        raise CheckpointFormatError("Checkpoint header has the wrong structure")

    payload = memoryview(data)[payload_start:]
    expected_offset = 0
    layout = []
    for entry in entries:
        try:
            name, shape = str(entry["name"]), [int(x) for x in entry["shape"]]
            offset, nbytes = int(entry["offset"]), int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"Bad tensor entry in header: {exc}") from exc
        if any(extent < 0 for extent in shape):
            raise CheckpointConsistencyError(f"Negative extent in shape of {name}")
        if nbytes != math.prod(shape) * _ITEM_SIZE:
            raise CheckpointConsistencyError(
                f"Tensor {name} declares {nbytes} bytes for shape {shape}", tensor=name
            )
        if offset != expected_offset:
            raise CheckpointConsistencyError(
                f"Tensor {name} at offset {offset}, expected {expected_offset}", tensor=name
            )
        layout.append((name, shape, offset, nbytes))
        expected_offset += nbytes

    if len(payload) < expected_offset:
        raise CheckpointTruncatedError(
            f"Payload has {len(payload)} bytes, header declares {expected_offset}"
        )
    if len(payload) > expected_offset:
        raise CheckpointConsistencyError(
            f"Payload has {len(payload)} bytes, header declares {expected_offset}"
        )

    tensors: dict[str, torch.Tensor] = {}
    for name, shape, offset, nbytes in layout:
        if name in tensors:
            raise CheckpointConsistencyError(f"Duplicate tensor {name}", tensor=name)
        values = np.frombuffer(payload, dtype="<f8", count=nbytes // _ITEM_SIZE, offset=offset)
        tensors[name] = torch.from_numpy(values.astype(np.float64)).reshape(shape)
    return Container(metadata=metadata, tensors=tensors)


def write_container(
    path: str | Path, metadata: dict[str, Any], tensors: list[tuple[str, torch.Tensor]]
) -> Path:
    """Atomically write a container: temp file in the target directory, then rename."""
    path = Path(path)
    data = encode(metadata, tensors)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with tempfile.NamedTemporaryFile(
            dir=path.parent, prefix=f".{path.name}.", delete=False
        ) as handle:
            handle.write(data)
            tmp_name = handle.name
        os.replace(tmp_name, path)
    except OSError as exc:
        raise CheckpointError(f"Cannot write checkpoint {path}: {exc}") from exc
    logger.debug("Checkpoint written", path=str(path), kind=metadata.get("kind"), size=len(data))
    return path


def read_container(path: str | Path) -> Container:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    return decode(data)
