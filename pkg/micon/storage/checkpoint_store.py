"""Versioned binary checkpoints.

Layout (little-endian)::

    b"MICN" | u32 version | u32 header_len | header (UTF-8 "key=value" lines)
    u32 n_blocks
    per block: u32 name_len | name | u32 ndim | u32 * ndim shape | f32 data

Block names are ``param/<name>`` or ``buffer/<name>``. Files are written to a
temporary sibling and renamed into place, so a reader never sees a partial
checkpoint.
"""

import json
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from micon.ai_core.micon_model import Architecture, ModelParams
from micon.errors import MissingArtifactError

logger = logging.getLogger(__name__)

MAGIC = b"MICN"
FORMAT_VERSION = 1


def _pack_header(meta: dict[str, object]) -> bytes:
    lines = []
    for key in sorted(meta):
        if "=" in key or "\n" in key:
            raise ValueError(f"Invalid header key {key!r}.")
        lines.append(f"{key}={json.dumps(meta[key], sort_keys=True)}")
    return "\n".join(lines).encode("utf-8")


def _unpack_header(raw: bytes) -> dict[str, object]:
    meta: dict[str, object] = {}
    for line in raw.decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"Malformed checkpoint header line {line!r}.")
        meta[key] = json.loads(value)
    return meta


def write_checkpoint(path: str | Path, params: ModelParams, meta: dict[str, object] | None = None) -> None:
    path = Path(path)
    header = {"architecture": params.architecture.to_dict(), **(meta or {})}
    blocks = [(f"param/{k}", v) for k, v in sorted(params.weights.items())]
    blocks += [(f"buffer/{k}", v) for k, v in sorted(params.buffers.items())]

    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    header_bytes = _pack_header(header)
    chunks += [struct.pack("<I", len(header_bytes)), header_bytes, struct.pack("<I", len(blocks))]
    for name, value in blocks:
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(array.tobytes())

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(b"".join(chunks))
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.info("Checkpoint written: %s (%d blocks)", path, len(blocks))


class _Reader:
    def __init__(self, data: bytes, path: Path) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise ValueError(f"Checkpoint {self.path} is truncated.")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_checkpoint(path: str | Path) -> tuple[ModelParams, dict[str, object]]:
    """Load a checkpoint as float64 ``ModelParams`` plus its header metadata.

    Raises:
        MissingArtifactError: If the file does not exist.
        ValueError: On a bad magic number, unknown version or truncation.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"Checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise ValueError(f"{path} is not a MICON checkpoint.")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise ValueError(f"Unsupported checkpoint version {version} in {path}.")
    meta = _unpack_header(reader.take(reader.u32()))

    weights: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shape = tuple(reader.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * count), dtype="<f4").astype(np.float64).reshape(shape)
        kind, _, block = name.partition("/")
        (weights if kind == "param" else buffers)[block] = values

    architecture = Architecture.from_dict(meta.pop("architecture"))
    return ModelParams(architecture, weights, buffers), meta
