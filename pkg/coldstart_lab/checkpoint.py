"""Named-tensor checkpoint container.

Layout: magic ``TMAG``, little-endian uint32 format version, uint32 manifest length,
UTF-8 JSON manifest, then a row-major little-endian payload. The manifest lists
each tensor's name, shape, dtype and byte offset into the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from coldstart_lab.errors import DataError

MAGIC = b"TMAG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sII")
_DTYPES = {32: "<f4", 64: "<f8"}


@dataclass
class CheckpointContainer:
    """An ordered mapping of tensor name to array, plus run provenance."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    precision: int = 32

    def __post_init__(self) -> None:
        if self.precision not in _DTYPES:
            raise DataError(f"unsupported checkpoint precision: {self.precision}")

    def add(self, name: str, array: np.ndarray) -> None:
        self.tensors[name] = np.asarray(array)

    def update(self, tensors: dict[str, np.ndarray]) -> None:
        for name, array in tensors.items():
            self.add(name, array)

    def with_prefix(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix/`` with the prefix stripped."""
        head = prefix.rstrip("/") + "/"
        return {name[len(head):]: arr for name, arr in self.tensors.items() if name.startswith(head)}

    def to_bytes(self) -> bytes:
        dtype = np.dtype(_DTYPES[self.precision])
        entries = []
        chunks = []
        offset = 0
        for name, array in self.tensors.items():
            data = np.ascontiguousarray(array, dtype=dtype).tobytes(order="C")
            entries.append({"name": name, "shape": list(array.shape), "offset": offset, "dtype": dtype.str})
            chunks.append(data)
            offset += len(data)
        manifest = json.dumps({"tensors": entries, "config": self.config}, sort_keys=True).encode("utf-8")
        return _HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest)) + manifest + b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> CheckpointContainer:
        if len(blob) < _HEADER.size:
            raise DataError("checkpoint truncated: no header")
        magic, version, manifest_len = _HEADER.unpack_from(blob, 0)
        if magic != MAGIC:
            raise DataError(f"not a checkpoint: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        start = _HEADER.size
        try:
            manifest = json.loads(blob[start : start + manifest_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"corrupt checkpoint manifest: {exc}") from exc
        payload = memoryview(blob)[start + manifest_len :]

        tensors: dict[str, np.ndarray] = {}
        precision = 32
        spans: list[tuple[int, int]] = []
        for entry in manifest["tensors"]:
            dtype = np.dtype(entry["dtype"])
            precision = dtype.itemsize * 8
            shape = tuple(entry["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            begin, end = entry["offset"], entry["offset"] + nbytes
            if end > len(payload):
                raise DataError(f"tensor {entry['name']} runs past the end of the payload")
            spans.append((begin, end))
            tensors[entry["name"]] = np.frombuffer(payload[begin:end], dtype=dtype).reshape(shape).copy()
        spans.sort()
        for (_, prev_end), (next_begin, _) in zip(spans, spans[1:]):
            if next_begin < prev_end:
                raise DataError("checkpoint manifest has overlapping tensors")
        return cls(tensors=tensors, config=manifest.get("config", {}), precision=precision)

    def save(self, path: str | Path) -> None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> CheckpointContainer:
        return cls.from_bytes(Path(path).read_bytes())
