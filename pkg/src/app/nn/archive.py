"""Checkpoint archive: named float64 arrays in one file

Layout::

    {"config": {...}, "step": 120, "tensors": [{"name": ..., "shape": [...], "offset": 0}, ...], "version": "sbr-ckpt-v1"}\\n
    <little-endian float64 blob>

Offsets are byte offsets into the blob. Optimizer moments are ordinary
entries named ``adam.m/<param>`` and ``adam.v/<param>``.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from src.core.errors import FormatVersionError, ParseError

ARCHIVE_VERSION = "sbr-ckpt-v1"
_DTYPE = np.dtype("<f8")


class ParameterArchive:
    """Ordered mapping of tensor name to array plus the run's config and step"""

    def __init__(
        self,
        tensors: Dict[str, np.ndarray],
        config: Optional[Dict[str, Any]] = None,
        step: int = 0,
    ):
        self.tensors = {name: np.asarray(value, dtype=np.float64) for name, value in tensors.items()}
        self.config = config or {}
        self.step = int(step)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __len__(self) -> int:
        return len(self.tensors)

    def parameters(self) -> Dict[str, np.ndarray]:
        """Model weights only (no optimizer state)"""
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}

    def optimizer_state(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith("adam.")}

    def to_bytes(self) -> bytes:
        entries = []
        chunks = []
        offset = 0
        for name, value in self.tensors.items():
            raw = np.ascontiguousarray(value, dtype=_DTYPE).tobytes()
            entries.append({"name": name, "shape": list(value.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
        manifest = {
            "version": ARCHIVE_VERSION,
            "config": self.config,
            "step": self.step,
            "tensors": entries,
        }
        header = json.dumps(manifest, sort_keys=True, allow_nan=False).encode("utf-8")
        return header + b"\n" + b"".join(chunks)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes, source: Optional[str] = None) -> "ParameterArchive":
        newline = data.find(b"\n")
        if newline < 0:
            raise ParseError("missing manifest line", path=source, line=1)
        try:
            manifest = json.loads(data[:newline].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ParseError(f"invalid manifest: {e}", path=source, line=1, offset=getattr(e, "pos", None)) from e
        if not isinstance(manifest, dict):
            raise ParseError("manifest must be a JSON object", path=source, line=1)
        version = manifest.get("version")
        if version != ARCHIVE_VERSION:
            raise FormatVersionError(
                f"unsupported checkpoint version {version!r}, expected {ARCHIVE_VERSION!r}",
                path=source,
                line=1,
            )

        blob = data[newline + 1:]
        tensors: Dict[str, np.ndarray] = {}
        for entry in manifest.get("tensors", []):
            try:
                name = str(entry["name"])
                shape = tuple(int(s) for s in entry["shape"])
                offset = int(entry["offset"])
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"malformed tensor entry {entry!r}", path=source, line=1) from e
            count = int(np.prod(shape)) if shape else 1
            end = offset + count * _DTYPE.itemsize
            if offset < 0 or end > len(blob):
                raise ParseError(
                    f"tensor {name!r} runs past the end of the data (truncated file?)",
                    path=source,
                    offset=newline + 1 + offset,
                )
            tensors[name] = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=offset).reshape(shape).astype(np.float64)
        return cls(tensors=tensors, config=manifest.get("config") or {}, step=manifest.get("step", 0))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ParameterArchive":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as e:
            raise ParseError(f"cannot read checkpoint: {e}", path=str(path)) from e
        return cls.from_bytes(data, source=str(path))
