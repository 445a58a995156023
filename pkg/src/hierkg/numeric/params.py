"""Named parameter registry and the binary checkpoint format.

Checkpoint layout::

    b"HKGCKPT\\x01"             8-byte magic (last byte is the format version)
    uint64 little-endian        length of the JSON header in bytes
    JSON header                 {"params": [{"name", "shape"}...], "meta": {...}}
    float64 little-endian       parameter payloads, concatenated in header order
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

MAGIC = b"HKGCKPT\x01"


class CheckpointError(ValueError):
    pass


class ParamStore:
    def __init__(self) -> None:
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def register(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def get(self, name: str, default=None):
        return self._params.get(name, default)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def count(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(t.shape) for k, t in self._params.items()}

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = self.shapes()
        got = {k: tuple(np.shape(v)) for k, v in state.items()}
        if expected != got:
            missing = sorted(set(expected) - set(got))
            extra = sorted(set(got) - set(expected))
            wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
            raise CheckpointError(
                f"shape table mismatch (missing={missing}, unexpected={extra}, wrong_shape={wrong})")
        for k, v in state.items():
            self._params[k].data = np.array(v, dtype=np.float64)

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        header = {
            "params": [{"name": k, "shape": list(t.shape)} for k, t in self._params.items()],
            "meta": meta or {},
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for t in self._params.values():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    def load(self, path: str | Path) -> dict:
        """Load parameters saved by :meth:`save`; returns the stored ``meta``."""
        state, meta = read_checkpoint(path)
        self.load_state(state)
        return meta


def read_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic or version)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    state: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        state[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return state, header.get("meta", {})
