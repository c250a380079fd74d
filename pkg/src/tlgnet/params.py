"""Named parameter groups with seeded initialization and checkpointing.

Weights use fan-in-scaled uniform initialization; biases start at zero.
Checkpoints are version-tagged JSON documents whose float64 payloads are
base64-encoded raw bytes, so save/load round-trips are bit-exact.
"""

from __future__ import annotations

import base64
import json
import os
from typing import Iterator, Optional

import numpy as np

from .tensor import Tensor

CHECKPOINT_FORMAT = "tlgnet-checkpoint"
CHECKPOINT_VERSION = 1


class ParameterStore:
    def __init__(self, seed: int = 0):
        self._params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)
        self.seed = seed

    def register(
        self,
        name: str,
        shape: tuple[int, ...],
        *,
        fan_in: Optional[int] = None,
        zero: bool = False,
    ) -> Tensor:
        """Create one parameter group; registering a name twice is an error."""
        if name in self._params:
            raise KeyError(f"parameter group {name!r} registered twice")
        if zero:
            data = np.zeros(shape, dtype=np.float64)
        else:
            fan = fan_in if fan_in is not None else (shape[-1] if shape else 1)
            bound = 1.0 / np.sqrt(max(fan, 1))
            data = self._rng.uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def register_raw(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter group {name!r} registered twice")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def register_orthogonal(self, name: str, shape: tuple[int, int]) -> Tensor:
        """Rows initialized orthonormal (QR of a seeded Gaussian), so row
        identities start maximally separable; extra rows beyond the column
        count continue with fresh orthonormal blocks."""
        rows, cols = shape
        blocks = []
        remaining = rows
        while remaining > 0:
            take = min(remaining, cols)
            gauss = self._rng.standard_normal((cols, take))
            q, _ = np.linalg.qr(gauss)
            blocks.append(q[:, :take].T)
            remaining -= take
        return self.register_raw(name, np.concatenate(blocks, axis=0))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.data.size for t in self._params.values())


def save_checkpoint(path: str, params: ParameterStore, metadata: Optional[dict] = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "metadata": metadata or {},
        "params": {
            name: {
                "shape": list(t.data.shape),
                "dtype": "float64",
                "data": base64.b64encode(np.ascontiguousarray(t.data).tobytes()).decode("ascii"),
            }
            for name, t in params.items()
        },
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[ParameterStore, dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    store = ParameterStore(seed=0)
    for name, entry in doc["params"].items():
        if entry.get("dtype") != "float64":
            raise ValueError(f"{path}: unsupported dtype {entry.get('dtype')!r}")
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype=np.float64).reshape(entry["shape"]).copy()
        store.register_raw(name, arr)
    return store, doc.get("metadata", {})
