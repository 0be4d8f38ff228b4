"""Named parameter storage with optimizer state and bit-exact checkpoints.

Checkpoint layout: ``<path>`` is a JSON manifest listing name/shape/dtype/
offset per array plus config, seed, step, and the SHA-256 of the payload;
``<path>.bin`` holds every array back to back as little-endian IEEE-754.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, SpannerError
from .autodiff import Tensor

_OPT_PREFIX = "__opt__"  # reserved manifest namespace for moment arrays


@dataclass
class ParameterStore:
    """Ordered map of parameter name -> leaf tensor, plus AdamW moments."""

    entries: dict[str, Tensor] = field(default_factory=dict)
    optimizer_state: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.entries:
            raise SpannerError(f"duplicate parameter name {name!r}")
        if name.startswith(_OPT_PREFIX):
            raise SpannerError(f"parameter name {name!r} uses a reserved prefix")
        tensor = Tensor(np.asarray(array))
        self.entries[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def names(self) -> list[str]:
        return list(self.entries)

    def num_values(self) -> int:
        return sum(t.data.size for t in self.entries.values())

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore(step=self.step)
        for name, tensor in self.entries.items():
            out.add(name, tensor.data.astype(dtype))
        return out

    def copy(self) -> "ParameterStore":
        out = ParameterStore(step=self.step)
        for name, tensor in self.entries.items():
            out.add(name, tensor.data.copy())
        for name, moments in self.optimizer_state.items():
            out.optimizer_state[name] = {k: v.copy() for k, v in moments.items()}
        return out

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in self.entries.items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        return digest.hexdigest()


def _le_dtype(dtype: np.dtype) -> str:
    kind = np.dtype(dtype)
    if kind == np.float32:
        return "<f4"
    if kind == np.float64:
        return "<f8"
    raise CheckpointError(f"unsupported checkpoint dtype {dtype}")


def save_checkpoint(store: ParameterStore, path: str | Path, config: dict, seed: int):
    """Write manifest + payload; both files are written atomically."""
    path = Path(path)
    arrays: list[tuple[str, np.ndarray]] = [
        (name, tensor.data) for name, tensor in store.entries.items()
    ]
    for name, moments in store.optimizer_state.items():
        for key in sorted(moments):
            arrays.append((f"{_OPT_PREFIX}{key}.{name}", moments[key]))

    chunks = []
    records = []
    offset = 0
    for name, array in arrays:
        dtype = _le_dtype(array.dtype)
        raw = np.ascontiguousarray(array, dtype=dtype).tobytes()
        records.append(
            {"name": name, "shape": list(array.shape), "dtype": dtype, "offset": offset}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)

    manifest = {
        "format": "spanner-checkpoint-v1",
        "config": config,
        "seed": seed,
        "step": store.step,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "arrays": records,
    }
    from ..util import atomic_write_bytes, atomic_write_text

    atomic_write_bytes(path.with_suffix(path.suffix + ".bin"), payload)
    atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict]:
    """Reload a checkpoint bit-exactly; returns (store, manifest)."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read manifest {path}: {err}") from None
    if manifest.get("format") != "spanner-checkpoint-v1":
        raise CheckpointError(f"{path}: not a checkpoint manifest")
    payload_path = path.with_suffix(path.suffix + ".bin")
    try:
        payload = payload_path.read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read payload {payload_path}: {err}") from None
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError(f"{path}: payload hash mismatch (corrupt checkpoint)")

    store = ParameterStore(step=int(manifest["step"]))
    for record in manifest["arrays"]:
        shape = tuple(record["shape"])
        dtype = np.dtype(record["dtype"])
        count = int(np.prod(shape)) if shape else 1
        start = record["offset"]
        array = np.frombuffer(
            payload, dtype=dtype, count=count, offset=start
        ).reshape(shape).copy()
        name = record["name"]
        if name.startswith(_OPT_PREFIX):
            key, _, parameter = name[len(_OPT_PREFIX):].partition(".")
            store.optimizer_state.setdefault(parameter, {})[key] = array
        else:
            store.add(name, array)
    return store, manifest
