"""Named parameter storage and the binary checkpoint record format.

Checkpoint layout: magic ``CMTP``, format version u32, then one record per
tensor: name length u32, name bytes (utf-8), rank u32, dims u32 * rank,
float32 little-endian payload. Records are written in sorted name order so
identical contents produce identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ContractViolation

MAGIC = b"CMTP"
FORMAT_VERSION = 1


class ParameterStore:
    """Registry of named trainable tensors with seeded, ordered initialization."""

    def __init__(self, seed: int):
        self.rng_seed = int(seed)
        self._rng = np.random.default_rng(self.rng_seed)
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, shape: tuple[int, ...], init: str = "trunc_normal",
               std: float = 0.02) -> Tensor:
        if name in self._params:
            raise ContractViolation(f"parameter '{name}' already registered")
        if init == "trunc_normal":
            data = _trunc_normal(self._rng, shape, std)
        elif init == "zeros":
            data = np.zeros(shape, dtype=np.float32)
        elif init == "ones":
            data = np.ones(shape, dtype=np.float32)
        elif init == "eye":
            if len(shape) != 2 or shape[0] != shape[1]:
                raise ContractViolation(f"eye init needs a square 2-D shape, got {shape}")
            data = np.eye(shape[0], dtype=np.float32)
        else:
            raise ContractViolation(f"unknown init '{init}'")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def create_const(self, name: str, value: float, shape: tuple[int, ...] = ()) -> Tensor:
        if name in self._params:
            raise ContractViolation(f"parameter '{name}' already registered")
        t = Tensor(np.full(shape, value, dtype=np.float32), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {n: t for n, t in self.items() if n.startswith(prefix)}

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite registered parameters with checkpoint payloads (strict shapes)."""
        for name, t in self.items():
            if name not in arrays:
                raise ContractViolation(f"checkpoint is missing parameter '{name}'")
            arr = arrays[name]
            if tuple(arr.shape) != t.shape:
                raise ContractViolation(
                    f"shape mismatch for '{name}': checkpoint {arr.shape} vs model {t.shape}"
                )
            t.data = np.asarray(arr, dtype=np.float32, order="C")


def _trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    """Normal(0, std) with redraws outside +-2 std; deterministic given rng state."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# checkpoint records
# ---------------------------------------------------------------------------


def write_records(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f4", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes(order="C"))


def read_records(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise ContractViolation(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ContractViolation(f"{path}: unsupported format version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        out[name] = arr.copy()
    return out
