"""Dense arrays with an optional gradient slot, and the named parameter store.

Checkpoint format (little-endian throughout): the magic string
``CPNKIT1``, then one record per parameter until EOF:

    uint32  name length in bytes
    bytes   utf-8 name
    uint32  rank
    uint32  extents[rank]
    float32 values[prod(extents)]

Parameters are written in insertion order, which makes checkpoints
byte-reproducible for a fixed construction sequence.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"CPNKIT1"


class Grid:
    """Multi-channel dense array (row-major float32) with an optional
    same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None):
        self.data = np.ascontiguousarray(data)
        if grad is not None:
            grad = np.ascontiguousarray(grad)
            if grad.shape != self.data.shape:
                raise ValueError(f"grad shape {grad.shape} does not match data shape {self.data.shape}")
        self.grad = grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @classmethod
    def zeros(cls, shape, dtype=np.float32):
        return cls(np.zeros(shape, dtype=dtype))

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def accumulate_grad(self, g):
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {self.data.shape}")
        self.ensure_grad()
        self.grad += g

    def __repr__(self):
        return f"Grid(shape={tuple(self.data.shape)}, dtype={self.data.dtype}, grad={'yes' if self.grad is not None else 'no'})"


class ParamStore:
    """Named parameter grids plus per-parameter optimizer state slots.

    Trainable entries receive gradients and optimizer updates;
    non-trainable entries (running statistics) are serialized alongside
    but never touched by the optimizer. ``weight_decay`` marks entries
    that the decoupled decay multiplier applies to.
    """

    def __init__(self):
        self._params: dict[str, Grid] = {}
        self._trainable: dict[str, bool] = {}
        self._decay: dict[str, bool] = {}
        self._state: dict[str, dict[str, np.ndarray]] = {}

    def add(self, name: str, array, trainable: bool = True, weight_decay: bool = False) -> Grid:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        grid = Grid(np.asarray(array, dtype=np.float32))
        self._params[name] = grid
        self._trainable[name] = trainable
        self._decay[name] = weight_decay
        return grid

    def __getitem__(self, name: str) -> Grid:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def trainable_names(self) -> list[str]:
        return [n for n in self._params if self._trainable[n]]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def decays(self, name: str) -> bool:
        return self._decay[name]

    def num_values(self, trainable_only: bool = True) -> int:
        names = self.trainable_names() if trainable_only else self.names()
        return sum(self._params[n].data.size for n in names)

    def zero_grads(self):
        for name in self.trainable_names():
            self._params[name].zero_grad()

    def state(self, name: str, slot: str) -> np.ndarray:
        """Optimizer state buffer for a parameter, zero-initialized and
        shape-matched on first access."""
        slots = self._state.setdefault(name, {})
        buf = slots.get(slot)
        if buf is None:
            buf = np.zeros_like(self._params[name].data)
            slots[slot] = buf
        return buf

    # -- checkpoint io ------------------------------------------------------

    def save(self, path):
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            for name, grid in self._params.items():
                raw = name.encode("utf-8")
                data = np.ascontiguousarray(grid.data, dtype="<f4")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", data.ndim))
                fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
                fh.write(data.tobytes())

    def load(self, path):
        """Load checkpoint values into matching existing parameters."""
        for name, array in iter_checkpoint(path):
            if name not in self._params:
                raise KeyError(f"checkpoint parameter {name!r} not present in store")
            grid = self._params[name]
            if tuple(array.shape) != tuple(grid.data.shape):
                raise ValueError(
                    f"checkpoint parameter {name!r} has shape {array.shape}, store expects {grid.data.shape}"
                )
            grid.data[...] = array

    @classmethod
    def from_checkpoint(cls, path) -> "ParamStore":
        store = cls()
        for name, array in iter_checkpoint(path):
            store.add(name, array)
        return store


def iter_checkpoint(path):
    """Yield (name, float32 array) records from a checkpoint file."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a CPNKIT1 checkpoint (bad magic {magic!r})")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            extents = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(extents)) if rank else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"truncated checkpoint record for {name!r}")
            array = np.frombuffer(raw, dtype="<f4").reshape(extents).copy()
            yield name, array
