"""Named parameter store, seeded init, AdamW, and checkpoint round-trip.

Checkpoints are a small versioned binary container: magic, version, a JSON
metadata blob (model config, vocabulary, anything the caller wants carried
with the weights), then one record per parameter with its name, shape, and
little-endian float64 payload. Loading restores bit-identical arrays.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor

_MAGIC = b"SKPT"
_VERSION = 1


class ParamStore:
    """Ordered name -> Tensor(requires_grad=True) mapping."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def subset(self, prefixes: tuple[str, ...]) -> dict[str, Tensor]:
        return {n: t for n, t in self._params.items() if n.startswith(prefixes)}

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}


class Initializer:
    """Seeded parameter factory.

    Embedding-like tables get uniform(-0.08, 0.08); projection matrices get
    normal with std 1/sqrt(fan_in); gains start at one, biases at zero.
    Creation order is fixed by the caller, which makes init reproducible
    from the seed alone.
    """

    def __init__(self, store: ParamStore, seed: int):
        self.store = store
        self.rng = np.random.default_rng(seed)

    def embedding(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.store.create(name, self.rng.uniform(-0.08, 0.08, size=shape))

    def projection(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        std = 1.0 / np.sqrt(fan_in)
        return self.store.create(
            name, self.rng.normal(0.0, std, size=(fan_in, fan_out))
        )

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.store.create(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.store.create(name, np.ones(shape))


class AdamW:
    """Decoupled-weight-decay Adam over a fixed parameter subset.

    Moments are keyed by parameter name; stepping skips parameters without a
    gradient, so a single optimizer can serve a loss that only touches part
    of its subset.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 3e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self) -> None:
        self.t += 1
        for n, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            mhat = self.m[n] / (1 - self.b1**self.t)
            vhat = self.v[n] / (1 - self.b2**self.t)
            # rebind instead of mutating: backward closures alias the old
            # array, and stage-wise training re-differentiates older graphs
            p.data = p.data - self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.wd * p.data)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None


def save_checkpoint(path: str | Path, store: ParamStore, meta: dict) -> None:
    """Write the container; float payloads are forced little-endian."""
    path = Path(path)
    blob = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(store.names())))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, t in store.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", t.data.ndim))
            for dim in t.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    path = Path(path)
    store = ParamStore()
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (blen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(blen).decode("utf-8"))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            store.create(name, arr.astype(np.float64))
    return store, meta
