"""Named parameters, freezing, Adam, and the checkpoint file format."""
from __future__ import annotations

import hashlib
import io
import math
import struct
from collections.abc import Iterable
from pathlib import Path

import numpy as np

from .graph import NonFiniteError, Tensor, backprop

CHECKPOINT_MAGIC = b"CHOREOCK"
CHECKPOINT_VERSION = 1


class Parameter(Tensor):
    """A leaf tensor with a name, a frozen flag and Adam moment buffers."""

    __slots__ = ("name", "m", "v", "t")

    def __init__(self, name: str, value: np.ndarray):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.t = 0

    @property
    def frozen(self) -> bool:
        return not self.requires_grad

    def __repr__(self):
        flag = " frozen" if self.frozen else ""
        return f"Parameter({self.name!r}, shape={self.value.shape}{flag})"


class ParameterStore:
    def __init__(self):
        self.params: dict[str, Parameter] = {}

    def add(self, name: str, value) -> Parameter:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(name, value)
        self.params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def _matching(self, prefix: str) -> list[Parameter]:
        found = [p for n, p in self.params.items() if n.startswith(prefix)]
        if not found:
            raise KeyError(f"no parameter matches prefix {prefix!r}")
        return found

    def freeze(self, prefix: str) -> None:
        for p in self._matching(prefix):
            p.requires_grad = False

    def unfreeze(self, prefix: str) -> None:
        for p in self._matching(prefix):
            p.requires_grad = True

    def snapshot(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self.params.items() if n.startswith(prefix)}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            p = self.params[name]
            if p.value.shape != np.shape(value):
                raise ValueError(f"shape mismatch for {name}: {p.value.shape} vs {np.shape(value)}")
            p.value[...] = value

    def digest(self, prefix: str = "") -> str:
        """SHA-256 of the checkpoint bytes for the parameters under ``prefix``."""
        return hashlib.sha256(to_bytes(self, prefix)).hexdigest()


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every non-frozen parameter it touches.

    Parameters the loss depends on only through frozen paths get no entry;
    unfrozen parameters that do not influence the loss are simply absent and
    should be read as zero.
    """
    leaves = backprop(loss)
    grads = {}
    for leaf in leaves:
        if isinstance(leaf, Parameter):
            grads[leaf.name] = leaf.grad
        leaf.grad = None
    return grads


class Adam:
    def __init__(self, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def apply(self, store: ParameterStore, grads: dict[str, np.ndarray],
              lr: float | None = None) -> None:
        apply_gradients(store, grads, self.lr if lr is None else lr,
                        self.beta1, self.beta2, self.eps)


def apply_gradients(store: ParameterStore, grads: dict[str, np.ndarray], lr: float,
                    beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam step on the non-frozen parameters named in ``grads``.

    All gradients are validated first, so a non-finite entry leaves every
    parameter untouched.
    """
    params = store.params
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        # a finite sum implies finite entries
        if not math.isfinite(float(np.sum(g))):
            raise NonFiniteError(f"non-finite gradient for {name!r}")
    for name, g in grads.items():
        p = params[name]
        if not p.requires_grad:
            continue
        p.t += 1
        p.m += (1.0 - beta1) * (g - p.m)
        p.v += (1.0 - beta2) * (g * g - p.v)
        step = lr * math.sqrt(1.0 - beta2 ** p.t) / (1.0 - beta1 ** p.t)
        denom = np.sqrt(p.v)
        denom += eps
        np.divide(p.m, denom, out=denom)
        denom *= step
        p.value -= denom


# ---- checkpoint format ---------------------------------------------------
#
#   magic      8 bytes   b"CHOREOCK"
#   version    uint32 LE
#   count      uint32 LE
#   count records, each:
#     name_len uint16 LE, name UTF-8 bytes
#     frozen   uint8 (0/1)
#     ndim     uint8, then ndim x uint32 LE dimensions
#     data     prod(shape) x float64 LE, C order
#
# Records appear in insertion order.  Optimizer moments are not stored.

def to_bytes(store: ParameterStore, prefix: str = "") -> bytes:
    params = [p for n, p in store.params.items() if n.startswith(prefix)]
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        buf.write(struct.pack("<BB", int(p.frozen), p.value.ndim))
        buf.write(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        buf.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> list[tuple[str, bool, np.ndarray]]:
    """Parse checkpoint bytes into ``(name, frozen, array)`` records."""
    view = memoryview(data)
    if bytes(view[:8]) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", view, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    records = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", view, off)
        off += 2
        name = bytes(view[off:off + n]).decode("utf-8")
        off += n
        frozen, ndim = struct.unpack_from("<BB", view, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", view, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        records.append((name, bool(frozen), arr.astype(np.float64)))
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return records


def save_checkpoint(store: ParameterStore, path, prefix: str = "") -> None:
    Path(path).write_bytes(to_bytes(store, prefix))


def load_checkpoint(store: ParameterStore, path_or_bytes, restore_frozen: bool = True) -> None:
    """Load values (and optionally frozen flags) into matching parameters of ``store``."""
    data = path_or_bytes if isinstance(path_or_bytes, (bytes, bytearray)) \
        else Path(path_or_bytes).read_bytes()
    for name, frozen, arr in from_bytes(bytes(data)):
        store.load_values({name: arr})
        if restore_frozen:
            store.params[name].requires_grad = not frozen


def check_finite(store: ParameterStore, names: Iterable[str] | None = None) -> None:
    for name in (names if names is not None else store.params):
        if not np.all(np.isfinite(store.params[name].value)):
            raise NonFiniteError(f"parameter {name!r} is not finite")
