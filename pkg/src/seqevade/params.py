"""Named parameter collections, binary checkpoints, and the Adam optimizer.

Checkpoint layout (one file per store):

    line 1:            b"TENSORSTORE 1\n"
    one line per tensor, in store order:
                       b"<name> <d0>x<d1>x... <byte offset>\n"
                       (offset is relative to the start of the data section;
                        a 0-d tensor writes the shape field as "scalar")
    terminator:        b"END <total data bytes>\n"
    data section:      raw little-endian float64, row-major, tensor after
                       tensor at the stated offsets.

Names are restricted to ASCII without whitespace, so the header parses with
`split()`. Round-trips are bit-exact.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, parameter

_MAGIC = b"TENSORSTORE 1"


class ParameterStore:
    """Ordered mapping of names to trainable tensors.

    The unit of checkpointing and of optimizer state; iteration order is
    insertion order, which fixes the checkpoint byte layout.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"parameter {name!r} already exists")
        if any(ch.isspace() for ch in name) or not name.isascii():
            raise ValueError(f"parameter name {name!r} must be ASCII without whitespace")
        t = parameter(np.array(data, dtype=np.float64))
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return self._tensors.values()

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Current gradients, with zeros for parameters the loss never touched."""
        return {
            name: (np.zeros_like(t.data) if t.grad is None else t.grad)
            for name, t in self._tensors.items()
        }

    def state_copy(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self._tensors.items():
            t.data = state[name].copy()

    # -- checkpoint io ------------------------------------------------------

    def save(self, path) -> None:
        header_lines = []
        blobs = []
        offset = 0
        for name, t in self._tensors.items():
            if t.data.shape == ():
                shape_txt = "scalar"
            else:
                shape_txt = "x".join(str(d) for d in t.data.shape)
            header_lines.append(f"{name} {shape_txt} {offset}")
            blob = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
            blobs.append(blob)
            offset += len(blob)
        header_lines.append(f"END {offset}")
        with open(path, "wb") as fh:
            fh.write(_MAGIC + b"\n")
            fh.write(("\n".join(header_lines) + "\n").encode("ascii"))
            for blob in blobs:
                fh.write(blob)

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, "rb") as fh:
            raw = fh.read()
        nl = raw.index(b"\n")
        if raw[:nl] != _MAGIC:
            raise ValueError(f"{path}: not a tensor store file")
        pos = nl + 1
        entries = []
        while True:
            nl = raw.index(b"\n", pos)
            line = raw[pos:nl].decode("ascii")
            pos = nl + 1
            if line.startswith("END "):
                total = int(line.split()[1])
                break
            name, shape_txt, off = line.split()
            shape = () if shape_txt == "scalar" else tuple(int(d) for d in shape_txt.split("x"))
            entries.append((name, shape, int(off)))
        data = raw[pos:]
        if len(data) != total:
            raise ValueError(f"{path}: data section is {len(data)} bytes, header says {total}")
        store = cls()
        for name, shape, off in entries:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
            store.add(name, arr.astype(np.float64))
        return store


class AdamState:
    """Per-parameter moment accumulators plus the shared step counter."""

    def __init__(self, store: ParameterStore, lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update; parameter arrays are rebound, not
    mutated, so live graphs keep their forward-time values."""
    for name in store.names():
        if name not in grads:
            raise KeyError(f"adam_step: missing gradient for parameter {name!r}")
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for name, p in store.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / b1t
        v_hat = v / b2t
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
