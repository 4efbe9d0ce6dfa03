"""Reverse-mode automatic differentiation over dense float64 tensors.

A dynamic tape: every operation returns a new `Tensor` node holding the
forward value, links to its parent nodes and a closure that accumulates
gradients into them. `backward(loss)` walks the graph once in reverse
topological order. Graphs are rebuilt per forward pass, so variable-length
sequences need no padding logic here.

Numerical contract: matrix products go through `np.einsum` rather than BLAS.
BLAS gemm picks different kernels for different batch sizes, so row k of a
batched product need not be bit-identical to the same row computed alone;
einsum's fixed-order loops are row-independent, which the masked-batching
guarantees in `seqnets` rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "backward",
    "add",
    "sub",
    "neg",
    "mul",
    "matmul",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "reciprocal",
    "clip",
    "softmax",
    "reduce_sum",
    "reduce_mean",
    "concat",
    "narrow",
    "gather_rows",
    "where_mask",
    "stack_steps",
    "step_slice",
    "reverse_steps",
    "grad_check",
    "GradCheckReport",
]


class Tensor:
    """One node of the computation graph.

    `data` is always a C-order float64 ndarray (0-d for scalars). `grad` is
    populated lazily by `backward`. Leaves created with `stop=True` are
    constants: no gradient is ever accumulated into them.
    """

    __slots__ = ("data", "grad", "parents", "vjp", "stop")

    def __init__(self, data, parents=(), vjp=None, stop=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.stop = stop

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, stop={self.stop})"


def constant(data) -> Tensor:
    """Leaf that never receives a gradient (inputs, masks, noise)."""
    return Tensor(data, stop=True)


def parameter(data) -> Tensor:
    """Trainable leaf; `backward` accumulates into `.grad`."""
    return Tensor(data)


def _accumulate(parent: Tensor, g: np.ndarray) -> None:
    if parent.stop:
        return
    if parent.grad is None:
        parent.grad = np.array(g)  # own the buffer; callers may reuse g
    else:
        parent.grad += g


def _node(data, parents, vjp) -> Tensor:
    if all(p.stop for p in parents):
        return Tensor(data, stop=True)
    return Tensor(data, parents=tuple(parents), vjp=vjp)


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every non-stop node reachable from `loss`.

    `loss` must be scalar. Grads already present on reachable nodes are
    cleared first, so several backward passes over one graph stay independent.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited or node.stop:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    for node in topo:
        node.grad = None
    loss.grad = np.ones(())
    for node in reversed(topo):
        if node.vjp is not None and node.grad is not None:
            node.vjp(node.grad)


# ---------------------------------------------------------------------------
# elementwise and broadcast arithmetic


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or sb == () or sa == ():
        return
    # row-vector bias: (B, D) op (D,)
    if len(sa) == 2 and sb == (sa[1],):
        return
    # column broadcast: (B, D) op (B, 1) -- attention weights, masks
    if len(sa) == 2 and sb == (sa[0], 1):
        return
    raise ValueError(f"{op}: incompatible shapes {sa} and {sb}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    if len(g.shape) == 2 and shape == (g.shape[1],):
        return g.sum(axis=0)
    if len(g.shape) == 2 and shape == (g.shape[0], 1):
        return g.sum(axis=1, keepdims=True)
    raise ValueError(f"cannot reduce gradient {g.shape} to {shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("add", a, b)

    def vjp(g):
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, _reduce_to(g, b.data.shape))

    return _node(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("sub", a, b)

    def vjp(g):
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, -_reduce_to(g, b.data.shape))

    return _node(a.data - b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        _accumulate(a, -g)

    return _node(-a.data, (a,), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("mul", a, b)

    def vjp(g):
        _accumulate(a, _reduce_to(g * b.data, a.data.shape))
        _accumulate(b, _reduce_to(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with row-independent accumulation order."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")

    def vjp(g):
        # grads are not part of the bit-exactness contract; BLAS is fine here
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(np.einsum("ij,jk->ik", a.data, b.data), (a, b), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        _accumulate(a, g * (1.0 - out * out))

    return _node(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g):
        _accumulate(a, g * out * (1.0 - out))

    return _node(out, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        _accumulate(a, g * out)

    return _node(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log: input has non-positive entries")

    def vjp(g):
        _accumulate(a, g / a.data)

    return _node(np.log(a.data), (a,), vjp)


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data

    def vjp(g):
        _accumulate(a, -g * out * out)

    return _node(out, (a,), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def vjp(g):
        _accumulate(a, np.where(inside, g, 0.0))

    return _node(out, (a,), vjp)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _node(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions, reshaping, gathering


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.data.shape))

    return _node(out, (a,), vjp)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)
    inv = 1.0 / n

    def vjp(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g * inv, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg * inv, a.data.shape))

    return _node(out, (a,), vjp)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty input list")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    ts = tuple(tensors)

    def vjp(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), ts, vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.data.shape[axis]:
        raise ValueError(f"narrow: [{start}, {start + length}) outside axis {axis} of {a.data.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def vjp(g):
        if not a.stop:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[idx] += g

    return _node(a.data[idx].copy(), (a,), vjp)


def gather_rows(w: Tensor, indices: np.ndarray) -> Tensor:
    """Rows `w[indices]`; the one-hot-times-matrix product, bit-exactly."""
    idx = np.asarray(indices)
    if idx.ndim != 1 or w.data.ndim != 2:
        raise ValueError(f"gather_rows: need 1-D indices and 2-D table, got {idx.shape} and {w.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= w.data.shape[0]):
        raise ValueError(f"gather_rows: index out of range for table with {w.data.shape[0]} rows")

    def vjp(g):
        if not w.stop:
            if w.grad is None:
                w.grad = np.zeros_like(w.data)
            np.add.at(w.grad, idx, g)

    return _node(w.data[idx], (w,), vjp)


def where_mask(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Rowwise select: `a` where mask else `b`. Mask is a constant bool array.

    Selection copies bits, so masked batching introduces no rounding at all.
    """
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, a.data, b.data)

    def vjp(g):
        _accumulate(a, _reduce_to(np.where(m, g, 0.0), a.data.shape))
        _accumulate(b, _reduce_to(np.where(m, 0.0, g), b.data.shape))

    return _node(out, (a, b), vjp)


def stack_steps(rows: list[Tensor]) -> Tensor:
    """Stack T tensors of shape (B, D) into (T, B, D)."""
    if not rows:
        raise ValueError("stack_steps: empty input list")
    ts = tuple(rows)

    def vjp(g):
        for t, r in enumerate(ts):
            _accumulate(r, g[t])

    return _node(np.stack([r.data for r in rows]), ts, vjp)


def step_slice(a: Tensor, t: int) -> Tensor:
    """Slice (T, B, D)[t] -> (B, D)."""

    def vjp(g):
        if not a.stop:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[t] += g

    return _node(a.data[t].copy(), (a,), vjp)


def _reversal_index(T: int, lengths: np.ndarray) -> np.ndarray:
    steps = np.arange(T)[:, None]  # (T, 1)
    rev = lengths[None, :] - 1 - steps  # (T, B)
    return np.where(steps < lengths[None, :], rev, steps)


def reverse_steps(a: Tensor, lengths: np.ndarray) -> Tensor:
    """Reverse (T, B, D) along time per batch column, honoring lengths.

    out[t, b] = a[L_b - 1 - t, b] for t < L_b, and a[t, b] beyond. The map is
    its own inverse, so the backward pass reuses the same index.
    """
    T, B = a.data.shape[0], a.data.shape[1]
    lengths = np.asarray(lengths)
    if lengths.shape != (B,):
        raise ValueError(f"reverse_steps: lengths shape {lengths.shape} does not match batch {B}")
    idx = _reversal_index(T, lengths)
    cols = np.arange(B)[None, :]

    def vjp(g):
        if not a.stop:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[idx, cols] += g  # permutation per column: no duplicate targets

    return _node(a.data[idx, cols], (a,), vjp)


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    max_rel_error: float
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures


def grad_check(f, params: dict, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic and numeric gradients of a scalar-valued builder.

    `f()` must rebuild its graph from the current `.data` of the tensors in
    `params` and return the scalar loss node. Coordinates where the absolute
    difference is below 1e-8 pass regardless of relative error.
    """
    loss = f()
    backward(loss)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for name, p in params.items()}

    report = GradCheckReport(max_rel_error=0.0)
    for name, p in params.items():
        base = p.data.copy()
        flat = base.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            p.data = flat.reshape(base.shape)
            up = f().item()
            flat[i] = orig - step
            p.data = flat.reshape(base.shape)
            down = f().item()
            flat[i] = orig
            p.data = base
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].ravel()[i]
            diff = abs(a - numeric)
            rel = 0.0 if diff == 0.0 else diff / max(abs(a), abs(numeric))
            report.checked += 1
            report.max_rel_error = max(report.max_rel_error, rel)
            if rel >= tol and diff >= 1e-8:  # absolute fallback for near-zero grads
                report.failures.append((name, i, a, numeric, rel))
    return report
