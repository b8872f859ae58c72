"""Minimal reverse-mode automatic differentiation over numpy arrays.

A tape-free graph of :class:`Tensor` nodes; each op records its parents and a
closure that routes the output gradient back to them.  Only the operations
needed by the graph transformer are implemented, all in float64, all
deterministic.  Gradients accumulate in a fixed topological order, so repeated
runs are bit-identical.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "add",
    "mul",
    "affine",
    "gather_rows",
    "concat_rows",
    "concat_cols",
    "slice_cols",
    "segment_softmax",
    "segment_sum",
    "reduce_sum",
    "relu",
    "sigmoid",
    "softplus",
    "scale",
]


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        requires_grad: bool = False,
    ) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor (default seed: all-ones)."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        self.accumulate(np.ones_like(self.value) if seed is None else seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar used by model code
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value: np.ndarray) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64))


def parameter(value: np.ndarray) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gdim, sdim) in enumerate(zip(g.shape, shape)):
        if sdim == 1 and gdim != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    value = a.value + b.value

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.value.shape))

    return Tensor(value, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    value = a.value * b.value

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.value, b.value.shape))

    return Tensor(value, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    value = a.value * factor

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g * factor)

    return Tensor(value, (a,), backward)


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w.T (+ b): the linear-layer primitive; w has shape (out, in)."""
    value = x.value @ w.value.T
    if b is not None:
        value = value + b.value

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g @ w.value)
        if w.requires_grad:
            w.accumulate(g.T @ x.value)
        if b is not None and b.requires_grad:
            b.accumulate(_unbroadcast(g, b.value.shape))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(value, parents, backward)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    value = x.value[idx]

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.value)
            np.add.at(gx, idx, g)
            x.accumulate(gx)

    return Tensor(value, (x,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    value = np.concatenate([p.value for p in parts], axis=0)
    sizes = [p.value.shape[0] for p in parts]

    def backward(g: np.ndarray) -> None:
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate(g[offset:offset + size])
            offset += size

    return Tensor(value, tuple(parts), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    value = np.concatenate([p.value for p in parts], axis=1)
    sizes = [p.value.shape[1] for p in parts]

    def backward(g: np.ndarray) -> None:
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate(g[:, offset:offset + size])
            offset += size

    return Tensor(value, tuple(parts), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    value = x.value[:, start:stop]

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.value)
            gx[:, start:stop] = g
            x.accumulate(gx)

    return Tensor(value, (x,), backward)


def _segment_indices(segments: np.ndarray, num_segments: int) -> list[np.ndarray]:
    buckets: list[list[int]] = [[] for _ in range(num_segments)]
    for i, s in enumerate(segments):
        buckets[int(s)].append(i)
    return [np.asarray(b, dtype=np.intp) for b in buckets]


def segment_softmax(scores: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of a column vector of scores within each segment.

    Rows sum to one inside every nonempty segment; an empty segment simply
    contributes no rows.
    """
    segments = np.asarray(segments, dtype=np.intp)
    buckets = _segment_indices(segments, num_segments)
    value = np.zeros_like(scores.value)
    for bucket in buckets:
        if bucket.size == 0:
            continue
        s = scores.value[bucket, 0]
        e = np.exp(s - s.max())
        value[bucket, 0] = e / e.sum()

    def backward(g: np.ndarray) -> None:
        if not scores.requires_grad:
            return
        gs = np.zeros_like(scores.value)
        for bucket in buckets:
            if bucket.size == 0:
                continue
            y = value[bucket, 0]
            gb = g[bucket, 0]
            gs[bucket, 0] = y * (gb - float(np.dot(gb, y)))
        scores.accumulate(gs)

    return Tensor(value, (scores,), backward)


def segment_sum(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of x into their segment slots; output (num_segments, d)."""
    segments = np.asarray(segments, dtype=np.intp)
    value = np.zeros((num_segments, x.value.shape[1]), dtype=np.float64)
    np.add.at(value, segments, x.value)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g[segments])

    return Tensor(value, (x,), backward)


def reduce_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    value = x.value.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        if axis is None:
            x.accumulate(np.full_like(x.value, float(g)))
        else:
            x.accumulate(np.broadcast_to(np.expand_dims(g, axis) if not keepdims else g, x.value.shape).copy())

    return Tensor(value, (x,), backward)


def relu(x: Tensor) -> Tensor:
    value = np.maximum(x.value, 0.0)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g * (x.value > 0.0))

    return Tensor(value, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    value = np.empty_like(x.value)
    pos = x.value >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-x.value[pos]))
    ex = np.exp(x.value[~pos])
    value[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g * value * (1.0 - value))

    return Tensor(value, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated stably; the building block of BCE-with-logits."""
    value = np.logaddexp(0.0, x.value)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            sig = np.empty_like(x.value)
            pos = x.value >= 0
            sig[pos] = 1.0 / (1.0 + np.exp(-x.value[pos]))
            ex = np.exp(x.value[~pos])
            sig[~pos] = ex / (1.0 + ex)
            x.accumulate(g * sig)

    return Tensor(value, (x,), backward)
