"""A small reverse-mode differentiation tape for dense affine and pointwise ops.

Every op computes its value eagerly and pushes a closure that, when the tape
is replayed backwards, pushes the output gradient into its inputs.
"""

from __future__ import annotations

import numpy as np


class Node:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value: np.ndarray, requires_grad: bool = True):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Tape:
    def __init__(self):
        self._ops = []

    def __len__(self):
        return len(self._ops)

    def constant(self, value) -> Node:
        return Node(np.asarray(value, dtype=np.float64), requires_grad=False)

    def param(self, value) -> Node:
        return Node(value, requires_grad=True)

    def affine(self, x: Node, W: Node, b: Node) -> Node:
        out = Node(x.value @ W.value + b.value)

        def backward():
            g = out.grad
            if g is None:
                return
            if x.requires_grad:
                x.accumulate(g @ W.value.T)
            W.accumulate(x.value.T @ g)
            b.accumulate(g.sum(axis=0))

        self._ops.append(backward)
        return out

    def silu(self, x: Node) -> Node:
        s = _sigmoid(x.value)
        out = Node(x.value * s)

        def backward():
            if out.grad is not None:
                x.accumulate(out.grad * (s + x.value * s * (1.0 - s)))

        self._ops.append(backward)
        return out

    def gather(self, table: Node, index: np.ndarray) -> Node:
        out = Node(table.value[index])

        def backward():
            if out.grad is None or not table.requires_grad:
                return
            g = np.zeros_like(table.value)
            np.add.at(g, index, out.grad)
            table.accumulate(g)

        self._ops.append(backward)
        return out

    def concat(self, nodes: list[Node]) -> Node:
        widths = [n.value.shape[1] for n in nodes]
        out = Node(np.concatenate([n.value for n in nodes], axis=1))

        def backward():
            if out.grad is None:
                return
            start = 0
            for n, width in zip(nodes, widths):
                n.accumulate(out.grad[:, start:start + width])
                start += width

        self._ops.append(backward)
        return out

    def backward(self, out: Node, grad: np.ndarray) -> None:
        """Seed ``out`` with ``grad`` and replay the tape in reverse order."""
        if grad.shape != out.value.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != output shape {out.value.shape}")
        out.grad = np.array(grad, dtype=np.float64, copy=True)
        for op in reversed(self._ops):
            op()
