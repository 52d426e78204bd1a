"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

Minimal define-by-run engine: every op returns a new Tensor that remembers
its parents and a closure propagating the upstream gradient. The graph is
rebuilt each step and traversed once, in reverse topological order, by
``backward`` on a 1x1 loss. A detached tensor keeps its values but drops
out of the graph entirely, so no gradient ever flows through it.

Shapes are strict: all tensors are (rows, cols); the only broadcast is
adding a (1, M) row vector to an (N, M) matrix. Every op validates that
its output is finite and raises NumericError otherwise.
"""

from __future__ import annotations

import numpy as np


class NumericError(ArithmeticError):
    """An op produced NaN or Inf values."""


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{op} produced non-finite values")


def _as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A 2-D value in the computation graph.

    ``grad`` is allocated lazily on the first accumulation. Calling
    ``backward`` repeatedly without ``zero_grad`` keeps accumulating.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = _as_matrix(values)
        _check_finite(self.values, "tensor")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ValueError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += grad

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(values: np.ndarray, op: str, parents: tuple["Tensor", ...], backward) -> "Tensor":
        _check_finite(values, op)
        out = Tensor.__new__(Tensor)
        out.values = values
        out.grad = None
        out._parents = ()
        out._backward = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
        return out

    def detach(self) -> "Tensor":
        """Same values, no graph node; gradients never flow through it."""
        return Tensor(self.values.copy())

    # -- ops -----------------------------------------------------------------

    def add(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.shape == b.shape:
            def backward(g):
                a._accumulate(g)
                b._accumulate(g)
        elif b.shape == (1, a.shape[1]):
            def backward(g):
                a._accumulate(g)
                b._accumulate(g.sum(axis=0, keepdims=True))
        else:
            raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")
        return Tensor._result(a.values + b.values, "add", (a, b), backward)

    def sub(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.shape != b.shape:
            raise ValueError(f"sub: incompatible shapes {a.shape} and {b.shape}")

        def backward(g):
            a._accumulate(g)
            b._accumulate(-g)

        return Tensor._result(a.values - b.values, "sub", (a, b), backward)

    def mul(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.shape != b.shape:
            raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}")

        def backward(g):
            a._accumulate(g * b.values)
            b._accumulate(g * a.values)

        return Tensor._result(a.values * b.values, "mul", (a, b), backward)

    def scale(self, factor: float) -> "Tensor":
        a = self
        factor = float(factor)

        def backward(g):
            a._accumulate(g * factor)

        return Tensor._result(a.values * factor, "scale", (a,), backward)

    def matmul(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

        def backward(g):
            a._accumulate(g @ b.values.T)
            b._accumulate(a.values.T @ g)

        return Tensor._result(a.values @ b.values, "matmul", (a, b), backward)

    def relu(self) -> "Tensor":
        a = self
        gate = a.values > 0

        def backward(g):
            a._accumulate(g * gate)

        return Tensor._result(np.maximum(a.values, 0.0), "relu", (a,), backward)

    def row_softmax(self) -> "Tensor":
        a = self
        shifted = a.values - a.values.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)

        def backward(g):
            dot = (g * probs).sum(axis=1, keepdims=True)
            a._accumulate(probs * (g - dot))

        return Tensor._result(probs, "row_softmax", (a,), backward)

    def log(self) -> "Tensor":
        a = self

        def backward(g):
            a._accumulate(g / a.values)

        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.log(a.values)
        return Tensor._result(values, "log", (a,), backward)

    def clamp_min(self, floor: float) -> "Tensor":
        a = self
        floor = float(floor)
        gate = a.values >= floor

        def backward(g):
            a._accumulate(g * gate)

        return Tensor._result(np.maximum(a.values, floor), "clamp_min", (a,), backward)

    def mean_all(self) -> "Tensor":
        a = self
        size = a.values.size

        def backward(g):
            a._accumulate(np.full_like(a.values, g[0, 0] / size))

        return Tensor._result(np.array([[a.values.mean()]]), "mean_all", (a,), backward)

    def sum_all(self) -> "Tensor":
        a = self

        def backward(g):
            a._accumulate(np.full_like(a.values, g[0, 0]))

        return Tensor._result(np.array([[a.values.sum()]]), "sum_all", (a,), backward)

    def sum_rows(self) -> "Tensor":
        a = self

        def backward(g):
            a._accumulate(np.broadcast_to(g, a.shape))

        return Tensor._result(a.values.sum(axis=1, keepdims=True), "sum_rows", (a,), backward)

    def gather_rows(self, indices) -> "Tensor":
        a = self
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
            raise ValueError(f"gather_rows: index out of range for {a.shape[0]} rows")

        def backward(g):
            buf = np.zeros_like(a.values)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

        return Tensor._result(a.values[idx], "gather_rows", (a,), backward)

    def concat_cols(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"concat_cols: row counts differ, {a.shape} and {b.shape}")
        split = a.shape[1]

        def backward(g):
            a._accumulate(g[:, :split])
            b._accumulate(g[:, split:])

        return Tensor._result(np.hstack([a.values, b.values]), "concat_cols", (a, b), backward)

    def linear_map(self, operator) -> "Tensor":
        """Apply a constant linear operator to the rows of this tensor.

        ``operator`` must expose ``apply(values)`` and ``apply_adjoint(grad)``
        implementing A @ v and A.T @ g for the same matrix A.
        """
        a = self

        def backward(g):
            a._accumulate(operator.apply_adjoint(g))

        values = np.asarray(operator.apply(a.values), dtype=np.float64)
        return Tensor._result(values, "linear_map", (a,), backward)

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return self.add(other)

    def __sub__(self, other):
        return self.sub(other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return self.mul(other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __matmul__(self, other):
        return self.matmul(other)

    # -- backward pass -----------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable requires_grad tensor."""
        if self.shape != (1, 1):
            raise ValueError(f"backward needs a 1x1 loss tensor, got {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor with no graph (detached or constant)")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones((1, 1)))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
