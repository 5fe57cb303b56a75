"""Minimal dense float64 tensor with reverse-mode autodiff.

Every primitive records a backward closure; ``Tensor.backward()`` walks the
recorded graph in reverse topological order exactly once per node. All data is
float64 and every primitive output is checked for NaN/Inf, which is treated as
an error rather than a silent state.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericsError",
    "matmul",
    "softmax",
    "layer_norm",
    "relu",
    "mean_pool",
    "concat",
    "gradient_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class NumericsError(FloatingPointError):
    """A primitive produced a NaN or Inf value."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense n-dimensional float64 array participating in reverse-mode AD."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NumericsError("primitive produced non-finite values")
        out = cls(data)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- autodiff driver ------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this (scalar or any-shape) tensor with seed 1."""
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic primitives ------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._coerce(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(
                f"matmul requires >=2-d operands, got {self.shape} and {other.shape}"
            )
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul inner extents differ: {self.shape} vs {other.shape}")
        out_data = self.data @ other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __matmul__ = matmul

    def transpose_last(self) -> "Tensor":
        """Swap the last two axes."""
        out_data = np.swapaxes(self.data, -1, -2)

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.swapaxes(g, -1, -2))

        return Tensor._from_op(out_data, (self,), backward)

    def reshape(self, *shape: int) -> "Tensor":
        out_data = self.data.reshape(shape)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.shape))

        return Tensor._from_op(out_data, (self,), backward)

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        """Contiguous slice along one axis."""
        index = [slice(None)] * self.ndim
        index[axis] = slice(start, start + length)
        index = tuple(index)
        out_data = self.data[index]

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                full[index] = g
                self._accumulate(full)

        return Tensor._from_op(out_data, (self,), backward)

    def relu(self) -> "Tensor":
        out_data = np.maximum(self.data, 0.0)

        def backward(g):
            if self.requires_grad:
                # subgradient at 0 is 0
                self._accumulate(g * (self.data > 0.0))

        return Tensor._from_op(out_data, (self,), backward)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g / self.data)

        return Tensor._from_op(out_data, (self,), backward)

    def clamp_min(self, floor: float) -> "Tensor":
        out_data = np.maximum(self.data, floor)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * (self.data > floor))

        return Tensor._from_op(out_data, (self,), backward)

    def sum(self) -> "Tensor":
        out_data = np.asarray(self.data.sum())

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.broadcast_to(g, self.shape).copy())

        return Tensor._from_op(out_data, (self,), backward)

    def mean(self) -> "Tensor":
        n = self.data.size
        out_data = np.asarray(self.data.mean())

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.broadcast_to(g / n, self.shape).copy())

        return Tensor._from_op(out_data, (self,), backward)

    def mean_axis(self, axis: int) -> "Tensor":
        """Mean along one axis (used for token pooling along axis -2)."""
        extent = self.shape[axis]
        if extent == 0:
            raise ShapeError("cannot pool an empty axis")
        out_data = self.data.mean(axis=axis)

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.repeat(np.expand_dims(g / extent, axis), extent, axis=axis))

        return Tensor._from_op(out_data, (self,), backward)

    def softmax(self, axis: int = -1) -> "Tensor":
        if self.shape[axis] == 0:
            raise ShapeError("softmax over an empty axis")
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        exps = np.exp(shifted)
        out_data = exps / exps.sum(axis=axis, keepdims=True)

        def backward(g):
            if self.requires_grad:
                inner = (g * out_data).sum(axis=axis, keepdims=True)
                self._accumulate((g - inner) * out_data)

        return Tensor._from_op(out_data, (self,), backward)

    def gather_rows(self, indices: np.ndarray) -> "Tensor":
        """Pick one entry per row of a 2-d tensor: out[b] = self[b, indices[b]]."""
        if self.ndim != 2:
            raise ShapeError(f"gather_rows needs a 2-d tensor, got {self.shape}")
        rows = np.arange(self.shape[0])
        out_data = self.data[rows, indices]

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                full[rows, indices] = g
                self._accumulate(full)

        return Tensor._from_op(out_data, (self,), backward)


# -- free-function primitives ------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a.matmul(b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x.softmax(axis)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm over an empty final axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std

    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gxhat = g * gain.data
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (gxhat - m1 - xhat * m2))

    return Tensor._from_op(out_data, (x, gain, bias), backward)


def mean_pool(tokens: Tensor) -> Tensor:
    """Arithmetic mean over the token axis (-2): [..., L, d] -> [..., d]."""
    if tokens.ndim < 2:
        raise ShapeError(f"mean_pool needs at least 2 dims, got {tokens.shape}")
    return tokens.mean_axis(-2)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    parts = list(tensors)
    out_data = np.concatenate([t.data for t in parts], axis=axis)
    extents = [t.shape[axis] for t in parts]
    offsets = np.cumsum([0] + extents)

    def backward(g):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return Tensor._from_op(out_data, tuple(parts), backward)


# -- gradient verification ----------------------------------------------------


def gradient_check(f, params: dict[str, Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` is a zero-argument callable returning a scalar Tensor built from
    `params`. Relative error per entry is
    |analytic - central| / max(1, |analytic|, |central|).
    """
    errors = gradient_check_detailed(f, params, h)
    return max(errors.values())


def gradient_check_detailed(
    f, params: dict[str, Tensor], h: float = 1e-5, grad_scale: dict[str, float] | None = None
) -> dict[str, float]:
    """Per-parameter max relative error of analytic vs central-difference grads.

    `grad_scale` multiplies the analytic gradient of named parameters before
    comparison; it exists only as a sabotage hook for verifying that the check
    itself catches wrong backward rules.
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ShapeError("gradient_check requires a scalar-valued function")
    if not math.isfinite(loss.item()):
        raise NumericsError("non-finite loss in gradient_check")
    loss.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }
    if grad_scale:
        for name, scale in grad_scale.items():
            analytic[name] = analytic[name] * scale

    errors: dict[str, float] = {}
    for name, p in params.items():
        worst = 0.0
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f().item()
            flat[i] = orig - h
            f_minus = f().item()
            flat[i] = orig
            central = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            err = abs(a - central) / max(1.0, abs(a), abs(central))
            worst = max(worst, err)
        errors[name] = worst
    return errors
