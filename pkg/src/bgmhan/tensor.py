"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable primitive is a :class:`Function` subclass with a pure
``forward`` over numpy arrays and a ``backward`` that maps the output
gradient to one gradient per input.  Applying a function records a node on
the output tensor; :func:`backward` walks those nodes in reverse
topological order.

numpy supplies the array storage and BLAS kernels only; all derivative
rules live here.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class Tensor:
    """n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Function | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _not_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Function:
    """A recorded primitive: forward on arrays, backward on gradients."""

    name = "function"

    def __init__(self, inputs: tuple[Tensor, ...], kwargs: dict):
        self.inputs = inputs
        self.kwargs = kwargs
        self.output: Tensor | None = None

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(tensors, kwargs)
        out_data = fn.forward(*(t.data for t in tensors))
        needs = any(t.requires_grad for t in tensors)
        out = Tensor._wrap(out_data, needs)
        if needs:
            out.node = fn
            fn.output = out
        return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


class Add(Function):
    name = "add"

    def forward(self, a, b):
        return a + b

    def backward(self, g):
        a, b = self.inputs
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        return a - b

    def backward(self, g):
        a, b = self.inputs
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        return a * b

    def backward(self, g):
        a, b = self.inputs
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb


class Div(Function):
    name = "div"

    def forward(self, a, b):
        return a / b

    def backward(self, g):
        a, b = self.inputs
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim > 2 and b.ndim == 2:
            # one BLAS call instead of a loop over the batch axes
            return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
        return np.matmul(a, b)

    def backward(self, g):
        a, b = self.inputs
        ga = gb = None
        if a.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                # shared weight: fold batch axes into rows
                a2 = a.data.reshape(-1, a.shape[-1])
                gb = a2.T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast as in ``numpy.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


class Reshape(Function):
    name = "reshape"

    def forward(self, a):
        return a.reshape(self.kwargs["shape"])

    def backward(self, g):
        return (g.reshape(self.inputs[0].shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, a):
        return np.transpose(a, self.kwargs["axes"])

    def backward(self, g):
        axes = self.kwargs["axes"]
        if axes is None:
            return (np.transpose(g),)
        return (np.transpose(g, np.argsort(axes)),)


def reshape(a, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes=None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


class Sum(Function):
    name = "sum"

    def forward(self, a):
        return np.sum(a, axis=self.kwargs["axis"], keepdims=self.kwargs["keepdims"])

    def backward(self, g):
        shape = self.inputs[0].shape
        axis = self.kwargs["axis"]
        if axis is not None and not self.kwargs["keepdims"]:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return Sum.apply(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# ---------------------------------------------------------------------------
# nonlinearities


class Softmax(Function):
    name = "softmax"

    def forward(self, x):
        mask = self.kwargs.get("mask")
        if mask is not None:
            x = np.where(mask, x, -np.inf)
        shifted = x - np.max(x, axis=-1, keepdims=True)
        e = np.exp(shifted)
        s = e / np.sum(e, axis=-1, keepdims=True)
        self.saved = s
        return s

    def backward(self, g):
        s = self.saved
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)


def softmax(x, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` (broadcastable boolean array) marks admissible entries; the
    others get probability exactly zero.  Every slice needs at least one
    admissible entry.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(np.any(np.broadcast_to(mask, as_tensor(x).shape), axis=-1)):
            raise ContractError("softmax: a slice has every position masked")
    return Softmax.apply(x, mask=mask)


_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TANH_C = math.sqrt(2.0 / math.pi)


class Gelu(Function):
    name = "gelu"

    def forward(self, x):
        if self.kwargs["approximate"]:
            inner = _TANH_C * (x + 0.044715 * x**3)
            t = np.tanh(inner)
            self.saved = t
            return 0.5 * x * (1.0 + t)
        cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
        self.saved = cdf
        return x * cdf

    def backward(self, g):
        x = self.inputs[0].data
        if self.kwargs["approximate"]:
            t = self.saved
            dinner = _TANH_C * (1.0 + 3 * 0.044715 * x**2)
            return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (self.saved + x * pdf),)


def gelu(x, approximate: bool = False) -> Tensor:
    """GELU; exact ``x * Phi(x)`` unless ``approximate`` selects the tanh form."""
    return Gelu.apply(x, approximate=approximate)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self.saved = out
        return out

    def backward(self, g):
        s = self.saved
        return (g * s * (1.0 - s),)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


class Square(Function):
    name = "square"

    def forward(self, x):
        return x * x

    def backward(self, g):
        return (2.0 * g * self.inputs[0].data,)


def square(x) -> Tensor:
    return Square.apply(x)


class LayerNorm(Function):
    name = "layer_norm"

    def forward(self, x, gain, bias):
        eps = self.kwargs["eps"]
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        self.saved = (xhat, inv)
        return xhat * gain + bias

    def backward(self, g):
        x, gain, bias = self.inputs
        xhat, inv = self.saved
        d = x.shape[-1]
        ggain = gbias = gx = None
        if gain.requires_grad:
            ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gbias = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gxhat = g * gain.data
            gx = inv * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * np.mean(gxhat * xhat, axis=-1, keepdims=True)
            )
        return gx, ggain, gbias


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: input {x.shape}, gain {gain.shape}, bias {bias.shape}")
    return LayerNorm.apply(x, gain, bias, eps=eps)


# ---------------------------------------------------------------------------
# pooling, lookup, loss helpers


class MaskedMean(Function):
    name = "masked_mean"

    def forward(self, x):
        weights = self.kwargs["weights"]
        return np.einsum("...n,...nd->...d", weights, x)

    def backward(self, g):
        weights = self.kwargs["weights"]
        return (weights[..., :, None] * g[..., None, :],)


def mean_pool(x, mask: np.ndarray | None = None) -> Tensor:
    """Average over the second-to-last axis, counting only ``mask``-ed rows."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"mean_pool needs rank >= 2, got {x.shape}")
    n = x.shape[-2]
    if n == 0:
        raise ContractError("mean_pool over an empty axis")
    if mask is None:
        mask = np.ones(x.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise ContractError("mean_pool: a slice has no unmasked rows")
    weights = mask / counts
    return MaskedMean.apply(x, weights=weights)


class Embedding(Function):
    name = "embedding"

    def forward(self, table):
        return table[self.kwargs["ids"]]

    def backward(self, g):
        table = self.inputs[0]
        out = np.zeros_like(table.data)
        d = table.shape[-1]
        np.add.at(out, self.kwargs["ids"].reshape(-1), g.reshape(-1, d))
        return (out,)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    table = as_tensor(table)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range for table with {table.shape[0]} rows")
    return Embedding.apply(table, ids=ids)


class TakeRows(Function):
    name = "take_rows"

    def forward(self, x):
        return x[self.kwargs["index"]]

    def backward(self, g):
        out = np.zeros_like(self.inputs[0].data)
        np.add.at(out, self.kwargs["index"], g)
        return (out,)


class ScatterRows(Function):
    name = "scatter_rows"

    def forward(self, x):
        out = np.zeros((self.kwargs["rows"],) + x.shape[1:], dtype=x.dtype)
        out[self.kwargs["index"]] = x
        return out

    def backward(self, g):
        return (g[self.kwargs["index"]],)


def take_rows(x, index: np.ndarray) -> Tensor:
    """``x[index]`` along the first axis."""
    return TakeRows.apply(x, index=np.asarray(index, dtype=np.int64))


def scatter_rows(x, index: np.ndarray, rows: int) -> Tensor:
    """Zero tensor with ``rows`` rows whose rows ``index`` are filled from ``x``.

    ``index`` must not repeat.
    """
    return ScatterRows.apply(x, index=np.asarray(index, dtype=np.int64), rows=rows)


class WeightedBce(Function):
    name = "weighted_bce"

    def forward(self, p):
        y, w, eps = self.kwargs["labels"], self.kwargs["weights"], self.kwargs["eps"]
        pc = np.clip(p, eps, 1.0 - eps)
        self.saved = pc
        return np.asarray(-np.sum(w * (y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))))

    def backward(self, g):
        y, w = self.kwargs["labels"], self.kwargs["weights"]
        pc = self.saved
        return (g * w * (pc - y) / (pc * (1.0 - pc)),)


# ---------------------------------------------------------------------------
# graph traversal


class ComputationRecord:
    """Topologically ordered list of the functions that produced a tensor."""

    def __init__(self, nodes: list[Function]):
        self.nodes = nodes

    @classmethod
    def of(cls, root: Tensor) -> "ComputationRecord":
        order: list[Function] = []
        seen: set[int] = set()
        if root.node is None:
            return cls(order)
        stack: list[tuple[Function, bool]] = [(root.node, False)]
        while stack:
            fn, expanded = stack.pop()
            if expanded:
                order.append(fn)
                continue
            if id(fn) in seen:
                continue
            seen.add(id(fn))
            stack.append((fn, True))
            for t in fn.inputs:
                if t.node is not None and id(t.node) not in seen:
                    stack.append((t.node, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def replay(self) -> list[np.ndarray]:
        """Re-run every forward from the recorded inputs' current data.

        Intermediate results feed later nodes, so replaying on unchanged
        leaves reproduces the original outputs exactly.
        """
        fresh: dict[int, np.ndarray] = {}
        outs = []
        for fn in self.nodes:
            arrays = [fresh.get(id(t), t.data) for t in fn.inputs]
            clone = type(fn)(fn.inputs, fn.kwargs)
            out = clone.forward(*arrays)
            fresh[id(fn.output)] = out
            outs.append(out)
        return outs

    def dump(self) -> str:
        lines = []
        index = {id(fn.output): i for i, fn in enumerate(self.nodes)}
        for i, fn in enumerate(self.nodes):
            srcs = []
            for t in fn.inputs:
                if id(t) in index:
                    srcs.append(f"%{index[id(t)]}")
                elif t.name:
                    srcs.append(t.name)
                else:
                    srcs.append(f"const{list(t.shape)}")
            lines.append(f"%{i} = {fn.name}({', '.join(srcs)}) -> {list(fn.output.shape)}")
        return "\n".join(lines)


def backward(
    loss: Tensor,
    params: Iterable[Tensor] | None = None,
    record: ComputationRecord | None = None,
) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    ``params`` get their gradients reset to zero first, so parameters the
    loss does not depend on end with an all-zero gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            p.zero_grad()
    if record is None:
        record = ComputationRecord.of(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for fn in reversed(record.nodes):
        out = fn.output
        g = grads.pop(id(out), None)
        if g is None:
            continue
        if out is loss or out.grad is not None:
            out.grad = g if out.grad is None else out.grad + g
        for t, gt in zip(fn.inputs, fn.backward(g)):
            if gt is None or not t.requires_grad:
                continue
            if t.node is None:
                t.grad = gt.copy() if t.grad is None else t.grad + gt
            else:
                key = id(t)
                grads[key] = gt if key not in grads else grads[key] + gt


def finite_diff_grad(
    f: Callable[[Tensor], Tensor | float],
    x: Tensor,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``x.data`` is perturbed in place and restored afterwards.
    """
    flat = x.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(x))
        flat[i] = orig - h
        fm = _scalar(f(x))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    """||a - b|| / max(||a||, ||b||, floor)."""
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return num / den


def check_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> dict[str, float]:
    """Compare backward() against central differences for each tensor in ``params``.

    Returns parameter name (or index) mapped to relative error.
    """
    loss = f()
    backward(loss, params)
    errors = {}
    for i, p in enumerate(params):
        numeric = finite_diff_grad(lambda _: f(), p, h)
        errors[p.name or str(i)] = relative_error(p.grad, numeric)
    return errors
