"""Dense float64 arrays with a reverse-mode tape, Adam, and a gradient checker.

Only the handful of primitives the co-investment model needs are provided.
Shapes must match exactly; the only implicit broadcast is a 0-d operand
against an array of any shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared where only finite values are allowed."""


def _check_finite(value: np.ndarray, where: str) -> None:
    # NaN and inf survive a sum; only a non-finite sum needs the full scan.
    if not math.isfinite(value.sum()) and not np.isfinite(value).all():
        raise NonFiniteError(f"non-finite value produced by {where}")


class Tensor:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False, _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A trainable leaf. ``grad`` always has the same shape as ``value``."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True)
        _check_finite(self.value, f"parameter {name!r}")
        self.name = name
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents: tuple[Tensor, ...], vjp, where: str) -> Tensor:
    value = np.asarray(value, dtype=np.float64)
    _check_finite(value, where)
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, parents, vjp)
    return Tensor(value)


def _same_or_scalar(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum())


# ----------------------------------------------------------------------
# primitives
# ----------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_or_scalar(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.value + b.value, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_or_scalar(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.value - b.value, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_or_scalar(a, b, "mul")

    def vjp(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _result(a.value * b.value, (a, b), vjp, "mul")


def matmul(a, b) -> Tensor:
    """Matrix-matrix or matrix-vector product (no batching)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def vjp(g):
        if b.ndim == 1:
            return np.outer(g, b.value), a.value.T @ g
        return g @ b.value.T, a.value.T @ g

    return _result(a.value @ b.value, (a, b), vjp, "matmul")


def sliding_dot(a, kernels) -> Tensor:
    """Valid stride-1 windowed dot products along the last axis.

    ``a`` has shape (P, R, N) and ``kernels`` shape (K, R, L); the result
    has shape (P, K, N - L + 1) with
    ``out[p, k, t] = sum_{r, l} a[p, r, t + l] * kernels[k, r, l]``.
    """
    a, kernels = as_tensor(a), as_tensor(kernels)
    if a.ndim != 3 or kernels.ndim != 3:
        raise ValueError("sliding_dot expects (P, R, N) input and (K, R, L) kernels")
    P, R, N = a.shape
    K, Rk, L = kernels.shape
    if Rk != R:
        raise ValueError(f"sliding_dot: input has {R} rows, kernels have {Rk}")
    if N < L:
        raise ValueError(f"sliding_dot: series length {N} shorter than window {L}")
    T = N - L + 1
    # (P, R, T, L) -> (P, T, R*L)
    windows = sliding_window_view(a.value, L, axis=2)
    flat = windows.transpose(0, 2, 1, 3).reshape(P, T, R * L)
    kflat = kernels.value.reshape(K, R * L)
    out = (flat @ kflat.T).transpose(0, 2, 1)

    def vjp(g):
        # g: (P, K, T)
        gk = np.einsum("pkt,ptj->kj", g, flat).reshape(K, R, L)
        ga = np.zeros_like(a.value)
        if a.requires_grad:
            for lag in range(L):
                ga[:, :, lag:lag + T] += np.einsum("pkt,kr->prt", g, kernels.value[:, :, lag])
        return ga, gk

    return _result(out, (a, kernels), vjp, "sliding_dot")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _result(s, (a,), vjp, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return _result(y, (a,), vjp, "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.value)

    def vjp(g):
        return (g * y,)

    return _result(y, (a,), vjp, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0):
        raise NonFiniteError("log of a non-positive value")
    y = np.log(a.value)

    def vjp(g):
        return (g / a.value,)

    return _result(y, (a,), vjp, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0):
        raise NonFiniteError("sqrt is only differentiable for positive input")
    y = np.sqrt(a.value)

    def vjp(g):
        return (g * 0.5 / y,)

    return _result(y, (a,), vjp, "sqrt")


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)

    def vjp(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.value.sum(), (a,), vjp, "sum")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    y = a.value.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _result(y, (a,), vjp, "reshape")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    y = np.transpose(a.value, axes)
    inverse = None if axes is None else np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _result(y, (a,), vjp, "transpose")


def take(a, index) -> Tensor:
    """Basic indexing along the leading axis (int or slice)."""
    a = as_tensor(a)
    if not isinstance(index, (int, np.integer, slice)):
        raise TypeError("take supports an int or a slice on the first axis")
    y = a.value[index]

    def vjp(g):
        ga = np.zeros_like(a.value)
        ga[index] = g
        return (ga,)

    return _result(y, (a,), vjp, "take")


def stack(items: Sequence[Tensor]) -> Tensor:
    items = tuple(as_tensor(t) for t in items)
    if not items:
        raise ValueError("stack of nothing")
    shape = items[0].shape
    if any(t.shape != shape for t in items):
        raise ValueError("stack: all items must share a shape")
    y = np.stack([t.value for t in items])

    def vjp(g):
        return tuple(g[n] for n in range(len(items)))

    return _result(y, items, vjp, "stack")


# ----------------------------------------------------------------------
# differentiation
# ----------------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(value) into every reachable Parameter's grad."""
    if output.value.shape != ():
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    _check_finite(output.value, "backward")
    if not output.requires_grad:
        return
    grads = {id(output): np.ones(())}
    for node in reversed(_topological(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            _check_finite(g, f"gradient of {node.name!r}")
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def finite_diff_grad(
    f: Callable[[], float], params: Iterable[Parameter], eps: float = 1e-6
) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``f`` with respect to each parameter.

    ``f`` takes no arguments and reads the parameters' current values.
    Unreliable at kinks, where the symmetric difference averages the two sides.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = {}
    for p in params:
        grad = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = grad.reshape(-1)
        for n in range(flat.size):
            saved = flat[n]
            flat[n] = saved + eps
            up = float(f())
            flat[n] = saved - eps
            down = float(f())
            flat[n] = saved
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"f returned a non-finite value while probing {p.name!r}")
            gflat[n] = (up - down) / (2.0 * eps)
        out[p.name] = grad
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all coordinates."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))


# ----------------------------------------------------------------------
# optimisation
# ----------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t,
            "m": {k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in self.m.items()},
            "v": {k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in self.v.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        def arrays(blob):
            return {k: np.asarray(x["data"], dtype=np.float64).reshape(x["shape"]) for k, x in blob.items()}

        return cls(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"], t=int(d["t"]),
                   m=arrays(d["m"]), v=arrays(d["v"]))


def adam_step(params: Sequence[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update in place; gradients are zeroed afterwards."""
    for p in params:
        _check_finite(p.grad, f"gradient of {p.name!r}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad * p.grad
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


def parameter_to_dict(p: Parameter) -> dict:
    return {"name": p.name, "shape": list(p.shape), "data": p.value.ravel().tolist()}


def parameter_from_dict(d: dict) -> Parameter:
    return Parameter(np.asarray(d["data"], dtype=np.float64).reshape(d["shape"]), d["name"])
