"""Reverse-mode automatic differentiation over numpy arrays.

A small tape-based engine: `Tensor` wraps an ndarray, each op records its
parents and a vector-Jacobian closure, and `backward()` walks the graph in
reverse topological order. The op set is exactly what a pre-norm transformer
plus the loss heads need: broadcasting arithmetic, matmul, reductions, shape
ops, softmax, layer norm, GELU and inverted dropout. Gradients for frozen
tensors (requires_grad=False) are never materialized, which is how the
encoder keeps its trunk fixed.

`grad_check` compares analytic gradients against central finite differences
and is used throughout the test suite; run it on float64 copies of the
parameters (step 1e-4) for meaningful tolerances.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data, parents: Sequence["Tensor"], vjp) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x))

    # -- basic properties ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        other = Tensor._coerce(other)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._from_op(a.data + b.data, (a, b), vjp)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def vjp(g):
            return (-g,)

        return Tensor._from_op(-a.data, (a,), vjp)

    def __sub__(self, other):
        other = Tensor._coerce(other)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._from_op(a.data - b.data, (a, b), vjp)

    def __rsub__(self, other):
        return Tensor._coerce(other) - self

    def __mul__(self, other):
        other = Tensor._coerce(other)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._from_op(a.data * b.data, (a, b), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._coerce(other)
        a, b = self, other

        def vjp(g):
            ga = _unbroadcast(g / b.data, a.shape)
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            return ga, gb

        return Tensor._from_op(a.data / b.data, (a, b), vjp)

    def __pow__(self, exponent: float):
        a = self
        e = float(exponent)

        def vjp(g):
            return (g * e * a.data ** (e - 1.0),)

        return Tensor._from_op(a.data**e, (a,), vjp)

    def __matmul__(self, other):
        other = Tensor._coerce(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul requires ndim >= 2 operands")

        def vjp(g):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            return ga, gb

        return Tensor._from_op(a.data @ b.data, (a, b), vjp)

    # -- reductions / shape ops -------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        n = a.data.size if axis is None else np.prod(
            [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
        )
        inv = 1.0 / float(n)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g * inv, a.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg * inv, a.shape).copy(),)

        return Tensor._from_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), vjp)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        orig = a.shape

        def vjp(g):
            return (g.reshape(orig),)

        return Tensor._from_op(a.data.reshape(shape), (a,), vjp)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = tuple(np.argsort(axes))

        def vjp(g):
            return (g.transpose(inv),)

        return Tensor._from_op(a.data.transpose(axes), (a,), vjp)

    def expand(self, shape):
        a = self

        def vjp(g):
            return (_unbroadcast(g, a.shape),)

        return Tensor._from_op(np.broadcast_to(a.data, shape), (a,), vjp)

    def __getitem__(self, key):
        a = self

        def vjp(g):
            full = np.zeros(a.shape, dtype=g.dtype)
            full[key] = g
            return (full,)

        return Tensor._from_op(a.data[key], (a,), vjp)

    # -- elementwise nonlinearities ----------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def vjp(g):
            return (g * out_data,)

        return Tensor._from_op(out_data, (a,), vjp)

    def log(self):
        a = self

        def vjp(g):
            return (g / a.data,)

        return Tensor._from_op(np.log(a.data), (a,), vjp)

    def sqrt(self):
        return self**0.5

    def clamp_min(self, floor: float):
        """max(x, floor); gradient is zero at and below the floor."""
        a = self
        mask = a.data > floor

        def vjp(g):
            return (g * mask,)

        return Tensor._from_op(np.maximum(a.data, floor), (a,), vjp)

    # -- backward pass -------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


# -- composite / stateful ops ---------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [Tensor._coerce(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = Tensor._coerce(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return Tensor._from_op(s, (x,), vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, 0.5*x*(1+erf(x/sqrt(2)))."""
    x = Tensor._coerce(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return Tensor._from_op(x.data * cdf, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance; eps inside the root."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gamma + beta


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Draws the mask eagerly from `rng`; callers gate this on train mode and on
    p > 0 so that eval paths consume no randomness.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    x = Tensor._coerce(x)
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype)
    scale = 1.0 / (1.0 - p)

    def vjp(g):
        return (g * keep * scale,)

    return Tensor._from_op(x.data * keep * scale, (x,), vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ weight (+ bias); weight stored (in_features, out_features)."""
    y = x @ weight
    return y if bias is None else y + bias


# -- parameters and optimization ----------------------------------------------------------


def parameter(data, name: str) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def zero_grads(params: Iterable[Tensor]) -> None:
    for t in params:
        t.grad = None


class Adam:
    """Adam with classic additive L2 weight decay (torch.optim.Adam semantics)."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        zero_grads(self.params.values())

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# -- gradient checking ------------------------------------------------------------------


def numeric_grads(
    build_loss: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-4,
) -> dict[str, np.ndarray]:
    """Central finite differences of the scalar loss w.r.t. every entry of
    every tensor in `params`. `build_loss` must be deterministic."""
    grads: dict[str, np.ndarray] = {}
    for key, p in params.items():
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(build_loss(params).data)
            flat[i] = orig - step
            lo = float(build_loss(params).data)
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * step)
        grads[key] = g.reshape(p.data.shape)
    return grads


def analytic_grads(
    build_loss: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
) -> dict[str, np.ndarray]:
    zero_grads(params.values())
    loss = build_loss(params)
    loss.backward()
    return {
        k: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }


def grad_check(
    build_loss: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-4,
) -> float:
    """Max over parameter entries of |analytic - numeric| / max(|numeric|, 1e-8)."""
    ana = analytic_grads(build_loss, params)
    num = numeric_grads(build_loss, params, step=step)
    worst = 0.0
    for key in params:
        denom = np.maximum(np.abs(num[key]), 1e-8)
        rel = np.abs(ana[key] - num[key]) / denom
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst
