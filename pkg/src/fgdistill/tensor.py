"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

A Tensor wraps one ndarray plus an optional backward closure; graphs are
rebuilt on every forward pass and freed after backward().  Only the
operations the distillation loss stack needs are provided: elementwise
arithmetic, axis reductions, temperature softmax, 1x1 convolution,
layer norm and relu.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, GraphError, ParameterError


def _as_array(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


class Tensor:
    """Dense rank-N float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        """Populate .grad of every reachable requires_grad tensor.

        The loss must be scalar (size 1); gradients accumulate, so call
        zero_grad() on parameters between optimization steps.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; scalars and ndarrays are wrapped as constants.
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

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named trainable tensor; always tracks gradients."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{op}: shapes {a.shape} and {b.shape} are not compatible"
        ) from None


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def square(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        _accumulate(a, g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), backward)


def absolute(a) -> Tensor:
    # Subgradient 0 at exactly 0, matching relu's convention.
    a = _wrap(a)

    def backward(g):
        _accumulate(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward)


def _normalize_axes(axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(ax) for ax in axes)
    norm = tuple(ax + ndim if ax < 0 else ax for ax in axes)
    for ax in norm:
        if not 0 <= ax < ndim:
            raise DimensionError(f"axis {ax} invalid for ndim {ndim}")
    if len(set(norm)) != len(norm):
        raise DimensionError(f"duplicate axes in {axes}")
    return tuple(sorted(norm))


def _expand_reduced(g: np.ndarray, shape: tuple, axes: tuple) -> np.ndarray:
    g = np.expand_dims(g, axes) if axes else g
    return np.broadcast_to(g, shape)


def tensor_sum(a, axes=None) -> Tensor:
    a = _wrap(a)
    axes = _normalize_axes(axes, a.ndim)

    def backward(g):
        _accumulate(a, _expand_reduced(g, a.shape, axes).copy())

    return _make(a.data.sum(axis=axes), (a,), backward)


def tensor_mean(a, axes=None) -> Tensor:
    a = _wrap(a)
    axes = _normalize_axes(axes, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1

    def backward(g):
        _accumulate(a, _expand_reduced(g, a.shape, axes) / count)

    return _make(a.data.mean(axis=axes), (a,), backward)


def reduce(kind: str, a, axes=None) -> Tensor:
    if kind == "sum":
        return tensor_sum(a, axes)
    if kind == "mean":
        return tensor_mean(a, axes)
    raise ParameterError(f"unknown reduction kind {kind!r}")


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch table form of the binary/unary elementwise ops."""
    if op_kind == "add":
        return add(a, b)
    if op_kind == "sub":
        return sub(a, b)
    if op_kind == "mul":
        return mul(a, b)
    if op_kind == "square":
        return square(a)
    if op_kind == "abs":
        return absolute(a)
    raise ParameterError(f"unknown elementwise op {op_kind!r}")


def softmax_t(a, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """softmax(a / temperature) along `axis`, max-subtracted for overflow safety."""
    if temperature <= 0.0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    a = _wrap(a)
    (axis,) = _normalize_axes(axis, a.ndim)
    shifted = (a.data - a.data.max(axis=axis, keepdims=True)) / temperature
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - inner) / temperature)

    return _make(y, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(
            f"cannot reshape {a.shape} (size {a.size}) to {shape}"
        ) from None
    old_shape = a.shape

    def backward(g):
        _accumulate(a, g.reshape(old_shape))

    return _make(data, (a,), backward)


def _channel_spec(x: Tensor):
    if x.ndim == 3:
        return "chw", x.shape[0]
    if x.ndim == 4:
        return "bchw", x.shape[1]
    raise DimensionError(f"conv1x1 expects rank 3 or 4 input, got {x.shape}")


def conv1x1(x, w, bias=None) -> Tensor:
    """Per-pixel linear map across channels; spatial dims unchanged.

    x is (C,H,W) or (B,C,H,W); w is (out_channels, in_channels); bias, when
    given, has shape (out_channels,).
    """
    x, w = _wrap(x), _wrap(w)
    spec, channels = _channel_spec(x)
    if w.ndim != 2:
        raise DimensionError(f"conv1x1 weight must be rank 2, got {w.shape}")
    if w.shape[1] != channels:
        raise DimensionError(
            f"conv1x1: input has {channels} channels, weight expects {w.shape[1]}"
        )
    out_spec = spec.replace("c", "o")
    data = np.einsum(f"oc,{spec}->{out_spec}", w.data, x.data)
    parents = [x, w]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (w.shape[0],):
            raise DimensionError(
                f"conv1x1 bias shape {bias.shape} != ({w.shape[0]},)"
            )
        bshape = (-1, 1, 1) if x.ndim == 3 else (1, -1, 1, 1)
        data = data + bias.data.reshape(bshape)
        parents.append(bias)

    def backward(g):
        _accumulate(x, np.einsum(f"oc,{out_spec}->{spec}", w.data, g))
        _accumulate(w, np.einsum(f"{out_spec},{spec}->oc", g, x.data))
        if bias is not None:
            spatial = tuple(i for i, ch in enumerate(out_spec) if ch != "o")
            _accumulate(bias, g.sum(axis=spatial))

    return _make(data, tuple(parents), backward)


LAYER_NORM_EPS = 1e-5


def layer_norm(x, gamma, beta, axes) -> Tensor:
    """(x - mean) / sqrt(var + eps) * gamma + beta over `axes`.

    gamma and beta carry the shape of the normalized slice (the extents of
    x at `axes`, in order).
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    axes = _normalize_axes(axes, x.ndim)
    slice_shape = tuple(x.shape[ax] for ax in axes)
    if gamma.shape != slice_shape or beta.shape != slice_shape:
        raise DimensionError(
            f"layer_norm gamma/beta must have shape {slice_shape}, "
            f"got {gamma.shape} and {beta.shape}"
        )
    # gamma/beta expanded so they broadcast against x at the right axes
    full = [1] * x.ndim
    for ax in axes:
        full[ax] = x.shape[ax]
    gamma_b = gamma.data.reshape(full)
    beta_b = beta.data.reshape(full)

    mean = x.data.mean(axis=axes, keepdims=True)
    var = ((x.data - mean) ** 2).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.data - mean) * inv_std
    other_axes = tuple(ax for ax in range(x.ndim) if ax not in axes)

    def backward(g):
        g_xhat = g * gamma_b
        m1 = g_xhat.mean(axis=axes, keepdims=True)
        m2 = (g_xhat * xhat).mean(axis=axes, keepdims=True)
        _accumulate(x, inv_std * (g_xhat - m1 - xhat * m2))
        _accumulate(gamma, (g * xhat).sum(axis=other_axes).reshape(gamma.shape))
        _accumulate(beta, g.sum(axis=other_axes).reshape(beta.shape))

    return _make(xhat * gamma_b + beta_b, (x, gamma, beta), backward)


def avg_pool2(x) -> Tensor:
    """Stride-2 spatial mean pooling of (C,H,W) or (B,C,H,W); H, W must be even."""
    x = _wrap(x)
    if x.ndim not in (3, 4):
        raise DimensionError(f"avg_pool2 expects rank 3 or 4, got {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    lead = x.shape[:-2]
    blocked = reshape(x, lead + (h // 2, 2, w // 2, 2))
    nd = len(lead)
    return tensor_mean(blocked, axes=(nd + 1, nd + 3))
