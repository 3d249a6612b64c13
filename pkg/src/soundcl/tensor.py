"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is numpy-backed. Ops record a vector-Jacobian product on the
output node; ``backward()`` on a scalar walks the graph in reverse
topological order and accumulates gradients into every tensor that has
``requires_grad`` set. Repeated backward calls without ``zero_grad``
accumulate.

Conventions:
  - convolution is cross-correlation (no kernel flip)
  - same-padding splits zeros symmetrically, extra zero on the right
  - all data is float64
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_prev", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._prev: tuple[Tensor, ...] = ()
        self._vjp = None

    # ---- basics -----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _make(data, prev, vjp) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad or p._vjp is not None for p in prev):
            out.requires_grad = True
            out._prev = tuple(prev)
            out._vjp = vjp
        return out

    # ---- autodiff ---------------------------------------------------------

    def backward(self):
        """Populate ``grad`` for every participating requires_grad tensor."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
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
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))

        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._vjp is None:
                continue
            for child, child_grad in zip(node._prev, node._vjp(g)):
                if child_grad is None:
                    continue
                acc = flowing.get(id(child))
                if acc is None:
                    flowing[id(child)] = child_grad.copy()
                else:
                    acc += child_grad

    # ---- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        def vjp(g):
            return (_unbroadcast(g, self.data.shape),
                    _unbroadcast(g, other.data.shape))
        return Tensor._make(self.data + other.data, (self, other), vjp)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        def vjp(g):
            return (_unbroadcast(g * other.data, self.data.shape),
                    _unbroadcast(g * self.data, other.data.shape))
        return Tensor._make(self.data * other.data, (self, other), vjp)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("division only supported by python scalars")
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        other = Tensor._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-D operands, got {self.data.shape} @ {other.data.shape}"
            )
        if self.data.shape[1] != other.data.shape[0]:
            raise ValueError(
                f"matmul inner dims disagree: {self.data.shape} @ {other.data.shape}"
            )
        def vjp(g):
            return (g @ other.data.T, self.data.T @ g)
        return Tensor._make(self.data @ other.data, (self, other), vjp)

    # ---- elementwise ------------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        return Tensor._make(out_data, (self,), lambda g: (g * out_data,))

    def log(self):
        return Tensor._make(np.log(self.data), (self,), lambda g: (g / self.data,))

    def relu(self):
        mask = self.data > 0.0
        return Tensor._make(np.where(mask, self.data, 0.0), (self,),
                            lambda g: (g * mask,))

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))
        return Tensor._make(out_data, (self,),
                            lambda g: (g * out_data * (1.0 - out_data),))

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient is passed through on the interior only."""
        mask = (self.data > lo) & (self.data < hi)
        return Tensor._make(np.clip(self.data, lo, hi), (self,),
                            lambda g: (g * mask,))

    # ---- reductions / shape ----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape
        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            g_exp = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g_exp, shape).copy(),)
        return Tensor._make(out_data, (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        elif isinstance(axis, tuple):
            count = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / count

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return Tensor._make(self.data.reshape(shape), (self,),
                            lambda g: (g.reshape(old),))

    # ---- softmax family ---------------------------------------------------

    def log_softmax(self):
        """Log-softmax along the last axis, numerically stabilized."""
        shifted = self.data - self.data.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        out_data = shifted - lse
        soft = np.exp(out_data)
        def vjp(g):
            return (g - soft * g.sum(axis=-1, keepdims=True),)
        return Tensor._make(out_data, (self,), vjp)

    def softmax(self):
        """Softmax along the last axis; rows are distributions."""
        shifted = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=-1, keepdims=True)
        def vjp(g):
            inner = (g * out_data).sum(axis=-1, keepdims=True)
            return (out_data * (g - inner),)
        return Tensor._make(out_data, (self,), vjp)


# ---- convolution ----------------------------------------------------------

def _same_padding(kernel_len: int) -> tuple[int, int]:
    total = kernel_len - 1
    left = total // 2
    return left, total - left


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1,
           padding: str = "valid") -> Tensor:
    """1-D cross-correlation.

    ``x`` is ``C_in x L`` or ``B x C_in x L``; ``kernels`` is
    ``C_out x C_in x K``. Valid padding gives ``floor((L-K)/stride)+1``
    output frames; same-padding (stride 1 only) preserves ``L``.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding not in ("same", "valid"):
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or kernels.data.ndim != 3:
        raise ValueError(
            f"conv1d expects CxL or BxCxL input and OxCxK kernels, got "
            f"input {x.data.shape}, kernels {kernels.data.shape}"
        )
    batch, c_in, length = xd.shape
    c_out, kc_in, klen = kernels.data.shape
    if kc_in != c_in:
        raise ValueError(
            f"input has {c_in} channels but kernels expect {kc_in} "
            f"(input {x.data.shape}, kernels {kernels.data.shape})"
        )
    if bias.data.shape != (c_out,):
        raise ValueError(f"bias shape {bias.data.shape} != ({c_out},)")

    if padding == "same":
        if stride != 1:
            raise ValueError("same-padding is only defined for stride 1")
        left, right = _same_padding(klen)
        xd = np.pad(xd, ((0, 0), (0, 0), (left, right)))
    else:
        left = right = 0
    padded_len = xd.shape[2]
    if klen > padded_len:
        raise ValueError(
            f"kernel length {klen} exceeds padded input length {padded_len}"
        )
    l_out = (padded_len - klen) // stride + 1

    windows = sliding_window_view(xd, klen, axis=2)[:, :, ::stride]  # B,C,Lo,K
    cols = windows.transpose(0, 2, 1, 3).reshape(batch * l_out, c_in * klen)
    wmat = kernels.data.reshape(c_out, c_in * klen).T
    out_data = (cols @ wmat).reshape(batch, l_out, c_out).transpose(0, 2, 1)
    out_data = out_data + bias.data[None, :, None]

    def vjp(g):
        if squeeze:
            g = g[None]
        g2 = g.transpose(0, 2, 1).reshape(batch * l_out, c_out)
        grad_w = grad_b = grad_x = None
        if kernels.requires_grad or kernels._vjp is not None:
            grad_w = (g2.T @ cols).reshape(c_out, c_in, klen)
        if bias.requires_grad or bias._vjp is not None:
            grad_b = g.sum(axis=(0, 2))
        if x.requires_grad or x._vjp is not None:
            gcols = g2 @ wmat.T
            gwin = gcols.reshape(batch, l_out, c_in, klen).transpose(0, 2, 1, 3)
            gx_pad = np.zeros((batch, c_in, padded_len))
            for pos in range(l_out):
                start = pos * stride
                gx_pad[:, :, start:start + klen] += gwin[:, :, pos]
            grad_x = gx_pad[:, :, left:padded_len - right] if (left or right) else gx_pad
            if squeeze:
                grad_x = grad_x[0]
        return (grad_x, grad_w, grad_b)

    if squeeze:
        out_data = out_data[0]
    return Tensor._make(out_data, (x, kernels, bias), vjp)


def conv1d_transpose(x: Tensor, kernels: Tensor, bias: Tensor,
                     stride: int = 1) -> Tensor:
    """1-D transposed convolution, no zero-padding.

    ``x`` is ``C_in x L`` or ``B x C_in x L``; ``kernels`` is
    ``C_in x C_out x K``. Output length is ``(L-1)*stride + K``. For fixed
    kernels this is the linear adjoint of valid ``conv1d`` at the same
    stride.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or kernels.data.ndim != 3:
        raise ValueError(
            f"conv1d_transpose expects CxL or BxCxL input and CxOxK kernels, "
            f"got input {x.data.shape}, kernels {kernels.data.shape}"
        )
    batch, c_in, length = xd.shape
    kc_in, c_out, klen = kernels.data.shape
    if kc_in != c_in:
        raise ValueError(
            f"input has {c_in} channels but kernels expect {kc_in} "
            f"(input {x.data.shape}, kernels {kernels.data.shape})"
        )
    if bias.data.shape != (c_out,):
        raise ValueError(f"bias shape {bias.data.shape} != ({c_out},)")
    l_out = (length - 1) * stride + klen

    x2 = xd.transpose(0, 2, 1).reshape(batch * length, c_in)
    wmat = kernels.data.reshape(c_in, c_out * klen)
    prod = (x2 @ wmat).reshape(batch, length, c_out, klen).transpose(0, 2, 1, 3)
    out_data = np.zeros((batch, c_out, l_out))
    for pos in range(length):
        start = pos * stride
        out_data[:, :, start:start + klen] += prod[:, :, pos]
    out_data += bias.data[None, :, None]

    def vjp(g):
        if squeeze:
            g = g[None]
        # windows of the output gradient line up 1:1 with input positions
        gwin = sliding_window_view(g, klen, axis=2)[:, :, ::stride]  # B,O,L,K
        gflat = gwin.transpose(0, 2, 1, 3).reshape(batch * length, c_out * klen)
        grad_x = grad_w = grad_b = None
        if x.requires_grad or x._vjp is not None:
            grad_x = (gflat @ wmat.T).reshape(batch, length, c_in).transpose(0, 2, 1)
            if squeeze:
                grad_x = grad_x[0]
        if kernels.requires_grad or kernels._vjp is not None:
            grad_w = (x2.T @ gflat).reshape(c_in, c_out, klen)
        if bias.requires_grad or bias._vjp is not None:
            grad_b = g.sum(axis=(0, 2))
        return (grad_x, grad_w, grad_b)

    if squeeze:
        out_data = out_data[0]
    return Tensor._make(out_data, (x, kernels, bias), vjp)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine layer: ``x @ weight + bias`` with ``x`` of shape ``B x F``."""
    return x @ weight + bias


def conv_output_length(length: int, kernel_len: int, stride: int,
                       padding: str = "valid") -> int:
    if padding == "same":
        return length
    return (length - kernel_len) // stride + 1


def conv_transpose_output_length(length: int, kernel_len: int, stride: int) -> int:
    return (length - 1) * stride + kernel_len
