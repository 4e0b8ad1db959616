"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float32 or float64 ndarray.  Operations record closures
on a tape while gradient recording is enabled and at least one operand
requires gradients; ``backward()`` replays the tape in reverse topological
order.  Graphs are single-use: build, backward once, then rebuild.

Broadcasting rule: when operand ranks differ, the lower-rank operand is
aligned to the LEADING axes by appending trailing singleton axes (the
opposite of numpy).  A per-channel vector [C] therefore scales a [C, H, W]
feature map channel-wise without reshaping.  After rank alignment the usual
extent rules apply (equal or 1).

Reductions (``sum``/``mean``) accumulate in 64-bit regardless of storage
dtype.  Matmul uses BLAS and accumulates in the storage dtype.
"""

import contextlib

import numpy as np

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (used for inference/eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _align_shapes(sa: tuple, sb: tuple):
    """Pad the lower-rank shape with trailing singletons (leading alignment)."""
    if len(sa) < len(sb):
        sa = sa + (1,) * (len(sb) - len(sa))
    elif len(sb) < len(sa):
        sb = sb + (1,) * (len(sa) - len(sb))
    for x, y in zip(sa, sb):
        if x != y and x != 1 and y != 1:
            raise ValueError(f"shapes {sa} and {sb} do not broadcast")
    return sa, sb


def _unbroadcast(g: np.ndarray, padded: tuple, orig: tuple) -> np.ndarray:
    """Sum ``g`` over axes the operand was broadcast along, back to ``orig``."""
    axes = tuple(i for i, p in enumerate(padded) if p == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(orig)


# Derivative rules for the activations, kept as module-level functions so a
# test can swap one out and confirm the gradient checker catches it.


def _d_relu(x):
    return (x > 0).astype(x.dtype)


def _d_tanh(y):
    return 1.0 - y * y


def _d_sigmoid(y):
    return y * (1.0 - y)


def _d_softplus(x):
    return _sigmoid_np(x)


def _sigmoid_np(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        # storage is float32; a float64 ndarray passed explicitly is kept so
        # finite-difference checks can run the whole graph in 64-bit
        if dtype is None and not (isinstance(data, np.ndarray) and data.dtype == np.float64):
            dtype = np.float32
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self.op})"

    def zero_grad(self):
        self.grad = None

    # -- tape plumbing -------------------------------------------------

    @staticmethod
    def _from_op(data, parents, backward, op):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse sweep from a scalar.  Leaf grads must be zeroed between calls."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor outside any recorded graph")
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, emit = stack.pop()
            if emit:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        for node in topo:
            if not node._parents and node.grad is not None:
                raise RuntimeError(
                    "backward() would accumulate into stale gradients; "
                    "zero leaf grads before running a second backward"
                )

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
                # interior results are never reused: free grad and tape edges
                node.grad = None
                node._backward = None
                node._parents = ()

    # -- elementwise binary ops ----------------------------------------

    def _binary_views(self, other):
        o = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.data.dtype))
        sa, sb = _align_shapes(self.data.shape, o.data.shape)
        return o, self.data.reshape(sa), o.data.reshape(sb), sa, sb

    def __add__(self, other):
        o, av, bv, sa, sb = self._binary_views(other)
        out = Tensor._from_op(av + bv, (self, o), None, "add")
        if out.requires_grad:
            def _bwd():
                g = out.grad
                if self.requires_grad:
                    self._accum(_unbroadcast(g, sa, self.data.shape))
                if o.requires_grad:
                    o._accum(_unbroadcast(g, sb, o.data.shape))
            out._backward = _bwd
        return out

    def __sub__(self, other):
        o, av, bv, sa, sb = self._binary_views(other)
        out = Tensor._from_op(av - bv, (self, o), None, "sub")
        if out.requires_grad:
            def _bwd():
                g = out.grad
                if self.requires_grad:
                    self._accum(_unbroadcast(g, sa, self.data.shape))
                if o.requires_grad:
                    o._accum(_unbroadcast(-g, sb, o.data.shape))
            out._backward = _bwd
        return out

    def __mul__(self, other):
        o, av, bv, sa, sb = self._binary_views(other)
        out = Tensor._from_op(av * bv, (self, o), None, "mul")
        if out.requires_grad:
            def _bwd():
                g = out.grad
                if self.requires_grad:
                    self._accum(_unbroadcast(g * bv, sa, self.data.shape))
                if o.requires_grad:
                    o._accum(_unbroadcast(g * av, sb, o.data.shape))
            out._backward = _bwd
        return out

    def __truediv__(self, other):
        o, av, bv, sa, sb = self._binary_views(other)
        out = Tensor._from_op(av / bv, (self, o), None, "div")
        if out.requires_grad:
            def _bwd():
                g = out.grad
                if self.requires_grad:
                    self._accum(_unbroadcast(g / bv, sa, self.data.shape))
                if o.requires_grad:
                    o._accum(_unbroadcast(-g * av / (bv * bv), sb, o.data.shape))
            out._backward = _bwd
        return out

    def __radd__(self, other):
        return self.__add__(other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __rsub__(self, other):
        return Tensor(np.asarray(other, dtype=self.data.dtype)).__sub__(self)

    def __rtruediv__(self, other):
        return Tensor(np.asarray(other, dtype=self.data.dtype)).__truediv__(self)

    def __neg__(self):
        out = Tensor._from_op(-self.data, (self,), None, "neg")
        if out.requires_grad:
            def _bwd():
                self._accum(-out.grad)
            out._backward = _bwd
        return out

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            return self._pow_tensor(exponent)
        p = float(exponent)
        if p != int(p) and (self.data < 0).any():
            raise ValueError("fractional power of a negative base")
        out = Tensor._from_op(self.data**p, (self,), None, "pow")
        if out.requires_grad:
            def _bwd():
                self._accum(out.grad * p * self.data ** (p - 1.0))
            out._backward = _bwd
        return out

    def _pow_tensor(self, exponent: "Tensor"):
        if (self.data <= 0).any():
            raise ValueError("tensor-valued power requires a strictly positive base")
        e = exponent
        sa, sb = _align_shapes(self.data.shape, e.data.shape)
        av = self.data.reshape(sa)
        bv = e.data.reshape(sb)
        y = av**bv
        out = Tensor._from_op(y, (self, e), None, "pow")
        if out.requires_grad:
            def _bwd():
                g = out.grad
                if self.requires_grad:
                    self._accum(_unbroadcast(g * bv * av ** (bv - 1.0), sa, self.data.shape))
                if e.requires_grad:
                    e._accum(_unbroadcast(g * y * np.log(av), sb, e.data.shape))
            out._backward = _bwd
        return out

    # -- elementwise unary ops -----------------------------------------

    def exp(self):
        y = np.exp(self.data)
        out = Tensor._from_op(y, (self,), None, "exp")
        if out.requires_grad:
            def _bwd():
                self._accum(out.grad * y)
            out._backward = _bwd
        return out

    def abs(self):
        out = Tensor._from_op(np.abs(self.data), (self,), None, "abs")
        if out.requires_grad:
            # subgradient 0 at exactly 0
            def _bwd():
                self._accum(out.grad * np.sign(self.data))
            out._backward = _bwd
        return out

    def __abs__(self):
        return self.abs()

    def relu(self):
        out = Tensor._from_op(np.maximum(self.data, 0), (self,), None, "relu")
        if out.requires_grad:
            def _bwd():
                self._accum(out.grad * _d_relu(self.data))
            out._backward = _bwd
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor._from_op(y, (self,), None, "tanh")
        if out.requires_grad:
            def _bwd():
                self._accum(out.grad * _d_tanh(y))
            out._backward = _bwd
        return out

    def sigmoid(self):
        y = _sigmoid_np(self.data)
        out = Tensor._from_op(y, (self,), None, "sigmoid")
        if out.requires_grad:
            def _bwd():
                self._accum(out.grad * _d_sigmoid(y))
            out._backward = _bwd
        return out

    def softplus(self):
        x = self.data
        y = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
        out = Tensor._from_op(y, (self,), None, "softplus")
        if out.requires_grad:
            def _bwd():
                self._accum(out.grad * _d_softplus(x))
            out._backward = _bwd
        return out

    def sqrt(self):
        return self.__pow__(0.5)

    # -- matmul ----------------------------------------------------------

    def __matmul__(self, other):
        return self.matmul(other)

    def matmul(self, other: "Tensor"):
        """Matrix product.  2D x 2D, ND x 2D (shared right matrix), or ND x ND
        with identical leading dims; leading dims never broadcast."""
        o = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, o.data
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must have rank >= 2")
        if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise ValueError(f"matmul leading dims differ: {a.shape} vs {b.shape}")
        if b.ndim > 2 and a.ndim == 2:
            raise ValueError("matmul with batched right operand needs a batched left operand")
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
        out = Tensor._from_op(np.matmul(a, b), (self, o), None, "matmul")
        if out.requires_grad:
            def _bwd():
                g = out.grad
                if self.requires_grad:
                    self._accum(np.matmul(g, b.swapaxes(-1, -2)))
                if o.requires_grad:
                    if b.ndim == 2 and a.ndim > 2:
                        k, n = a.shape[-1], g.shape[-1]
                        o._accum(np.matmul(a.reshape(-1, k).T, g.reshape(-1, n)))
                    else:
                        o._accum(np.matmul(a.swapaxes(-1, -2), g))
            out._backward = _bwd
        return out

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        dt = self.data.dtype
        y = np.sum(self.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(dt)
        out = Tensor._from_op(y, (self,), None, "sum")
        if out.requires_grad:
            shape = self.data.shape

            def _bwd():
                g = out.grad
                if axis is not None and not keepdims:
                    axes = (axis,) if isinstance(axis, int) else tuple(axis)
                    axes = tuple(a % len(shape) for a in axes)
                    g = np.expand_dims(g, axes)
                self._accum(np.broadcast_to(g, shape))
            out._backward = _bwd
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, shape):
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        orig = self.data.shape
        out = Tensor._from_op(self.data.reshape(shape), (self,), None, "reshape")
        if out.requires_grad:
            def _bwd():
                self._accum(out.grad.reshape(orig))
            out._backward = _bwd
        return out

    def transpose(self, axes):
        axes = tuple(axes)
        out = Tensor._from_op(self.data.transpose(axes), (self,), None, "transpose")
        if out.requires_grad:
            inv = tuple(np.argsort(axes))

            def _bwd():
                self._accum(out.grad.transpose(inv))
            out._backward = _bwd
        return out

    @property
    def T(self):
        if self.data.ndim != 2:
            raise ValueError(".T is defined for rank-2 tensors only")
        return self.transpose((1, 0))

    def expand(self, shape):
        """Broadcast singleton axes up to ``shape`` (rank must already match)."""
        shape = tuple(shape)
        orig = self.data.shape
        if len(shape) != len(orig):
            raise ValueError(f"expand cannot change rank: {orig} -> {shape}")
        for s, t in zip(orig, shape):
            if s != t and s != 1:
                raise ValueError(f"expand only grows singleton axes: {orig} -> {shape}")
        out = Tensor._from_op(np.broadcast_to(self.data, shape), (self,), None, "expand")
        if out.requires_grad:
            axes = tuple(i for i, (s, t) in enumerate(zip(orig, shape)) if s == 1 and t != 1)

            def _bwd():
                g = out.grad
                if axes:
                    g = g.sum(axis=axes, keepdims=True)
                self._accum(g)
            out._backward = _bwd
        return out

    def narrow(self, axis: int, start: int, length: int):
        """Contiguous slice [start, start+length) along one axis."""
        axis = axis % self.data.ndim
        if start < 0 or start + length > self.data.shape[axis]:
            raise ValueError("narrow out of range")
        idx = tuple(
            slice(start, start + length) if i == axis else slice(None)
            for i in range(self.data.ndim)
        )
        out = Tensor._from_op(self.data[idx], (self,), None, "narrow")
        if out.requires_grad:
            def _bwd():
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                self.grad[idx] += out.grad
            out._backward = _bwd
        return out


def concat(tensors, axis: int = 0):
    ts = list(tensors)
    axis = axis % ts[0].data.ndim
    out = Tensor._from_op(
        np.concatenate([t.data for t in ts], axis=axis), tuple(ts), None, "concat"
    )
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in ts]

        def _bwd():
            offset = 0
            for t, s in zip(ts, sizes):
                if t.requires_grad:
                    idx = tuple(
                        slice(offset, offset + s) if i == axis else slice(None)
                        for i in range(out.data.ndim)
                    )
                    t._accum(out.grad[idx])
                offset += s
        out._backward = _bwd
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-stabilized softmax along ``axis``; rows sum to 1."""
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._from_op(y, (x,), None, "softmax")
    if out.requires_grad:
        def _bwd():
            g = out.grad
            x._accum(y * (g - np.sum(g * y, axis=axis, keepdims=True)))
        out._backward = _bwd
    return out
