"""Reverse-mode automatic differentiation on dense float64 arrays.

Every operation records its inputs and a backward closure on the output
tensor.  Calling ``backward()`` on a scalar result walks the recorded graph
in reverse topological order and accumulates d(loss)/d(x) into ``x.grad``
for every tensor created with ``requires_grad=True``.
"""

import numpy as np


class Tensor:
    """A dense float64 array plus an optional gradient tape entry."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        topo = []
        seen = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        # release graph edges so the tape frees by refcount, not gc cycles
        for node in topo:
            node._parents = ()
            node._backward = None

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division only supported by scalars")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method forms of common ops -----------------------------------------

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents, backward_fn):
    """Build an op output linked to its tracked parents.

    ``backward_fn`` receives the output gradient and must call
    ``parent._accumulate`` itself (only for parents that require grad).
    """
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        # stored as-is and invoked with the output gradient; holding a
        # closure over `out` itself would make every node a gc cycle
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` to undo numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise and broadcasting primitives ----------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return make_op(data, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return make_op(data, (a, b), backward)


def neg(a):
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return make_op(-a.data, (a,), backward)


def texp(a):
    a = _wrap(a)
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return make_op(data, (a,), backward)


def tlog(a):
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return make_op(np.log(a.data), (a,), backward)


def relu(a):
    a = _wrap(a)
    mask = a.data > 0.0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return make_op(a.data * mask, (a,), backward)


def sigmoid(a):
    a = _wrap(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data))

    return make_op(data, (a,), backward)


def clip(a, lo, hi):
    """Clamp values; gradient passes only through the strict interior."""
    a = _wrap(a)
    data = np.clip(a.data, lo, hi)
    interior = (a.data > lo) & (a.data < hi)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * interior)

    return make_op(data, (a,), backward)


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return make_op(data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def global_avg_pool(a):
    """Spatial mean of an (H, W, C) feature map, returning (C,)."""
    a = _wrap(a)
    if a.data.ndim != 3:
        raise ValueError("global_avg_pool expects an (H, W, C) map")
    return tmean(a, axis=(0, 1))


# -- shape ops ----------------------------------------------------------------


def reshape(a, shape):
    a = _wrap(a)
    old = a.data.shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old))

    return make_op(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None):
    a = _wrap(a)
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return make_op(a.data.transpose(axes), (a,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return make_op(data, tensors, backward)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return make_op(data, (a, b), backward)


def conv2d(x, w, b=None, dilation=1):
    """Stride-1, zero-padded 2-D convolution preserving spatial size.

    x: (H, W, Cin), w: (kh, kw, Cin, Cout) with odd kh/kw, b: (Cout,).
    """
    x, w = _wrap(x), _wrap(w)
    if b is not None:
        b = _wrap(b)
    h, wd, cin = x.data.shape
    kh, kw, wcin, cout = w.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d requires odd kernel sizes")
    if wcin != cin:
        raise ValueError("channel mismatch between input and kernel")
    ph = (kh - 1) * dilation // 2
    pw = (kw - 1) * dilation // 2
    xp = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((h, wd, cout))
    for i in range(kh):
        for j in range(kw):
            patch = xp[i * dilation : i * dilation + h, j * dilation : j * dilation + wd]
            out += patch @ w.data[i, j]
    if b is not None:
        out += b.data

    def backward(g):
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 1)))
        if w.requires_grad:
            dw = np.zeros_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[i * dilation : i * dilation + h, j * dilation : j * dilation + wd]
                    dw[i, j] = np.tensordot(patch, g, axes=([0, 1], [0, 1]))
            w._accumulate(dw)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[i * dilation : i * dilation + h, j * dilation : j * dilation + wd] += (
                        g @ w.data[i, j].T
                    )
            x._accumulate(dxp[ph : ph + h, pw : pw + wd])

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


def neighbor_mean3d(x):
    """Mean over the 3x3x3 spatial neighborhood of an (X, Y, Z, C) grid.

    Zero padding outside the grid; the stencil is symmetric so the adjoint
    is the same averaging applied to the incoming gradient.
    """
    x = _wrap(x)
    if x.data.ndim != 4:
        raise ValueError("neighbor_mean3d expects an (X, Y, Z, C) grid")

    def stencil(arr):
        xp = np.pad(arr, ((1, 1), (1, 1), (1, 1), (0, 0)))
        out = np.zeros_like(arr)
        nx, ny, nz = arr.shape[:3]
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    out += xp[i : i + nx, j : j + ny, k : k + nz]
        return out / 27.0

    def backward(g):
        if x.requires_grad:
            x._accumulate(stencil(g))

    return make_op(stencil(x.data), (x,), backward)


# -- normalizations -----------------------------------------------------------


def softmax(a, axis=-1):
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            a._accumulate((g - inner) * data)

    return make_op(data, (a,), backward)


def l2_normalize(a, axis=-1):
    """Scale vectors along ``axis`` to unit norm; zero vectors stay zero."""
    a = _wrap(a)
    norm = np.sqrt((a.data ** 2).sum(axis=axis, keepdims=True))
    safe = np.where(norm > 0.0, norm, 1.0)
    data = a.data / safe

    def backward(g):
        if a.requires_grad:
            # (g - u (u.g)) / n, not g/n - a (a.g)/n^3: the cubed norm
            # underflows to zero for near-empty rows and turns the zero
            # gradient those rows carry into 0/0
            inner = (g * data).sum(axis=axis, keepdims=True)
            a._accumulate((g - data * inner) / safe)

    return make_op(data, (a,), backward)


def logsumexp(a, axis=-1):
    """Numerically stable log-sum-exp along ``axis`` (composite op)."""
    a = _wrap(a)
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    reduced = tlog(tsum(texp(a - shift), axis=axis))
    return add(reduced, Tensor(np.squeeze(shift.data, axis=axis)))


# -- indexed ops --------------------------------------------------------------


def gather_rows(x, indices, allow_negative=False):
    """Select rows of a 2-D tensor; with allow_negative, index -1 yields zeros."""
    x = _wrap(x)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise ValueError("indices must be one-dimensional")
    if allow_negative:
        valid = indices >= 0
        safe = np.where(valid, indices, 0)
        data = x.data[safe]
        data[~valid] = 0.0
    else:
        valid = np.ones(indices.shape, dtype=bool)
        data = x.data[indices]

    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, indices[valid], g[valid])
            x._accumulate(dx)

    return make_op(data, (x,), backward)


def segment_mean(x, segment_ids, num_segments):
    """Mean of rows grouped by segment id, in ascending row order.

    Rows with a negative id are ignored; empty segments give zero rows.
    """
    x = _wrap(x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != (x.data.shape[0],):
        raise ValueError("one segment id per row required")
    valid = seg >= 0
    counts = np.bincount(seg[valid], minlength=num_segments).astype(np.float64)
    sums = np.zeros((num_segments, x.data.shape[1]))
    np.add.at(sums, seg[valid], x.data[valid])
    denom = np.where(counts > 0.0, counts, 1.0)
    data = sums / denom[:, None]

    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            dx[valid] = g[seg[valid]] / denom[seg[valid], None]
            x._accumulate(dx)

    return make_op(data, (x,), backward)


# -- gradient verification ----------------------------------------------------


def finite_difference_check(fn, inputs, eps=1e-5):
    """Compare analytic gradients of ``fn(*inputs)`` with central differences.

    ``fn`` must return a scalar Tensor.  Returns the maximum relative error
    over every element of every input that requires grad, where the error is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    out.backward()
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = float(fn(*inputs).data)
            flat[i] = keep - eps
            lo = float(fn(*inputs).data)
            flat[i] = keep
            numeric[i] = (hi - lo) / (2.0 * eps)
        numeric = numeric.reshape(t.data.shape)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
        err = np.abs(analytic - numeric) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
