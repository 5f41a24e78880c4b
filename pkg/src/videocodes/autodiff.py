"""Reverse-mode automatic differentiation on dense numpy arrays.

Every operation builds a node in an acyclic graph; ``backward`` walks the
graph once in reverse topological order and *accumulates* gradients (they
are summed into ``.grad``, never overwritten).  Kernels are single-threaded
numpy and deterministic for a fixed input, so two runs from the same seed
produce bit-identical results.

Float width follows the input arrays: training code uses float32, the
verification harness promotes everything to float64.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; message names the axis."""


class Tensor:
    """A node in the autodiff graph wrapping an ndarray.

    ``requires_grad`` marks leaf parameters.  Interior nodes carry a
    backward closure and references to their parent nodes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph construction helpers -----------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar node through the whole graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def transpose(self, axes):
        return transpose(self, axes)


def _toposort(root):
    """Reverse topological order; each node visited exactly once."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return list(reversed(order))


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return Tensor(arr)


def _unbroadcast(g, shape):
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise and reduction ops ------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, (a, b), bwd)


def mul(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        out_data = a.data * c

        def bwd_scalar(g):
            a._accumulate(_unbroadcast(g * c, a.data.shape))

        return Tensor(out_data, (a,), bwd_scalar)

    out_data = a.data * b.data

    def bwd(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, (a, b), bwd)


def power(a, p):
    a = as_tensor(a)
    out_data = a.data ** p

    def bwd(g):
        a._accumulate(g * p * a.data ** (p - 1))

    return Tensor(out_data, (a,), bwd)


def square(a):
    a = as_tensor(a)

    def bwd(g):
        a._accumulate(g * 2.0 * a.data)

    return Tensor(a.data * a.data, (a,), bwd)


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        a._accumulate(g * 0.5 / out_data)

    return Tensor(out_data, (a,), bwd)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        a._accumulate(g * out_data)

    return Tensor(out_data, (a,), bwd)


def log(a):
    a = as_tensor(a)

    def bwd(g):
        a._accumulate(g / a.data)

    return Tensor(np.log(a.data), (a,), bwd)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return Tensor(out_data, (a,), bwd)


def sigmoid(a):
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, (a,), bwd)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        a._accumulate(g * mask)

    return Tensor(a.data * mask, (a,), bwd)


def abs_(a):
    a = as_tensor(a)
    sign = np.sign(a.data)

    def bwd(g):
        a._accumulate(g * sign)

    return Tensor(np.abs(a.data), (a,), bwd)


def clamp(a, lo, hi):
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        a._accumulate(g * mask)

    return Tensor(np.clip(a.data, lo, hi), (a,), bwd)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(ax % a.data.ndim for ax in axes)
                for ax in sorted(axes):
                    gg = np.expand_dims(gg, ax)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return Tensor(out_data, (a,), bwd)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    out_data = np.where(take_a, a.data, b.data)

    def bwd(g):
        a._accumulate(_unbroadcast(g * take_a, a.data.shape))
        b._accumulate(_unbroadcast(g * ~take_a, b.data.shape))

    return Tensor(out_data, (a, b), bwd)


def max_(a, axis, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.max(axis=axis, keepdims=True)
    mask = a.data == out_data
    # ties share gradient equally, keeping backward deterministic
    counts = mask.sum(axis=axis, keepdims=True)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(mask * (gg / counts))

    res = out_data if keepdims else np.squeeze(out_data, axis=axis)
    return Tensor(res, (a,), bwd)


def softmax(a, axis=-1):
    """Numerically stable softmax; rows sum to 1."""
    a = as_tensor(a)
    shifted = a - Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(shifted)
    return e / sum_(e, axis=axis, keepdims=True)


# -- structural ops ----------------------------------------------------------


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)

    def bwd(g):
        a._accumulate(g.reshape(a.data.shape))

    return Tensor(out_data, (a,), bwd)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        a._accumulate(g.transpose(inv))

    return Tensor(a.data.transpose(axes), (a,), bwd)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return Tensor(out_data, tuple(tensors), bwd)


def slice_(a, index):
    """Basic (non-fancy) slicing with gradient scatter."""
    a = as_tensor(a)
    out_data = a.data[index]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accumulate(full)

    return Tensor(out_data, (a,), bwd)


def gather_rows(table, indices):
    """Pick rows ``table[indices]``; gradient scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    out_data = table.data[idx]

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        table._accumulate(full)

    return Tensor(out_data, (table,), bwd)


def stop_gradient(a):
    a = as_tensor(a)
    return Tensor(a.data, (), None)


def straight_through(forward_values, grad_path):
    """Forward carries ``forward_values``; gradient flows only to ``grad_path``.

    This is the identity-gradient estimator used to train encoders through a
    discrete quantization step.
    """
    grad_path = as_tensor(grad_path)
    data = np.asarray(forward_values.data if isinstance(forward_values, Tensor) else forward_values)
    if data.shape != grad_path.data.shape:
        raise ShapeError(
            f"straight_through shapes differ: {data.shape} vs {grad_path.data.shape}")

    def bwd(g):
        grad_path._accumulate(g)

    return Tensor(data, (grad_path,), bwd)


# -- matmul ------------------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner axes differ: {a.data.shape[-1]} vs {b.data.shape[-2]}")
    out_data = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a._accumulate(_unbroadcast(ga, a.data.shape))
        b._accumulate(_unbroadcast(gb, b.data.shape))

    return Tensor(out_data, (a, b), bwd)


# -- reflect padding ---------------------------------------------------------


def _reflect_indices(n, before, after):
    """Index map realizing mirror padding (no edge repeat), e.g. n=4, before=2
    gives [2,1,0,1,2,3,2,1]."""
    if before >= n or after >= n:
        raise ShapeError(f"reflect padding ({before},{after}) too large for extent {n}")
    idx = np.arange(-before, n + after)
    period = 2 * n - 2 if n > 1 else 1
    idx = np.abs(idx) % period
    idx = np.where(idx >= n, period - idx, idx)
    return idx


def pad_reflect(a, pads):
    """Mirror-pad; ``pads`` is a per-axis list of (before, after).

    Backward folds gradients back onto their mirror sources, making the op an
    exact linear adjoint pair with the forward gather.
    """
    a = as_tensor(a)
    maps = []
    for ax, (b, e) in enumerate(pads):
        if b or e:
            maps.append((ax, _reflect_indices(a.data.shape[ax], b, e)))
    out_data = a.data
    for ax, idx in maps:
        out_data = np.take(out_data, idx, axis=ax)

    def bwd(g):
        for ax, _ in reversed(maps):
            b, e = pads[ax]
            g = _fold_axis(g, a.data.shape[ax], b, e, ax)
        a._accumulate(g)

    return Tensor(out_data, (a,), bwd)


def _fold_axis(g, n, before, after, axis):
    """Adjoint of mirror padding along one axis, via slice adds."""
    gm = np.moveaxis(g, axis, 0)
    core = gm[before:before + n].copy()
    if before:
        core[1:before + 1] += gm[before - 1::-1]
    if after:
        core[n - 1 - after:n - 1] += gm[:before + n - 1:-1]
    return np.moveaxis(core, 0, axis)


# -- 3D convolution ----------------------------------------------------------


def _conv_out_extent(n, s):
    return -(-n // s)  # ceil(n / s)


def _conv_padding(n, k, s):
    """Symmetric padding so that the output extent is ceil(n / s)."""
    out = _conv_out_extent(n, s)
    total = max((out - 1) * s + k - n, 0)
    return total // 2, total - total // 2


def _check_finite(name, arr):
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")


def _gather_patches(xp, kt, kh, kw, st, sh, sw, ot, oh, ow):
    """Stack strided views per kernel offset: (B, ot, oh, ow, kt*kh*kw, Ci).

    Offsets iterate kT, then kH, then kW; channels stay innermost, fixing the
    accumulation order of the subsequent contraction.
    """
    b, _, _, _, ci = xp.shape
    patches = np.empty((b, ot, oh, ow, kt * kh * kw, ci), dtype=xp.dtype)
    o = 0
    for dt in range(kt):
        for dy in range(kh):
            for dx in range(kw):
                patches[..., o, :] = xp[:, dt:dt + ot * st:st,
                                        dy:dy + oh * sh:sh,
                                        dx:dx + ow * sw:sw, :]
                o += 1
    return patches


def _scatter_patches(gpatches, xp_shape, kt, kh, kw, st, sh, sw, ot, oh, ow):
    """Adjoint of ``_gather_patches``: add patch slices back into place."""
    gxp = np.zeros(xp_shape, dtype=gpatches.dtype)
    o = 0
    for dt in range(kt):
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, dt:dt + ot * st:st,
                    dy:dy + oh * sh:sh,
                    dx:dx + ow * sw:sw, :] += gpatches[..., o, :]
                o += 1
    return gxp


class _ConvPlan:
    """Geometry shared by conv3d, its gradients, and conv3d_transpose."""

    def __init__(self, in_shape, kernel_shape, stride):
        f, h, w, ci = in_shape
        kt, kh, kw, kci, co = kernel_shape
        if kci != ci:
            raise ShapeError(f"kernel input channels {kci} != input channels {ci}")
        st, sh, sw = stride
        if min(st, sh, sw) < 1:
            raise ShapeError(f"stride components must be >= 1, got {stride}")
        self.k = (kt, kh, kw)
        self.s = (st, sh, sw)
        self.ci, self.co = ci, co
        self.out = tuple(_conv_out_extent(n, s) for n, s in zip((f, h, w), stride))
        self.pads = [(0, 0)] + [list(_conv_padding(n, kk, s))
                                for n, kk, s in zip((f, h, w), self.k, stride)] + [(0, 0)]
        self.padded = tuple(n + p[0] + p[1] for n, p in zip((f, h, w), self.pads[1:4]))
        for ax, (n, kk) in enumerate(zip(self.padded, self.k)):
            if kk > n:
                raise ShapeError(f"kernel extent {kk} exceeds padded input extent {n} on axis {ax}")


def conv3d(x, kernel, stride):
    """3D convolution with reflect padding; output extent = ceil(in / stride).

    ``x``: (B, F, H, W, Cin), ``kernel``: (kT, kH, kW, Cin, Cout).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_finite("conv3d input", x.data)
    plan = _ConvPlan(x.data.shape[1:], kernel.data.shape, stride)
    xp = pad_reflect(x, [(0, 0)] + plan.pads[1:4] + [(0, 0)])
    kt, kh, kw = plan.k
    ot, oh, ow = plan.out
    b = x.data.shape[0]
    patches = _gather_patches(xp.data, kt, kh, kw, *plan.s, ot, oh, ow)
    pm = patches.reshape(b * ot * oh * ow, kt * kh * kw * plan.ci)
    km = kernel.data.reshape(kt * kh * kw * plan.ci, plan.co)
    out_data = (pm @ km).reshape(b, ot, oh, ow, plan.co)

    def bwd(g):
        gm = g.reshape(b * ot * oh * ow, plan.co)
        kernel._accumulate((pm.T @ gm).reshape(kernel.data.shape))
        gpatches = (gm @ km.T).reshape(b, ot, oh, ow, kt * kh * kw, plan.ci)
        xp._accumulate(_scatter_patches(gpatches, xp.data.shape, kt, kh, kw,
                                        *plan.s, ot, oh, ow))

    return Tensor(out_data, (xp, kernel), bwd)


def conv3d_transpose(x, kernel, stride, out_spatial=None):
    """Transposed 3D convolution; output extents = input extents * stride.

    ``x``: (B, T, H, W, Cin), ``kernel``: (kT, kH, kW, Cin, Cout).  The
    forward pass is exactly the backward-data pass of ``conv3d`` with the
    channel-swapped kernel, so <conv3d(v, K'), x> == <v, conv3d_transpose(x, K)>
    where K' = K with its channel axes swapped.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_finite("conv3d_transpose input", x.data)
    b, f, h, w, ci = x.data.shape
    kt, kh, kw, kci, co = kernel.data.shape
    if kci != ci:
        raise ShapeError(f"kernel input channels {kci} != input channels {ci}")
    st, sh, sw = stride
    if min(st, sh, sw) < 1:
        raise ShapeError(f"stride components must be >= 1, got {stride}")
    if out_spatial is None:
        out_spatial = (f * st, h * sh, w * sw)
    # geometry of the matching forward conv: out_spatial --conv(K', s)--> (f,h,w)
    plan = _ConvPlan(out_spatial + (co,), (kt, kh, kw, co, ci), stride)
    if plan.out != (f, h, w):
        raise ShapeError(f"transpose geometry mismatch: conv of {out_spatial} gives {plan.out}, input is {(f, h, w)}")
    ot, oh, ow = f, h, w
    km = kernel.data.reshape(kt * kh * kw, ci, co)
    # scatter input through the kernel into the padded buffer, then fold pads
    xm = x.data.reshape(b * ot * oh * ow, ci)
    contrib = np.tensordot(xm, km, axes=([1], [1]))  # (n, kvol, co)
    gpatches = contrib.reshape(b, ot, oh, ow, kt * kh * kw, co)
    padded_shape = (b,) + plan.padded + (co,)
    scattered = _scatter_patches(gpatches, padded_shape, kt, kh, kw, st, sh, sw, ot, oh, ow)
    out_data = _fold_reflect(scattered, out_spatial, plan.pads)

    def bwd(g):
        # grad wrt x: forward conv of g with K'; grad wrt kernel: patch outer products
        gp = _pad_reflect_data(g, plan.pads)
        patches = _gather_patches(gp, kt, kh, kw, st, sh, sw, ot, oh, ow)
        pm = patches.reshape(b * ot * oh * ow, kt * kh * kw * co)
        kswap = kernel.data.transpose(0, 1, 2, 4, 3).reshape(kt * kh * kw * co, ci)
        x._accumulate((pm @ kswap).reshape(b, ot, oh, ow, ci))
        gk = pm.T @ xm  # (kvol*co, ci)
        kernel._accumulate(gk.reshape(kt, kh, kw, co, ci).transpose(0, 1, 2, 4, 3))

    return Tensor(out_data, (x, kernel), bwd)


def _pad_reflect_data(arr, pads):
    for ax, (b, e) in enumerate(pads):
        if b or e:
            idx = _reflect_indices(arr.shape[ax], b, e)
            arr = np.take(arr, idx, axis=ax)
    return arr


def _fold_reflect(padded, out_spatial, pads):
    """Adjoint of reflect padding on the three spatial axes."""
    arr = padded
    for ax in (1, 2, 3):
        b, e = pads[ax]
        if b or e:
            arr = _fold_axis(arr, out_spatial[ax - 1], b, e, ax)
    return arr


# -- pooling -----------------------------------------------------------------


def maxpool3d(x, window):
    """Non-overlapping max pooling over (F, H, W); window divides the extents."""
    x = as_tensor(x)
    b, f, h, w, c = x.data.shape
    wt, wh, ww = window
    if f % wt or h % wh or w % ww:
        raise ShapeError(f"pool window {window} does not divide extents {(f, h, w)}")
    r = x.data.reshape(b, f // wt, wt, h // wh, wh, w // ww, ww, c)
    out_data = r.max(axis=(2, 4, 6))
    expanded = out_data[:, :, None, :, None, :, None, :]
    mask = r == expanded
    counts = mask.sum(axis=(2, 4, 6), keepdims=True)

    def bwd(g):
        gg = g[:, :, None, :, None, :, None, :] / counts
        x._accumulate((mask * gg).reshape(x.data.shape))

    return Tensor(out_data, (x,), bwd)


# -- attention ---------------------------------------------------------------


def multi_head_attention(queries, keys, values, heads, q_positions=None, k_positions=None):
    """Scaled dot-product attention over pre-projected inputs.

    ``queries``: (..., Nq, D), ``keys``/``values``: (..., Nk, D).  D must
    divide by ``heads``.  Optional absolute positional embeddings are added to
    queries and keys before computing scores.  Per-head softmax rows sum to 1.
    """
    q, k, v = as_tensor(queries), as_tensor(keys), as_tensor(values)
    d = q.data.shape[-1]
    if d % heads:
        raise ShapeError(f"feature size {d} not divisible by heads={heads}")
    if q_positions is not None:
        q = add(q, q_positions)
    if k_positions is not None:
        k = add(k, k_positions)
    hd = d // heads

    def split(t):
        s = t.data.shape
        t = reshape(t, s[:-1] + (heads, hd))
        perm = tuple(range(len(s) - 1)) + (len(s) - 1, len(s),)
        # (..., N, heads, hd) -> (..., heads, N, hd)
        axes = list(range(t.data.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        return transpose(t, axes)

    qh, kh_, vh = split(q), split(k), split(v)
    scores = matmul(qh, transpose(kh_, tuple(range(kh_.data.ndim - 2)) + (kh_.data.ndim - 1, kh_.data.ndim - 2)))
    scores = mul(scores, 1.0 / np.sqrt(hd))
    weights = softmax(scores, axis=-1)
    ctx = matmul(weights, vh)  # (..., heads, Nq, hd)
    axes = list(range(ctx.data.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    ctx = transpose(ctx, axes)  # (..., Nq, heads, hd)
    out = reshape(ctx, ctx.data.shape[:-2] + (d,))
    out.name = "mha"
    return out


def attention_weights(queries, keys, heads, q_positions=None, k_positions=None):
    """Softmax attention weights only, for inspection in tests."""
    q, k = as_tensor(queries), as_tensor(keys)
    d = q.data.shape[-1]
    if d % heads:
        raise ShapeError(f"feature size {d} not divisible by heads={heads}")
    if q_positions is not None:
        q = add(q, q_positions)
    if k_positions is not None:
        k = add(k, k_positions)
    hd = d // heads
    qh = q.data.reshape(q.data.shape[:-1] + (heads, hd))
    kh = k.data.reshape(k.data.shape[:-1] + (heads, hd))
    scores = np.einsum('...qhd,...khd->...hqk', qh, kh) / np.sqrt(hd)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


# -- seedable RNG ------------------------------------------------------------


class SeededRng:
    """Deterministic RNG shared by every module; spawnable into substreams."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, tag):
        """Independent substream derived from the seed and a string tag."""
        import zlib
        return SeededRng((self.seed * 1000003 + zlib.crc32(tag.encode())) % (2 ** 63))

    def normal(self, shape, scale=1.0, dtype=np.float32):
        return (self._gen.standard_normal(shape) * scale).astype(dtype)

    def uniform(self, low, high, shape=None, dtype=np.float64):
        return self._gen.uniform(low, high, shape).astype(dtype) if shape is not None \
            else float(self._gen.uniform(low, high))

    def integers(self, low, high, shape=None):
        out = self._gen.integers(low, high, size=shape)
        return out if shape is not None else int(out)

    def permutation(self, n):
        return self._gen.permutation(n)
