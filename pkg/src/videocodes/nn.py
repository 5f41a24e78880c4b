"""Layers, parameter storage, optimizers and the gradient verification harness."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParamStore:
    """Named parameter tensors plus per-parameter optimizer state.

    Names are unique and shapes are frozen at creation.
    """

    def __init__(self, dtype=np.float32):
        self.params: dict[str, Tensor] = {}
        self.state: dict[str, dict] = {}
        self.dtype = dtype

    def create(self, name, data):
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype):
        """Switch float width in place (used to enter 64-bit verification mode)."""
        self.dtype = dtype
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def copy_values(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_values(self, values):
        for k, p in self.params.items():
            if p.data.shape != values[k].shape:
                raise ValueError(f"shape mismatch loading {k}")
            p.data = values[k].astype(self.dtype)

    def total_size(self):
        return sum(p.data.size for p in self.params.values())


def he_uniform(rng, shape, fan_in, dtype=np.float32):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape).astype(dtype)


# -- layers ------------------------------------------------------------------


class Linear:
    def __init__(self, store, name, rng, in_dim, out_dim, bias=True):
        self.w = store.create(f"{name}.w", he_uniform(rng, (in_dim, out_dim), in_dim))
        self.b = store.create(f"{name}.b", np.zeros(out_dim)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.w)
        return ad.add(y, self.b) if self.b is not None else y


class Conv3d:
    """3D convolution layer, reflect-padded, output extent ceil(in/stride)."""

    def __init__(self, store, name, rng, in_ch, out_ch, kernel, stride=(1, 1, 1), bias=True):
        kt, kh, kw = kernel
        fan_in = kt * kh * kw * in_ch
        self.w = store.create(f"{name}.w", he_uniform(rng, (kt, kh, kw, in_ch, out_ch), fan_in))
        self.b = store.create(f"{name}.b", np.zeros(out_ch)) if bias else None
        self.stride = stride

    def __call__(self, x):
        y = ad.conv3d(x, self.w, self.stride)
        return ad.add(y, self.b) if self.b is not None else y


class ConvTranspose3d:
    """Transposed 3D convolution layer; output extents = input * stride."""

    def __init__(self, store, name, rng, in_ch, out_ch, kernel, stride=(1, 1, 1), bias=True):
        kt, kh, kw = kernel
        fan_in = kt * kh * kw * in_ch
        self.w = store.create(f"{name}.w", he_uniform(rng, (kt, kh, kw, in_ch, out_ch), fan_in))
        self.b = store.create(f"{name}.b", np.zeros(out_ch)) if bias else None
        self.stride = stride

    def __call__(self, x):
        y = ad.conv3d_transpose(x, self.w, self.stride)
        return ad.add(y, self.b) if self.b is not None else y


class LayerNorm:
    def __init__(self, store, name, dim, eps=1e-5):
        self.g = store.create(f"{name}.g", np.ones(dim))
        self.b = store.create(f"{name}.b", np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        mu = ad.mean(x, axis=-1, keepdims=True)
        xc = x - mu
        var = ad.mean(ad.square(xc), axis=-1, keepdims=True)
        norm = xc * ad.power(var + self.eps, -0.5)
        return norm * self.g + self.b


class MultiHeadSelfAttention:
    """Projected self-attention over a (..., N, D) token tensor."""

    def __init__(self, store, name, rng, dim, heads):
        self.heads = heads
        self.wq = Linear(store, f"{name}.q", rng, dim, dim)
        self.wk = Linear(store, f"{name}.k", rng, dim, dim)
        self.wv = Linear(store, f"{name}.v", rng, dim, dim)
        self.wo = Linear(store, f"{name}.o", rng, dim, dim)

    def __call__(self, x):
        out = ad.multi_head_attention(self.wq(x), self.wk(x), self.wv(x), self.heads)
        return self.wo(out)


class CrossAttention:
    """Queries from one source, keys/values from another."""

    def __init__(self, store, name, rng, dim, heads):
        self.heads = heads
        self.wq = Linear(store, f"{name}.q", rng, dim, dim)
        self.wk = Linear(store, f"{name}.k", rng, dim, dim)
        self.wv = Linear(store, f"{name}.v", rng, dim, dim)
        self.wo = Linear(store, f"{name}.o", rng, dim, dim)

    def __call__(self, q_tokens, kv_tokens):
        out = ad.multi_head_attention(self.wq(q_tokens), self.wk(kv_tokens),
                                      self.wv(kv_tokens), self.heads)
        return self.wo(out)


class TransformerBlock:
    """Pre-norm residual block: self-attention followed by a 2-layer MLP."""

    def __init__(self, store, name, rng, dim, heads, mlp_dim=None):
        mlp_dim = mlp_dim or 2 * dim
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = MultiHeadSelfAttention(store, f"{name}.attn", rng, dim, heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.fc1 = Linear(store, f"{name}.fc1", rng, dim, mlp_dim)
        self.fc2 = Linear(store, f"{name}.fc2", rng, mlp_dim, dim)

    def __call__(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(ad.relu(self.fc1(self.ln2(x))))


class LSTMCell:
    """Single-layer LSTM cell with the standard four gates."""

    def __init__(self, store, name, rng, in_dim, hidden):
        self.hidden = hidden
        self.wx = store.create(f"{name}.wx", he_uniform(rng, (in_dim, 4 * hidden), in_dim))
        self.wh = store.create(f"{name}.wh", he_uniform(rng, (hidden, 4 * hidden), hidden))
        self.b = store.create(f"{name}.b", np.zeros(4 * hidden))

    def __call__(self, x, h, c):
        z = ad.matmul(x, self.wx) + ad.matmul(h, self.wh) + self.b
        n = self.hidden
        i = ad.sigmoid(ad.slice_(z, (Ellipsis, slice(0, n))))
        f = ad.sigmoid(ad.slice_(z, (Ellipsis, slice(n, 2 * n))))
        g = ad.tanh(ad.slice_(z, (Ellipsis, slice(2 * n, 3 * n))))
        o = ad.sigmoid(ad.slice_(z, (Ellipsis, slice(3 * n, 4 * n))))
        c_new = f * c + i * g
        h_new = o * ad.tanh(c_new)
        return h_new, c_new


# -- losses ------------------------------------------------------------------


def l1_loss(pred, target):
    return ad.mean(ad.abs_(pred - ad.as_tensor(target)))


def mse_loss(pred, target):
    return ad.mean(ad.square(pred - ad.as_tensor(target)))


def cross_entropy(logits, labels):
    """Mean cross-entropy; ``logits`` (..., C), ``labels`` int array (...)."""
    logp = log_softmax(logits)
    labels = np.asarray(labels)
    onehot = np.zeros(logits.data.shape, dtype=logits.dtype)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    return -ad.mean(ad.sum_(logp * Tensor(onehot), axis=-1))


def log_softmax(x, axis=-1):
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    return shifted - ad.log(ad.sum_(ad.exp(shifted), axis=axis, keepdims=True))


def bce_with_logits(logit, label):
    """Binary cross-entropy on a scalar logit graph; label in {0, 1}."""
    # softplus(x) - x * label, numerically stable via |x| split
    x = logit
    pos = ad.relu(x)
    return ad.mean(pos - x * float(label) + ad.log(ad.exp(-ad.abs_(x)) + 1.0))


# -- optimizers --------------------------------------------------------------


class SGD:
    def __init__(self, store, lr, momentum=0.0):
        self.store = store
        self.lr = lr
        self.momentum = momentum

    def step(self):
        for name, p in self.store.params.items():
            if p.grad is None:
                continue
            if self.momentum:
                st = self.store.state.setdefault(name, {})
                v = st.get("v")
                if v is None:
                    v = np.zeros_like(p.data)
                v = self.momentum * v + p.grad
                st["v"] = v
                p.data = p.data - (self.lr * v).astype(p.data.dtype)
            else:
                p.data = p.data - (self.lr * p.grad).astype(p.data.dtype)


class Adam:
    def __init__(self, store, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.store.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            st = self.store.state.setdefault(name, {})
            m = st.get("m")
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            else:
                v = st["v"]
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            st["m"], st["v"] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data = p.data - (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def cosine_decay(base_lr, step, total_steps):
    if step >= total_steps:
        return 0.0
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


# -- gradient verification ---------------------------------------------------


def finite_difference_check(store, loss_fn, eps=1e-5, tol=1e-4, max_entries=24, seed=0):
    """Compare backprop gradients against central finite differences.

    ``loss_fn`` takes no arguments and rebuilds the forward graph from the
    store's current parameter values, returning a scalar Tensor.  For large
    parameters a deterministic random sample of ``max_entries`` entries is
    probed.  Returns a report dict; never raises on failure.
    """
    if store.dtype != np.float64:
        raise ValueError("finite_difference_check requires the store in float64 mode")
    store.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in store.params.items()}
    rng = np.random.Generator(np.random.PCG64(seed))
    report = {"eps": eps, "tol": tol, "params": {}, "passed": True}
    for name, p in store.params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        idxs = np.arange(n) if n <= max_entries else np.sort(rng.choice(n, max_entries, replace=False))
        max_rel = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            lp = float(loss_fn().data)
            flat[i] = orig - eps
            lm = float(loss_fn().data)
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            ana = float(analytic[name].reshape(-1)[i])
            # the floor keeps FD roundoff noise on near-zero gradients from
            # registering as relative error
            denom = max(abs(num), abs(ana), 1e-4)
            max_rel = max(max_rel, abs(num - ana) / denom)
        ok = max_rel < tol
        report["params"][name] = {"max_rel_err": max_rel, "ok": ok, "checked": len(idxs)}
        if not ok:
            report["passed"] = False
    report["max_rel_err"] = max(v["max_rel_err"] for v in report["params"].values()) \
        if report["params"] else 0.0
    return report
