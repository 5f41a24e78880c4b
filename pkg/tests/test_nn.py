"""Layer and optimizer tests; every layer's gradient is finite-difference
checked in float64."""

import numpy as np
import pytest

from videocodes import autodiff as ad
from videocodes import nn
from videocodes.autodiff import Tensor


def fd_layer(build, make_loss, tol=1e-4, seed=0):
    """FD-check every parameter of a layer built on a fresh float64 store."""
    store = nn.ParamStore(dtype=np.float64)
    rng = ad.SeededRng(seed)
    layer = build(store, rng)
    report = nn.finite_difference_check(store, lambda: make_loss(layer),
                                        tol=tol, max_entries=8)
    assert report["passed"], {k: v["max_rel_err"]
                              for k, v in report["params"].items()
                              if not v["ok"]}


rng_in = np.random.default_rng(42)


class TestLayers:
    def test_linear(self):
        x = rng_in.normal(size=(3, 5))
        fd_layer(lambda s, r: nn.Linear(s, "l", r, 5, 4),
                 lambda l: ad.sum_(ad.square(l(Tensor(x)))))

    def test_conv3d_layer(self):
        x = rng_in.normal(size=(1, 4, 4, 4, 2))
        fd_layer(lambda s, r: nn.Conv3d(s, "c", r, 2, 3, (3, 3, 3), (1, 2, 2)),
                 lambda l: ad.sum_(ad.square(l(Tensor(x)))))

    def test_conv3d_transpose_layer(self):
        x = rng_in.normal(size=(1, 2, 2, 2, 3))
        fd_layer(lambda s, r: nn.ConvTranspose3d(s, "c", r, 3, 2, (3, 4, 4),
                                                 (1, 2, 2)),
                 lambda l: ad.sum_(ad.square(l(Tensor(x)))))

    def test_layernorm(self):
        x = rng_in.normal(size=(4, 6))
        fd_layer(lambda s, r: nn.LayerNorm(s, "ln", 6),
                 lambda l: ad.sum_(ad.square(l(Tensor(x)))))

    def test_self_attention(self):
        x = rng_in.normal(size=(2, 5, 8))
        fd_layer(lambda s, r: nn.MultiHeadSelfAttention(s, "a", r, 8, 2),
                 lambda l: ad.sum_(ad.square(l(Tensor(x)))))

    def test_cross_attention(self):
        q = rng_in.normal(size=(1, 3, 8))
        kv = rng_in.normal(size=(1, 6, 8))
        fd_layer(lambda s, r: nn.CrossAttention(s, "a", r, 8, 2),
                 lambda l: ad.sum_(ad.square(l(Tensor(q), Tensor(kv)))))

    def test_transformer_block(self):
        x = rng_in.normal(size=(1, 4, 8))
        fd_layer(lambda s, r: nn.TransformerBlock(s, "t", r, 8, 2),
                 lambda l: ad.sum_(ad.square(l(Tensor(x)))))

    def test_lstm_cell(self):
        x = rng_in.normal(size=(2, 5))
        h = rng_in.normal(size=(2, 4))
        c = rng_in.normal(size=(2, 4))

        def loss(cell):
            ht, ct = cell(Tensor(x), Tensor(h), Tensor(c))
            return ad.sum_(ad.square(ht)) + ad.sum_(ad.square(ct))
        fd_layer(lambda s, r: nn.LSTMCell(s, "m", r, 5, 4), loss)


class TestLosses:
    def test_l1_matches_numpy(self):
        a = rng_in.normal(size=(3, 4))
        b = rng_in.normal(size=(3, 4))
        got = float(nn.l1_loss(Tensor(a), b).data)
        assert np.isclose(got, np.abs(a - b).mean())

    def test_cross_entropy_uniform(self):
        logits = Tensor(np.zeros((4, 3)))
        loss = nn.cross_entropy(logits, np.array([0, 1, 2, 0]))
        assert np.isclose(float(loss.data), np.log(3))

    def test_cross_entropy_grad(self):
        store = nn.ParamStore(dtype=np.float64)
        logits = store.create("z", np.random.default_rng(0).normal(size=(3, 4)))
        labels = np.array([1, 0, 3])
        rep = nn.finite_difference_check(
            store, lambda: nn.cross_entropy(logits, labels), tol=1e-6)
        assert rep["passed"]

    def test_bce_with_logits_matches_formula(self):
        z = 0.7
        got = float(nn.bce_with_logits(Tensor(np.array(z)), 1).data)
        assert np.isclose(got, -np.log(1 / (1 + np.exp(-z))))


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = nn.ParamStore()
        store.create("w", np.zeros(3))
        with pytest.raises(ValueError):
            store.create("w", np.zeros(3))

    def test_copy_and_load_round_trip(self):
        store = nn.ParamStore()
        store.create("w", np.arange(3.0))
        vals = store.copy_values()
        store.params["w"].data[:] = 0
        store.load_values(vals)
        assert np.array_equal(store.params["w"].data, np.arange(3.0))


class TestOptimizers:
    def _quadratic(self, opt_cls, **kw):
        store = nn.ParamStore(dtype=np.float64)
        w = store.create("w", np.array([3.0, -2.0]))
        opt = opt_cls(store, **kw)
        for _ in range(200):
            store.zero_grad()
            loss = ad.sum_(ad.square(w))
            loss.backward()
            opt.step()
        return w.data

    def test_sgd_converges(self):
        assert np.all(np.abs(self._quadratic(nn.SGD, lr=0.1)) < 1e-6)

    def test_adam_converges(self):
        assert np.all(np.abs(self._quadratic(nn.Adam, lr=0.1)) < 1e-3)

    def test_adam_deterministic(self):
        a = self._quadratic(nn.Adam, lr=0.05)
        b = self._quadratic(nn.Adam, lr=0.05)
        assert np.array_equal(a, b)

    def test_cosine_decay_endpoints(self):
        assert np.isclose(nn.cosine_decay(1.0, 0, 100), 1.0)
        assert nn.cosine_decay(1.0, 99, 100) < 0.01
        # halfway -> half the base rate
        assert np.isclose(nn.cosine_decay(2.0, 50, 100), 1.0, atol=0.05)


class TestFiniteDifferenceCheck:
    def test_catches_a_wrong_gradient(self):
        store = nn.ParamStore(dtype=np.float64)
        w = store.create("w", np.array([1.0, 2.0]))

        def loss():
            out = ad.sum_(ad.square(w))
            # sabotage: graft a wrong backward onto the loss
            return Tensor(out.data, (w,), lambda g: w._accumulate(
                np.ones_like(w.data) * g))
        rep = nn.finite_difference_check(store, loss, tol=1e-4)
        assert not rep["passed"]
