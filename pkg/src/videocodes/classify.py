"""Downstream classifiers that run on code embeddings or raw pixels.

A small separable-3D-conv network ("S3D-lite") with the stride adaptation
that makes compressed inputs drop-in: the pixel stem downsamples 32x32
frames to the code grid (first conv stride 2 plus two max pools), while the
code stem keeps stride 1 and skips the pools, so both paths hand the same
tensor shape to the shared trunk.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .codec import MODEL_VERSION, _read_model_header

CLS_MAGIC = b"CVCL"


@dataclass
class ClassifierConfig:
    source: str = "codes"              # "pixels" | "codes"
    in_channels: int = 64
    num_classes: int = 2
    head: str = "clip"                 # "clip" | "frame"
    frame_size: int = 32               # pixel-path spatial extent
    code_size: int = 4                 # code-path spatial extent
    widths: tuple = (32, 64, 96, 128)

    def __post_init__(self):
        if self.source not in ("pixels", "codes"):
            raise ValueError(f"unknown input source {self.source!r}")
        if self.head not in ("clip", "frame"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.source == "pixels" and self.frame_size % 8:
            raise ValueError(
                f"stem stage needs frame_size divisible by 8 (one stride-2 "
                f"conv + two pools), got {self.frame_size}")


class _SepConv:
    """Separable spatiotemporal conv: (1,3,3) spatial then (3,1,1) temporal."""

    def __init__(self, store, name, rng, in_ch, out_ch, spatial_stride=1):
        s = spatial_stride
        self.spatial = nn.Conv3d(store, f"{name}.s", rng, in_ch, out_ch,
                                 (1, 3, 3), stride=(1, s, s))
        self.temporal = nn.Conv3d(store, f"{name}.t", rng, out_ch, out_ch,
                                  (3, 1, 1))

    def __call__(self, x):
        return ad.relu(self.temporal(ad.relu(self.spatial(x))))


class Classifier:
    """S3D-lite: adapted stem, then a shared trunk and pooling head."""

    def __init__(self, config, seed=0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.store = nn.ParamStore(dtype=dtype)
        rng = ad.SeededRng(seed)
        w0, w1, w2, w3 = config.widths
        pix = config.source == "pixels"
        self.conv1 = _SepConv(self.store, "conv1", rng, config.in_channels,
                              w0, spatial_stride=2 if pix else 1)
        self.conv2 = _SepConv(self.store, "conv2", rng, w0, w1)
        self.conv3 = _SepConv(self.store, "conv3", rng, w1, w1)
        self.pool_stride = (1, 2, 2) if pix else None
        self.stage3 = _SepConv(self.store, "stage3", rng, w1, w2)
        self.stage4 = _SepConv(self.store, "stage4", rng, w2, w3)
        self.fc = nn.Linear(self.store, "fc", rng, w3, config.num_classes)

    def stem(self, x):
        """Adapted stem; output shape is source-independent by construction."""
        x = self.conv1(x)
        if self.pool_stride:
            x = ad.maxpool3d(x, self.pool_stride)
        x = self.conv3(self.conv2(x))
        if self.pool_stride:
            x = ad.maxpool3d(x, self.pool_stride)
        return x

    def trunk(self, x):
        return self.stage4(self.stage3(x))

    def __call__(self, x):
        """Batch (B,F,S,S,C) -> logits (B,classes) or (B,F,classes)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.store.dtype))
        h = self.trunk(self.stem(x))
        if self.config.head == "frame":
            h = ad.mean(h, axis=(2, 3))      # keep T
        else:
            h = ad.mean(h, axis=(1, 2, 3))
        return self.fc(h)

    def post_stem_shape(self, input_shape):
        """Shape after the stem for a single (F,S,S,C) input, no compute."""
        f, s, _, _ = input_shape
        factor = 8 if self.config.source == "pixels" else 1
        return (f, s // factor, s // factor, self.config.widths[1])


def build_classifier(config, seed=0):
    return Classifier(config, seed=seed)


def train_classifier(model, data, labels, steps, batch_size=8, lr=3e-4,
                     seed=0, log_every=0):
    """Cross-entropy training with Adam and a cosine-decayed learning rate.

    ``data`` is (N,F,S,S,C) in the model's input source (pixel clips or
    code embeddings); ``labels`` is (N,) ints for the clip head or (N,F)
    for the frame head.

    Returns (model, history) where history has per-step loss and accuracy.
    """
    data = np.asarray(data, dtype=model.store.dtype)
    labels = np.asarray(labels)
    if labels.max() >= model.config.num_classes:
        raise ValueError(f"label {labels.max()} outside "
                         f"{model.config.num_classes} classes")
    rng = np.random.default_rng(seed)
    opt = nn.Adam(model.store, lr)
    history = {"loss": [], "accuracy": []}
    for step in range(steps):
        pick = rng.integers(0, data.shape[0], size=min(batch_size, data.shape[0]))
        model.store.zero_grad()
        logits = model(data[pick])
        y = labels[pick]
        loss = nn.cross_entropy(logits, y.reshape(-1) if y.ndim > 1 else y)
        loss.backward()
        if lr > 0:
            opt.step(lr=nn.cosine_decay(lr, step, steps))
        pred = np.argmax(logits.data, axis=-1)
        acc = float(np.mean(pred == y))
        history["loss"].append(float(loss.data))
        history["accuracy"].append(acc)
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}  loss {loss.data:.4f}  acc {acc:.3f}")
    return model, history


def predict(model, data, batch_size=16):
    """Deterministic batched forward; returns logits array."""
    data = np.asarray(data, dtype=model.store.dtype)
    outs = [model(data[i:i + batch_size]).data
            for i in range(0, data.shape[0], batch_size)]
    return np.concatenate(outs, axis=0)


def _interpolated_boxes(n, frame_size=32, side=None):
    """n crop boxes linearly interpolated along the frame diagonal."""
    from .augment import CROP_FRACTION, AugSpec
    side = side if side is not None else int(round(CROP_FRACTION * frame_size))
    lo, hi = 0, frame_size - side
    offs = np.linspace(lo, hi, n) if n > 1 else np.array([(lo + hi) / 2.0])
    f = float(frame_size)
    return [AugSpec("crop", (round(o) / f, round(o) / f,
                             (round(o) + side) / f, (round(o) + side) / f))
            for o in offs]


def eval_multicrop(model, codes_list, codec, aug_nets=None, n_spatial=1,
                   m_temporal=1, flip_pool=False, frame_size=32):
    """Averaged-logits evaluation over augmented views of stored codes.

    Views are built in embedding space: ``n_spatial`` crop boxes linearly
    interpolated along the frame diagonal (requires a trained crop net for
    n > 1), optionally doubled by a learned horizontal flip, and
    ``m_temporal`` uniformly spaced temporal windows when clips are longer
    than the model's window.  With one central view and no flip this is
    exactly the plain forward pass.

    Returns (logits (N,classes), predictions (N,)).
    """
    aug_nets = aug_nets or {}
    if n_spatial > 1 and "crop" not in aug_nets:
        raise ValueError("multi-crop evaluation needs a trained 'crop' net")
    if flip_pool and "flip" not in aug_nets:
        raise ValueError("flip pooling needs a trained 'flip' net")
    from .augment import AugSpec, apply_latent_augmentation

    all_logits = []
    for codes in codes_list:
        emb = codec.embed_codes(
            codes.indices if hasattr(codes, "indices") else np.asarray(codes))
        views = []
        if n_spatial > 1:
            for spec in _interpolated_boxes(n_spatial, frame_size):
                views.append(apply_latent_augmentation(
                    codes, spec, aug_nets["crop"], codec))
        else:
            views.append(emb)
        if flip_pool:
            spec = AugSpec("flip", (1.0,))
            views += [_flip_embedding(v, spec, aug_nets["flip"], codec)
                      for v in list(views)]
        tt = views[0].shape[0]
        win = tt  # temporal window = model input length in code steps
        starts = [0] if m_temporal == 1 or tt <= win else \
            np.linspace(0, tt - win, m_temporal).round().astype(int)
        logits = [model(np.asarray(v, dtype=model.store.dtype)[None, s:s + win]).data[0]
                  for v in views for s in np.atleast_1d(starts)]
        all_logits.append(np.mean(logits, axis=0))
    logits = np.stack(all_logits)
    return logits, np.argmax(logits, axis=-1)


def _flip_embedding(emb, spec, net, codec):
    out = net(Tensor(np.asarray(emb, dtype=net.store.dtype)[None]),
              np.asarray(spec.params, dtype=net.store.dtype)[None])
    return out.data[0]


def save_classifier(model, path):
    """Versioned binary with the shared model framing, magic CVCL."""
    cfg = json.dumps({**asdict(model.config), "seed": model.seed}).encode()
    with open(path, "wb") as fh:
        fh.write(CLS_MAGIC)
        fh.write(struct.pack("<H", MODEL_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        for name in model.store.params:
            fh.write(model.store.params[name].data.astype("<f4").tobytes())
    return path


def load_classifier(path):
    fh, cfg_text = _read_model_header(path, CLS_MAGIC)
    with fh:
        d = json.loads(cfg_text)
        seed = d.pop("seed", 0)
        d["widths"] = tuple(d["widths"])
        model = Classifier(ClassifierConfig(**d), seed=seed)
        for name, p in model.store.params.items():
            raw = fh.read(p.data.size * 4)
            if len(raw) != p.data.size * 4:
                raise ValueError(f"truncated classifier file at parameter {name}")
            p.data = np.frombuffer(raw, dtype="<f4").reshape(p.data.shape).astype(
                model.store.dtype)
    return model


def bench_forward(model, batch, repeats=100, warmup=3):
    """Wall-clock the forward pass; returns mean/std seconds and metadata."""
    batch = np.asarray(batch, dtype=model.store.dtype)
    for _ in range(warmup):
        model(batch)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        model(batch)
        times.append(time.perf_counter() - t0)
    times = np.asarray(times)
    return {"mean": float(times.mean()),
            "std": float(times.std()) if repeats > 1 else 0.0,
            "repeats": repeats,
            "batch_shape": tuple(batch.shape),
            "source": model.config.source}
