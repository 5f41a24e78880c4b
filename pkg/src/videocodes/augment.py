"""Learned augmentation in code space.

An augmentation network ``a`` edits code embeddings so that decoding the
edited embedding matches the corresponding pixel-space transform of the
original clip: decode(a(encode(x), params)) ~ transform(x, params).  The
codec stays frozen throughout; only ``a`` trains.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .codec import MODEL_VERSION, CodeTensor, _read_model_header
from .metrics import apply_pixel_transform

AUG_MAGIC = b"CVAN"

FAMILIES = ("crop", "flip", "brightness", "rotation", "saturation")

# conditioning vector length per family
PARAM_DIMS = {"crop": 4, "flip": 1, "brightness": 1, "rotation": 1,
              "saturation": 1}

# fixed crop size as a fraction of the frame (28 px of a 32 px frame)
CROP_FRACTION = 28.0 / 32.0


@dataclass(frozen=True)
class AugSpec:
    """One augmentation request: a family plus its normalized parameters.

    crop        (y0, x0, y1, x1) as fractions of the frame
    flip        one value in {0, 1}
    brightness  factor 0.5..1.5 mapped to -1..1
    rotation    angle -30..30 degrees mapped to -1..1
    saturation  factor 0..2 mapped to -1..1
    """
    family: str
    params: tuple

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown augmentation family {self.family!r}")
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        if len(p) != PARAM_DIMS[self.family]:
            raise ValueError(f"{self.family} expects {PARAM_DIMS[self.family]} "
                             f"parameters, got {len(p)}")
        if self.family == "crop":
            y0, x0, y1, x1 = p
            if not (0.0 <= y0 < y1 <= 1.0 and 0.0 <= x0 < x1 <= 1.0):
                raise ValueError(f"crop box out of range: {p}")
            if abs((y1 - y0) - (x1 - x0)) > 1e-6:
                raise ValueError(f"crop box must match the square output "
                                 f"crop shape: {p}")
        elif self.family == "flip":
            if p[0] not in (0.0, 1.0):
                raise ValueError(f"flip parameter must be 0 or 1, got {p[0]}")
        else:
            if not -1.0 <= p[0] <= 1.0:
                raise ValueError(f"{self.family} parameter outside [-1,1]: {p[0]}")


def sample_augmentation_params(family, rng, frame_size=32):
    """Draw a random AugSpec for a family.

    Crop boxes have the fixed CROP_FRACTION size and sit at a uniformly
    random integer pixel offset; flips are Bernoulli(0.5); the scalar
    families are uniform over their full normalized range.
    """
    if family == "crop":
        side = int(round(CROP_FRACTION * frame_size))
        y = int(rng.integers(0, frame_size - side + 1))
        x = int(rng.integers(0, frame_size - side + 1))
        f = float(frame_size)
        return AugSpec("crop", (y / f, x / f, (y + side) / f, (x + side) / f))
    if family == "flip":
        return AugSpec("flip", (float(rng.integers(0, 2)),))
    return AugSpec(family, (float(rng.uniform(-1.0, 1.0)),))


class AugNetwork:
    """Conditioning MLP + small transformer over code-embedding tokens.

    The parameter vector runs through a 3-hidden-layer MLP (width 64) whose
    output is broadcast over all code positions and concatenated onto the
    embedding channels.  The concatenated tensor, flattened to a token
    sequence with a learned absolute positional table, passes through a
    2-layer transformer (width 128, 4 heads) and is projected back to the
    embedding width.  A global residual keeps the untrained network near
    the identity.
    """

    COND_HIDDEN = 64
    MODEL_DIM = 128
    HEADS = 4
    LAYERS = 2

    def __init__(self, family, embed_dim, tokens, seed=0, dtype=np.float32):
        if family not in FAMILIES:
            raise ValueError(f"unknown augmentation family {family!r}")
        self.family = family
        self.embed_dim = embed_dim
        self.tokens = tokens
        self.seed = seed
        self.store = nn.ParamStore(dtype=dtype)
        rng = ad.SeededRng(seed)
        h, d = self.COND_HIDDEN, self.MODEL_DIM
        pdim = PARAM_DIMS[family]
        self.cond = [nn.Linear(self.store, "cond.l0", rng, pdim, h),
                     nn.Linear(self.store, "cond.l1", rng, h, h),
                     nn.Linear(self.store, "cond.l2", rng, h, h),
                     nn.Linear(self.store, "cond.out", rng, h, embed_dim)]
        self.proj_in = nn.Linear(self.store, "proj_in", rng, 2 * embed_dim, d)
        self.pos = self.store.create(
            "pos", rng.normal((tokens, d), scale=0.02, dtype=dtype))
        self.blocks = [nn.TransformerBlock(self.store, f"block{i}", rng, d,
                                           self.HEADS)
                       for i in range(self.LAYERS)]
        self.ln_out = nn.LayerNorm(self.store, "ln_out", d)
        self.proj_out = nn.Linear(self.store, "proj_out", rng, d, embed_dim)

    def config_json(self):
        return json.dumps({"family": self.family, "embed_dim": self.embed_dim,
                           "tokens": self.tokens, "seed": self.seed})

    def __call__(self, embedding, params):
        """Transform a (B, T_T, T_H, T_W, V_e) embedding Tensor.

        ``params`` is a (B, P) array of normalized conditioning vectors.
        """
        b = embedding.data.shape[0]
        tt, th, tw, ve = embedding.data.shape[1:]
        if tt * th * tw != self.tokens:
            raise ValueError(f"network built for {self.tokens} code positions, "
                             f"got {tt}x{th}x{tw}")
        cond = Tensor(np.asarray(params, dtype=self.store.dtype).reshape(b, -1))
        for layer in self.cond[:-1]:
            cond = ad.relu(layer(cond))
        cond = self.cond[-1](cond)                       # (B, V_e)
        cond = ad.reshape(cond, (b, 1, ve))
        toks = ad.reshape(embedding, (b, self.tokens, ve))
        cond = cond * Tensor(np.ones((1, self.tokens, 1), dtype=self.store.dtype))
        x = self.proj_in(ad.concat([toks, cond], axis=2))
        x = x + ad.reshape(self.pos, (1, self.tokens, self.MODEL_DIM))
        for block in self.blocks:
            x = block(x)
        delta = self.proj_out(self.ln_out(x))
        return ad.reshape(toks + delta, embedding.data.shape)


def apply_latent_augmentation(codes, spec, net, codec, requantize=False):
    """Augment stored codes without decoding to pixels.

    Returns the transformed embedding array (T_T, T_H, T_W, V_e); with
    ``requantize=True`` also snaps it back to nearest codes and returns
    ``(embedding, CodeTensor)``.
    """
    if spec.family != net.family:
        raise ValueError(f"spec family {spec.family!r} does not match network "
                         f"family {net.family!r}")
    idx = codes.indices if isinstance(codes, CodeTensor) else np.asarray(codes)
    emb = codec.embed_codes(idx)
    params = np.asarray(spec.params, dtype=net.store.dtype)[None]
    out = net(Tensor(emb[None]), params).data[0]
    if not requantize:
        return out
    indices, _, _, _ = codec.quantize(Tensor(out[None].astype(codec.store.dtype)))
    new_codes = CodeTensor(indices[0], codec.codec_id(),
                           codec.config.codebook_size,
                           codes.video_shape if isinstance(codes, CodeTensor)
                           else None)
    return out, new_codes


def naive_latent_flip(codes):
    """Reverse the code tensor along its width axis (a deliberately bad
    baseline for horizontal flip: code order flips but each code's content
    does not)."""
    idx = codes.indices if isinstance(codes, CodeTensor) else np.asarray(codes)
    flipped = idx[:, :, ::-1, :].copy()
    if isinstance(codes, CodeTensor):
        return CodeTensor(flipped, codes.codec_id, codes.codebook_size,
                          codes.video_shape)
    return flipped


def train_augmentation_network(codec, family, clips, steps, batch_size=8,
                               lr=1e-3, seed=0, log_every=0, net=None,
                               specs=None):
    """Train an augmentation network against pixel-space oracle targets.

    ``clips`` is a (N, F, H, W, C) array.  Each step draws a batch of clips
    and fresh parameter samples, builds the exact pixel-space target, and
    minimizes the l1 distance between the decoded augmented embedding and
    that target.  The codec is frozen; its parameters are checksummed
    before and after and any change is a hard failure.

    Pass ``specs`` (one AugSpec reused for every draw) to overfit a fixed
    transform, e.g. for sanity checks.

    Returns (net, losses).
    """
    clips = np.asarray(clips)
    n, f, h, w, _ = clips.shape
    tt, th, tw, _ = codec.config.code_shape(clips.shape[1:])
    frozen = codec.store.copy_values()
    if net is None:
        net = AugNetwork(family, codec.config.latent_channels, tt * th * tw,
                         seed=seed, dtype=codec.store.dtype)
    rng = np.random.default_rng(seed)
    opt = nn.Adam(net.store, lr)

    # encode once; the codec never changes underneath us
    embs = np.stack([codec.embed_codes(codec.encode(c).indices) for c in clips])

    losses = []
    for step in range(steps):
        pick = rng.integers(0, n, size=min(batch_size, n))
        if specs is not None:
            batch_specs = [specs] * pick.size
        else:
            batch_specs = [sample_augmentation_params(family, rng, frame_size=h)
                           for _ in range(pick.size)]
        params = np.stack([s.params for s in batch_specs])
        targets = np.stack([apply_pixel_transform(clips[i], s)
                            for i, s in zip(pick, batch_specs)])
        net.store.zero_grad()
        codec.store.zero_grad()
        out = net(Tensor(embs[pick]), params)
        recon = codec.decoder_forward(out)
        loss = nn.l1_loss(recon, targets.astype(codec.store.dtype))
        loss.backward()
        if lr > 0:
            opt.step()
        losses.append(float(loss.data))
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}  l1 {losses[-1]:.4f}")

    after = codec.store.copy_values()
    for name in frozen:
        if not np.array_equal(frozen[name], after[name]):
            raise RuntimeError(f"frozen codec parameter {name!r} changed "
                               f"during augmentation training")
    return net, losses


# -- serialization (CVAN, shares the model framing) ---------------------------


def save_augnet(net, path):
    with open(path, "wb") as fh:
        fh.write(AUG_MAGIC)
        fh.write(struct.pack("<H", MODEL_VERSION))
        cfg = net.config_json().encode()
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        for name in net.store.params:
            fh.write(net.store.params[name].data.astype("<f4").tobytes())
    return path


def load_augnet(path):
    fh, cfg_text = _read_model_header(path, AUG_MAGIC)
    with fh:
        cfg = json.loads(cfg_text)
        net = AugNetwork(cfg["family"], cfg["embed_dim"], cfg["tokens"],
                         seed=cfg.get("seed", 0))
        for name, p in net.store.params.items():
            raw = fh.read(p.data.size * 4)
            if len(raw) != p.data.size * 4:
                raise ValueError(f"truncated network file at parameter {name}")
            p.data = np.frombuffer(raw, dtype="<f4").reshape(p.data.shape).astype(
                net.store.dtype)
    return net
