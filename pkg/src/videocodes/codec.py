"""VQ-VAE video codec: strided 3D conv encoder, multi-codebook quantizer,
transposed-conv decoder, training loop, and the compression-rate arithmetic.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor

MODEL_MAGIC = b"CVCM"
MODEL_VERSION = 1

MIN_CHANNELS = 8  # floor for the halving channel schedule at small latent widths
COMMITMENT_BETA = 0.25


class CorruptCodeError(ValueError):
    """Code index out of range for the referenced codebook."""


@dataclass
class CodecConfig:
    spatial_blocks: int = 3          # strided encoder blocks; decoder mirrors this
    enc_res_blocks: int = 2
    dec_res_blocks: int = 2
    latent_channels: int = 64
    num_codebooks: int = 2
    codebook_size: int = 256
    time_strides: tuple = None       # per strided block; 1 = space-only compression
    patching: str = "none"           # "none" | "four_crops"
    frame_channels: int = 3

    def __post_init__(self):
        if self.time_strides is None:
            self.time_strides = (1,) * self.spatial_blocks
        self.time_strides = tuple(self.time_strides)
        if len(self.time_strides) != self.spatial_blocks:
            raise ValueError("time_strides must have one entry per strided block")
        if self.latent_channels % self.num_codebooks:
            raise ValueError(
                f"latent channels {self.latent_channels} not divisible by "
                f"{self.num_codebooks} codebooks")
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be >= 2")
        if self.patching not in ("none", "four_crops"):
            raise ValueError(f"unknown patching mode: {self.patching}")

    @property
    def embed_dim(self):
        return self.latent_channels // self.num_codebooks

    @property
    def spatial_factor(self):
        base = 2 ** self.spatial_blocks
        return base * (2 if self.patching == "four_crops" else 1)

    @property
    def temporal_factor(self):
        return int(np.prod(self.time_strides))

    def code_shape(self, video_shape):
        f, h, w, c = video_shape
        sf, tf = self.spatial_factor, self.temporal_factor
        if h % sf or w % sf:
            raise ShapeError(f"frame size {h}x{w} must be a multiple of {sf}")
        if f % tf:
            raise ShapeError(f"frame count {f} must be a multiple of {tf}")
        if self.patching == "four_crops" and (h % 2 or w % 2):
            raise ShapeError("four_crops patching requires even frame extents")
        return (f // tf, h // sf, w // sf, self.num_codebooks)

    def to_json(self):
        d = asdict(self)
        d["time_strides"] = list(self.time_strides)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["time_strides"] = tuple(d["time_strides"])
        return cls(**d)


@dataclass
class CodeTensor:
    """Integer code indices (T_T, T_H, T_W, T_C) bound to a producing codec."""
    indices: np.ndarray
    codec_id: bytes
    codebook_size: int
    video_shape: tuple

    def __post_init__(self):
        self.indices = np.asarray(self.indices)
        if self.indices.min(initial=0) < 0 or self.indices.max(initial=0) >= self.codebook_size:
            raise CorruptCodeError(
                f"index outside [0,{self.codebook_size}) in code tensor")


def _channel_schedule(latent_channels, blocks):
    """Encoder block output channels: latent/2^(blocks-i-1), floored."""
    return [max(latent_channels >> (blocks - i - 1), MIN_CHANNELS) for i in range(blocks)]


class _ResBlock:
    """Pre-norm residual pair of 1x3x3 convs with an additive skip.

    The channel LayerNorm at the block input keeps activation scales flat
    through arbitrarily deep stacks; without it the additive skips compound
    until the relus die and gradients vanish outright.  Kernels are spatial
    only; temporal mixing happens in the strided stacks, which keeps the
    per-step cost low enough to afford thousands of optimizer steps on CPU.
    """

    def __init__(self, store, name, rng, channels, hidden):
        self.ln = nn.LayerNorm(store, f"{name}.ln", channels)
        self.c1 = nn.Conv3d(store, f"{name}.c1", rng, channels, hidden, (1, 3, 3))
        self.c2 = nn.Conv3d(store, f"{name}.c2", rng, hidden, channels, (1, 3, 3))

    def __call__(self, x):
        return x + self.c2(ad.relu(self.c1(self.ln(x))))


class CodecModel:
    """Encoder, quantizer codebooks, and decoder over a shared ParamStore."""

    def __init__(self, config: CodecConfig, seed=0, dtype=np.float32):
        self.config = config
        self.store = nn.ParamStore(dtype=dtype)
        rng = ad.SeededRng(seed).spawn("codec-init")
        cfg = config
        ve = cfg.latent_channels
        in_ch = cfg.frame_channels * (4 if cfg.patching == "four_crops" else 1)
        self.in_ch = in_ch

        sched = _channel_schedule(ve, cfg.spatial_blocks)
        self.enc_strided = []
        prev = in_ch
        self.enc_norms = []
        for i, (oc, ts) in enumerate(zip(sched, cfg.time_strides)):
            self.enc_strided.append(nn.Conv3d(
                self.store, f"enc.s{i}", rng, prev, oc, (3, 4, 4), (ts, 2, 2)))
            if i < cfg.spatial_blocks - 1:
                self.enc_norms.append(nn.LayerNorm(self.store, f"enc.n{i}", oc))
            prev = oc
        self.enc_res = [_ResBlock(self.store, f"enc.r{i}", rng, ve, ve)
                        for i in range(cfg.enc_res_blocks)]
        # normalizing the latent pins its scale, so the commitment loss
        # cannot drag encoder and codebooks into a constant-output basin
        self.enc_out_norm = nn.LayerNorm(self.store, "enc.out_ln", ve)

        # linear bypass: a space-to-depth patch embedding summed into the
        # latent and a pixel-shuffle projection summed into the decoder
        # output.  Without it the decoder can settle on rendering the scene
        # mean from its biases, at which point the encoder receives exactly
        # zero gradient and training never escapes the background-only basin.
        patch_dim = cfg.temporal_factor * (2 ** cfg.spatial_blocks) ** 2 * in_ch
        self.enc_skip = nn.Linear(self.store, "enc.skip", rng, patch_dim, ve)
        self.dec_skip = nn.Linear(self.store, "dec.skip", rng, ve, patch_dim)

        self.codebooks = [
            self.store.create(f"codebook{i}",
                              rng.spawn(f"cb{i}").normal(
                                  (cfg.codebook_size, cfg.embed_dim), scale=0.5,
                                  dtype=np.float64))
            for i in range(cfg.num_codebooks)
        ]

        self.dec_res = [_ResBlock(self.store, f"dec.r{i}", rng, ve, ve)
                        for i in range(cfg.dec_res_blocks)]
        self.dec_strided = []
        self.dec_norms = []
        prev = ve
        rev_ts = cfg.time_strides[::-1]
        for i in range(cfg.spatial_blocks - 1):
            oc = max(ve >> (i + 1), MIN_CHANNELS)
            self.dec_strided.append(nn.ConvTranspose3d(
                self.store, f"dec.s{i}", rng, prev, oc, (3, 4, 4), (rev_ts[i], 2, 2)))
            self.dec_norms.append(nn.LayerNorm(self.store, f"dec.n{i}", oc))
            prev = oc
        self.dec_strided.append(nn.ConvTranspose3d(
            self.store, f"dec.s{cfg.spatial_blocks - 1}", rng, prev, in_ch,
            (3, 4, 4), (rev_ts[-1], 2, 2)))

    # -- identity ------------------------------------------------------------

    def codec_id(self):
        """Hash binding codes to this codec (config + codebook contents)."""
        h = hashlib.sha256(self.config.to_json().encode())
        for cb in self.codebooks:
            h.update(cb.data.astype("<f4").tobytes())
        return h.digest()[:8]

    def astype(self, dtype):
        self.store.astype(dtype)
        return self

    # -- patching ------------------------------------------------------------

    def _patch(self, x):
        """Quadrant crops concatenated on channels: (B,F,H,W,C)->(B,F,H/2,W/2,4C)."""
        if self.config.patching == "none":
            return x
        b, f, h, w, c = x.shape
        hh, hw = h // 2, w // 2
        quads = [ad.slice_(x, (slice(None), slice(None), slice(y, y + hh),
                               slice(z, z + hw), slice(None)))
                 for y in (0, hh) for z in (0, hw)]
        return ad.concat(quads, axis=-1)

    def _unpatch(self, x):
        if self.config.patching == "none":
            return x
        b, f, hh, hw, c4 = x.shape
        c = c4 // 4
        quads = [ad.slice_(x, (Ellipsis, slice(i * c, (i + 1) * c))) for i in range(4)]
        rows = [ad.concat([quads[0], quads[1]], axis=3),
                ad.concat([quads[2], quads[3]], axis=3)]
        return ad.concat(rows, axis=2)

    # -- forward pieces ------------------------------------------------------

    def _space_to_depth(self, x):
        """(B,F,H,W,C) -> (B,T_T,T_H,T_W, tf*s*s*C) block rearrangement."""
        b, f, h, w, c = x.shape
        tf = self.config.temporal_factor
        s = 2 ** self.config.spatial_blocks
        x = ad.reshape(x, b, f // tf, tf, h // s, s, w // s, s, c)
        x = ad.transpose(x, (0, 1, 3, 5, 2, 4, 6, 7))
        return ad.reshape(x, b, f // tf, h // s, w // s, tf * s * s * c)

    def _depth_to_space(self, y):
        """Inverse of ``_space_to_depth`` (pixel shuffle)."""
        b, t, hh, ww, _ = y.shape
        tf = self.config.temporal_factor
        s = 2 ** self.config.spatial_blocks
        c = self.in_ch
        y = ad.reshape(y, b, t, hh, ww, tf, s, s, c)
        y = ad.transpose(y, (0, 1, 4, 2, 5, 3, 6, 7))
        return ad.reshape(y, b, t * tf, hh * s, ww * s, c)

    def encoder_forward(self, video):
        """(B,F,H,W,C) in [0,1] -> latent (B,T_T,T_H,T_W,V_e)."""
        x = self._patch(video)
        skip = self.enc_skip(self._space_to_depth(x))
        # last strided block stays linear so the latent is not confined to
        # the positive orthant (the codebooks live on both sides of zero)
        for layer, norm in zip(self.enc_strided[:-1], self.enc_norms):
            x = ad.relu(norm(layer(x)))
        x = self.enc_strided[-1](x)
        for block in self.enc_res:
            x = block(x)
        return self.enc_out_norm(x + skip)

    def decoder_forward(self, embedding):
        """Latent-space embedding -> unclamped video tensor."""
        x = embedding
        for block in self.dec_res:
            x = block(x)
        for layer, norm in zip(self.dec_strided[:-1], self.dec_norms):
            x = ad.relu(norm(layer(x)))
        x = self.dec_strided[-1](x)
        x = x + self._depth_to_space(self.dec_skip(embedding))
        return self._unpatch(x)

    def quantize(self, latent):
        """Nearest-neighbour quantization per codebook group.

        Returns (indices int32 (...,T_C), embedded Tensor with straight-through
        gradients, codebook loss, commitment loss).
        """
        cfg = self.config
        data = latent.data
        if not np.isfinite(data).all():
            raise ValueError("non-finite latent passed to quantize")
        ed = cfg.embed_dim
        groups_idx = []
        embedded_parts = []
        cb_terms = []
        commit_terms = []
        for g, cb in enumerate(self.codebooks):
            zg = ad.slice_(latent, (Ellipsis, slice(g * ed, (g + 1) * ed)))
            idx = nearest_codes(zg.data, cb.data)
            groups_idx.append(idx)
            e = ad.gather_rows(cb, idx)
            # decoder consumes the quantized values; gradient passes to encoder
            embedded_parts.append(ad.straight_through(e, zg))
            cb_terms.append(nn.mse_loss(e, zg.data))
            commit_terms.append(ad.mean(ad.square(zg - Tensor(e.data))))
        indices = np.stack(groups_idx, axis=-1).astype(np.int32)
        embedded = ad.concat(embedded_parts, axis=-1)
        cb_loss = sum(cb_terms[1:], cb_terms[0]) * (1.0 / len(cb_terms))
        commit_loss = sum(commit_terms[1:], commit_terms[0]) * (1.0 / len(commit_terms))
        return indices, embedded, cb_loss, commit_loss

    def seed_codebooks(self, clips, seed=0):
        """Re-initialize every codebook from encoder outputs on ``clips``.

        Sampling latent rows (plus a little jitter so duplicates split) puts
        the codes where the data actually lives, which avoids the collapse
        you get when a random init leaves most codes unreachable.
        """
        rng = ad.SeededRng(seed).spawn("codebook-seed")
        x = Tensor(np.asarray(clips, dtype=self.store.dtype))
        latent = self.encoder_forward(x).data
        ed = self.config.embed_dim
        k = self.config.codebook_size
        for g, cb in enumerate(self.codebooks):
            rows = latent[..., g * ed:(g + 1) * ed].reshape(-1, ed)
            pick = rng.integers(0, rows.shape[0], shape=k)
            jitter = rng.normal((k, ed), scale=0.01)
            cb.data[...] = rows[pick].astype(self.store.dtype) + jitter

    def revive_dead_codes(self, used_masks, latent_data, rng):
        """Move codes unused since the last check onto random latent rows.

        ``used_masks`` is one boolean (K,) array per codebook group;
        ``latent_data`` is a recent encoder output.  Returns how many codes
        were moved.
        """
        ed = self.config.embed_dim
        moved = 0
        for g, cb in enumerate(self.codebooks):
            dead = np.flatnonzero(~used_masks[g])
            if dead.size == 0:
                continue
            rows = latent_data[..., g * ed:(g + 1) * ed].reshape(-1, ed)
            pick = rng.integers(0, rows.shape[0], shape=dead.size)
            jitter = rng.normal((dead.size, ed), scale=0.01)
            cb.data[dead] = rows[pick].astype(self.store.dtype) + jitter
            moved += int(dead.size)
        return moved

    # -- public single-clip API ----------------------------------------------

    def encode(self, video):
        """Clip (F,H,W,C) in [0,1] -> CodeTensor."""
        video = np.asarray(video)
        self.config.code_shape(video.shape)  # validates divisibility
        latent = self.encoder_forward(Tensor(video[None].astype(self.store.dtype)))
        indices, _, _, _ = self.quantize(latent)
        return CodeTensor(indices[0], self.codec_id(), self.config.codebook_size,
                          tuple(video.shape))

    def embed_codes(self, indices):
        """Indices (...,T_C) -> embedding array (...,V_e)."""
        idx = np.asarray(indices)
        if idx.min() < 0 or idx.max() >= self.config.codebook_size:
            raise CorruptCodeError(f"index outside [0,{self.config.codebook_size})")
        parts = [self.codebooks[g].data[idx[..., g]]
                 for g in range(self.config.num_codebooks)]
        return np.concatenate(parts, axis=-1).astype(self.store.dtype)

    def decode(self, codes):
        """CodeTensor (or raw index array) -> clip in [0,1]."""
        idx = codes.indices if isinstance(codes, CodeTensor) else np.asarray(codes)
        emb = self.embed_codes(idx)
        out = self.decoder_forward(Tensor(emb[None]))
        return np.clip(out.data[0].astype(np.float64), 0.0, 1.0)

    def decode_embedding(self, embedding, clamp=True):
        """Continuous embedding (T_T,T_H,T_W,V_e) -> clip; bypasses codebooks."""
        arr = embedding.data if isinstance(embedding, Tensor) else np.asarray(embedding)
        out = self.decoder_forward(Tensor(arr[None].astype(self.store.dtype)))
        res = out.data[0].astype(np.float64)
        return np.clip(res, 0.0, 1.0) if clamp else res

    # -- training forward ----------------------------------------------------

    def forward_train(self, batch):
        """Batch (B,F,H,W,C) -> (recon Tensor, total loss Tensor, parts dict)."""
        x = Tensor(np.asarray(batch, dtype=self.store.dtype))
        latent = self.encoder_forward(x)
        indices, embedded, cb_loss, commit_loss = self.quantize(latent)
        self._last_latent = latent.data  # reused for dead-code revival
        recon = self.decoder_forward(embedded)
        rec_loss = nn.l1_loss(recon, x.data)
        total = rec_loss + cb_loss + commit_loss * COMMITMENT_BETA
        parts = {"l1": float(rec_loss.data), "codebook": float(cb_loss.data),
                 "commitment": float(commit_loss.data)}
        return recon, total, parts, indices


def nearest_codes(z, codebook):
    """Exact argmin-l2 indices of ``z`` (..., d) against codebook rows (K, d).

    Distances are computed in float64; ties resolve to the lowest index.
    """
    zf = np.asarray(z, dtype=np.float64)
    cb = np.asarray(codebook, dtype=np.float64)
    flat = zf.reshape(-1, zf.shape[-1])
    d = ((flat * flat).sum(axis=1, keepdims=True)
         - 2.0 * flat @ cb.T
         + (cb * cb).sum(axis=1)[None, :])
    return np.argmin(d, axis=1).reshape(zf.shape[:-1])


class DivergenceError(RuntimeError):
    def __init__(self, step):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step


REVIVE_EVERY = 50


def train_codec(clips, config, steps=1000, batch_size=8, lr=1e-3,
                optimizer="adam", seed=0, log_every=0, warmup_frac=0.3,
                lr_decay="cosine"):
    """Train a codec on (N,F,H,W,C) clips; returns (model, loss curve).

    The first ``warmup_frac`` of the steps train encoder and decoder as a
    continuous autoencoder (pure l1); quantization would otherwise pull the
    untrained encoder into a constant-latent fixed point via the commitment
    term.  At the transition the codebooks are seeded from the now-informative
    encoder outputs, and the remaining steps use the full loss
    (l1 + codebook + beta * commitment), re-seeding codes that go unused for
    ``REVIVE_EVERY`` consecutive steps.  Fully deterministic for a fixed seed.

    With ``lr_decay="cosine"`` the learning rate follows a cosine schedule
    from ``lr`` down to zero over the run; the l1 objective has sign-like
    per-sample gradients, so with a constant rate Adam random-walks at a
    noise floor set by the step size instead of settling.
    """
    clips = np.asarray(clips, dtype=np.float32)
    config.code_shape(clips.shape[1:])
    model = CodecModel(config, seed=seed)
    rng = ad.SeededRng(seed).spawn("codec-batches")
    revive_rng = ad.SeededRng(seed).spawn("codec-revival")
    if optimizer == "adam":
        opt = nn.Adam(model.store, lr)
    elif optimizer == "sgd":
        opt = nn.SGD(model.store, lr)
    else:
        raise ValueError(f"unknown optimizer: {optimizer}")
    warmup = int(steps * warmup_frac)
    curve = []
    n = clips.shape[0]
    used = [np.zeros(config.codebook_size, dtype=bool)
            for _ in range(config.num_codebooks)]
    seeded = False
    for step in range(steps):
        if lr_decay == "cosine":
            opt.lr = nn.cosine_decay(lr, step, steps)
        elif lr_decay != "none":
            raise ValueError(f"unknown lr_decay: {lr_decay}")
        idx = rng.integers(0, n, shape=min(batch_size, n))
        batch = clips[np.asarray(idx)]
        if step >= warmup and not seeded:
            # seed from a pool of clips so the codebooks start spread over
            # the latent distribution rather than a single batch's corner
            pool_rng = ad.SeededRng(seed).spawn("codebook-pool")
            pool = clips[np.asarray(pool_rng.integers(0, n, shape=min(16, n)))]
            model.seed_codebooks(pool, seed=seed)
            seeded = True
        model.store.zero_grad()
        if step < warmup:
            x = Tensor(batch)
            recon = model.decoder_forward(model.encoder_forward(x))
            total = nn.l1_loss(recon, x.data)
            parts = {"l1": float(total.data), "codebook": 0.0,
                     "commitment": 0.0}
        else:
            _, total, parts, indices = model.forward_train(batch)
        loss_val = float(total.data)
        if not math.isfinite(loss_val):
            raise DivergenceError(step)
        total.backward()
        opt.step()
        curve.append({"step": step, "total": loss_val, **parts})
        if log_every and step % log_every == 0:
            print(f"step {step}: total={loss_val:.4f} l1={parts['l1']:.4f}", flush=True)
    return model, curve


# -- compression-rate arithmetic ---------------------------------------------


def compression_rate(input_shape, config=None, code_shape=None,
                     num_codebooks=None, codebook_size=None):
    """Raw-bits / code-bits ratio for 8-bit RGB input.

    Pass either a CodecConfig (code shape derived from the input shape) or an
    explicit (T_T, T_H, T_W) code shape with codebook count and size.
    """
    f, h, w, c = input_shape
    raw_bits = f * h * w * c * math.log2(256)
    if config is not None:
        tt, th, tw, tc = config.code_shape(input_shape)
        k = config.codebook_size
    else:
        tt, th, tw = code_shape
        tc, k = num_codebooks, codebook_size
    return raw_bits / (tt * th * tw * tc * math.log2(k))


def code_payload_bits(code_shape, codebook_size):
    """Bits the packed container payload uses (ceil(log2 K) per index)."""
    n = int(np.prod(code_shape))
    return n * max((codebook_size - 1).bit_length(), 1)


# -- model serialization (CVCM) ----------------------------------------------


def save_model(model, path, magic=MODEL_MAGIC):
    """Versioned binary: magic, version u16, config JSON, params as f32 LE."""
    cfg = model.config.to_json().encode() if hasattr(model.config, "to_json") \
        else json.dumps(model.config).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<H", MODEL_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        for name in model.store.params:  # insertion order == declaration order
            fh.write(model.store.params[name].data.astype("<f4").tobytes())
    return path


def _read_model_header(path, magic):
    fh = open(path, "rb")
    got = fh.read(4)
    if got != magic:
        fh.close()
        raise ValueError(f"bad model magic: {got!r} (expected {magic!r})")
    (version,) = struct.unpack("<H", fh.read(2))
    if version != MODEL_VERSION:
        fh.close()
        raise ValueError(f"unsupported model version {version}")
    (clen,) = struct.unpack("<I", fh.read(4))
    cfg_text = fh.read(clen).decode()
    return fh, cfg_text


def load_model(path):
    fh, cfg_text = _read_model_header(path, MODEL_MAGIC)
    with fh:
        config = CodecConfig.from_json(cfg_text)
        model = CodecModel(config, seed=0)
        for name, p in model.store.params.items():
            raw = fh.read(p.data.size * 4)
            if len(raw) != p.data.size * 4:
                raise ValueError(f"truncated model file at parameter {name}")
            p.data = np.frombuffer(raw, dtype="<f4").reshape(p.data.shape).astype(
                model.store.dtype)
    return model
