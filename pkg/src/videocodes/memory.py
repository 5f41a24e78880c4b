"""Past-Future: long-stream recall over compressed codes.

A stream is a sequence of fixed-length chunks stored as codes.  After
observing the first ``t`` chunks, the model is shown a query chunk sampled
from anywhere in the stream (spatially re-cropped so pixel identity cannot
be memorized) and must answer whether it comes from the past (already
observed) or the future.  Three memory designs are compared:

  slot   append-only list of per-chunk vectors; the reader attends over it
  lstm   a single recurrent state updated per chunk (fixed size)
  none   a learned constant, blind to history (chance-level control)

The adapter is a shallow 3D CNN over a chunk's code embedding; the core is
a cross-source transformer block (query token attends over memory); the
predictor is one linear layer producing a scalar logit (past = 1).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import container as cont
from . import nn
from .autodiff import Tensor
from .codec import MODEL_VERSION, DivergenceError, _read_model_header
from .augment import sample_augmentation_params
from .metrics import apply_pixel_transform
from .synthetic import SyntheticSceneSpec, gen_synthetic_stream

MEMORY_KINDS = ("slot", "lstm", "none")
CHUNK_FRAMES = 8
MEM_DIM = 128


@dataclass
class ChunkStream:
    """Ordered, non-overlapping, equal-shape code chunks plus a cursor."""
    chunks: list                      # CodeTensor per chunk
    cursor: int = 0
    embeddings: np.ndarray = None     # optional (T, tt, th, tw, V_e) cache
    query_embeddings: np.ndarray = None

    def __post_init__(self):
        shapes = {tuple(np.asarray(c.indices).shape) for c in self.chunks}
        if len(shapes) > 1:
            raise ValueError(f"chunks disagree on shape: {sorted(shapes)}")

    def __len__(self):
        return len(self.chunks)


@dataclass
class QuerySample:
    """A re-cropped chunk, where it came from, and its past/future label."""
    embedding: np.ndarray
    timestamp: int
    label: int                        # 1 = past (timestamp < cursor)
    cursor: int

    def __post_init__(self):
        if self.label != int(self.timestamp < self.cursor):
            raise ValueError(
                f"label {self.label} contradicts timestamp {self.timestamp} "
                f"vs cursor {self.cursor}")


class PastFutureModel:
    """Adapter + memory + cross-source core + scalar predictor."""

    def __init__(self, memory_kind, embed_channels=64, seed=0,
                 dtype=np.float32, tbptt=1):
        if memory_kind not in MEMORY_KINDS:
            raise ValueError(f"unknown memory kind {memory_kind!r}")
        self.memory_kind = memory_kind
        self.tbptt = tbptt
        self.embed_channels = embed_channels
        self.seed = seed
        self.store = nn.ParamStore(dtype=dtype)
        rng = ad.SeededRng(seed)
        d = MEM_DIM
        self.a1 = nn.Conv3d(self.store, "adapter.c1", rng, embed_channels, 64,
                            (3, 3, 3), stride=(2, 2, 2))
        self.a2 = nn.Conv3d(self.store, "adapter.c2", rng, 64, d,
                            (3, 3, 3), stride=(2, 2, 2))
        if memory_kind == "lstm":
            self.cell = nn.LSTMCell(self.store, "memory.lstm", rng, d, d)
        elif memory_kind == "none":
            self.blank = self.store.create(
                "memory.blank", rng.normal((1, d), scale=0.1, dtype=dtype))
        self.ln_q = nn.LayerNorm(self.store, "core.lnq", d)
        self.ln_m = nn.LayerNorm(self.store, "core.lnm", d)
        self.read = nn.CrossAttention(self.store, "core.read", rng, d, heads=4)
        self.fc1 = nn.Linear(self.store, "core.fc1", rng, d, 2 * d)
        self.fc2 = nn.Linear(self.store, "core.fc2", rng, 2 * d, d)
        self.predictor = nn.Linear(self.store, "predictor", rng, d, 1)

    # -- components ----------------------------------------------------------

    def adapt(self, chunk_embs):
        """Chunk embeddings (B, tt, th, tw, C) -> memory vectors (B, D)."""
        x = chunk_embs if isinstance(chunk_embs, Tensor) else \
            Tensor(np.asarray(chunk_embs, dtype=self.store.dtype))
        h = ad.relu(self.a2(ad.relu(self.a1(x))))
        return ad.mean(h, axis=(1, 2, 3))

    def build_memory(self, stream_embs, cursor, with_grad=False):
        """Memory tensor (M, D) from the first ``cursor`` chunks only.

        slot: one vector per observed chunk; lstm: one recurrent state,
        updated with gradients truncated to the last ``tbptt`` chunks;
        none: the learned constant, regardless of history.
        """
        if self.memory_kind == "none":
            return self.blank
        observed = np.asarray(stream_embs)[:cursor]
        if observed.shape[0] == 0:
            raise ValueError("cursor must be >= 1: nothing observed yet")
        if self.memory_kind == "slot":
            vecs = self.adapt(observed)
            return vecs if with_grad else Tensor(vecs.data)
        # lstm
        d = MEM_DIM
        h = np.zeros((1, d), dtype=self.store.dtype)
        c = np.zeros((1, d), dtype=self.store.dtype)
        t = observed.shape[0]
        keep = t - self.tbptt if with_grad else t
        for i in range(t):
            x = self.adapt(observed[i:i + 1])
            ht, ct = self.cell(x, Tensor(h), Tensor(c))
            if i < keep:
                h, c = ht.data, ct.data
            else:
                h, c = ht, ct
        return h if isinstance(h, Tensor) else Tensor(h)

    def logit(self, memory, query_emb):
        """Scalar past/future logit for one query against a memory."""
        q = self.adapt(np.asarray(query_emb)[None])          # (1, D)
        read = self.read(self.ln_q(q), self.ln_m(memory))
        hcore = q + read
        hcore = hcore + self.fc2(ad.relu(self.fc1(hcore)))
        return ad.reshape(self.predictor(hcore), ())

    def step(self, stream, query):
        """Spec'd single step: memory from stream.chunks[:cursor], one logit.

        ``stream`` needs its ``embeddings`` cache; ``query`` is a
        QuerySample.  Structurally causal: chunks at or beyond the cursor
        never enter the computation.
        """
        if query.timestamp >= len(stream):
            raise ValueError(f"query timestamp {query.timestamp} beyond "
                             f"stream of {len(stream)} chunks")
        memory = self.build_memory(stream.embeddings, stream.cursor)
        return float(self.logit(memory, query.embedding).data)


# -- stream construction -----------------------------------------------------


def make_stream(seed, n_chunks, codec, height=32, width=32, query_rng=None):
    """One synthetic stream compressed chunk-by-chunk.

    Each chunk is CHUNK_FRAMES consecutive frames of a single continuous
    scene; every chunk also gets a re-cropped encoded twin for use as a
    query (crop box drawn from ``query_rng``, default seeded from the
    stream seed).
    """
    spec = SyntheticSceneSpec(seed=seed, frames=n_chunks * CHUNK_FRAMES,
                              height=height, width=width)
    rng = query_rng or np.random.default_rng(seed ^ 0x9E3779B9)
    chunks, embs, qembs = [], [], []
    for t in range(n_chunks):
        frames = gen_synthetic_stream(spec, start=t * CHUNK_FRAMES,
                                      count=CHUNK_FRAMES).astype(np.float32)
        codes = codec.encode(frames)
        chunks.append(codes)
        embs.append(codec.embed_codes(codes.indices))
        crop = sample_augmentation_params("crop", rng, frame_size=height)
        recropped = apply_pixel_transform(frames, crop).astype(np.float32)
        qembs.append(codec.embed_codes(codec.encode(recropped).indices))
    return ChunkStream(chunks=chunks, cursor=0,
                       embeddings=np.stack(embs),
                       query_embeddings=np.stack(qembs))


def sample_query(stream, cursor, rng):
    """Uniform-timestamp query against a given cursor; label by position."""
    ts = int(rng.integers(0, len(stream)))
    return QuerySample(embedding=stream.query_embeddings[ts], timestamp=ts,
                       label=int(ts < cursor), cursor=cursor)


# -- training and evaluation --------------------------------------------------


def train_past_future(streams, memory_kind, steps, lr=1e-3, batch_size=8,
                      seed=0, log_every=0, model=None, eval_streams=None):
    """Train on pre-compressed streams with per-chunk truncated gradients.

    Each step draws ``batch_size`` (stream, cursor, query) samples, each
    loss is binary cross-entropy on the scalar logit, and gradients are
    averaged across the batch.

    Returns (model, history).
    """
    rng = np.random.default_rng(seed)
    if model is None:
        ch = streams[0].embeddings.shape[-1]
        model = PastFutureModel(memory_kind, embed_channels=ch, seed=seed)
    opt = nn.Adam(model.store, lr)
    history = {"loss": [], "accuracy": []}
    for step in range(steps):
        model.store.zero_grad()
        losses = []
        correct = 0
        for _ in range(batch_size):
            s = streams[int(rng.integers(0, len(streams)))]
            cursor = int(rng.integers(1, len(s)))
            q = sample_query(s, cursor, rng)
            memory = model.build_memory(s.embeddings, cursor, with_grad=True)
            logit = model.logit(memory, q.embedding)
            losses.append(nn.bce_with_logits(logit, q.label))
            correct += int((float(logit.data) > 0) == bool(q.label))
        loss = sum(losses[1:], losses[0]) * (1.0 / batch_size)
        if not np.isfinite(loss.data):
            raise DivergenceError(step)
        loss.backward()
        if lr > 0:
            opt.step()
        history["loss"].append(float(loss.data))
        history["accuracy"].append(correct / batch_size)
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}  loss {history['loss'][-1]:.4f}  "
                  f"acc {history['accuracy'][-1]:.3f}")
    return model, history


def eval_past_future(model, streams, samples_per_stream=64, seed=0):
    """Balanced accuracy over fresh queries on held-out streams."""
    rng = np.random.default_rng(seed)
    correct = total = 0
    for s in streams:
        for _ in range(samples_per_stream):
            cursor = int(rng.integers(1, len(s)))
            q = sample_query(s, cursor, rng)
            memory = model.build_memory(s.embeddings, cursor)
            pred = int(float(model.logit(memory, q.embedding).data) > 0)
            correct += int(pred == q.label)
            total += 1
    return correct / total


def eval_length_scaling(model, codec, lengths, streams_per_length=2,
                        samples_per_stream=32, seed=0):
    """Accuracy at several stream lengths (fresh streams per length)."""
    out = {}
    for i, n in enumerate(lengths):
        streams = [make_stream(seed * 10007 + i * 101 + j, n, codec)
                   for j in range(streams_per_length)]
        out[n] = eval_past_future(model, streams, samples_per_stream,
                                  seed=seed + i)
    return out


# -- serialization (CVMM, shares the model framing) ---------------------------

MEM_MAGIC = b"CVMM"


def save_memory_model(model, path):
    cfg = json.dumps({"memory_kind": model.memory_kind,
                      "embed_channels": model.embed_channels,
                      "seed": model.seed, "tbptt": model.tbptt}).encode()
    with open(path, "wb") as fh:
        fh.write(MEM_MAGIC)
        fh.write(struct.pack("<H", MODEL_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        for name in model.store.params:
            fh.write(model.store.params[name].data.astype("<f4").tobytes())
    return path


def load_memory_model(path):
    fh, cfg_text = _read_model_header(path, MEM_MAGIC)
    with fh:
        d = json.loads(cfg_text)
        model = PastFutureModel(d["memory_kind"],
                                embed_channels=d["embed_channels"],
                                seed=d.get("seed", 0), tbptt=d.get("tbptt", 1))
        for name, p in model.store.params.items():
            raw = fh.read(p.data.size * 4)
            if len(raw) != p.data.size * 4:
                raise ValueError(f"truncated model file at parameter {name}")
            p.data = np.frombuffer(raw, dtype="<f4").reshape(p.data.shape).astype(
                model.store.dtype)
    return model


# -- stream manifests ---------------------------------------------------------


def write_stream_manifest(stream, codec, directory, name="stream"):
    """Store a stream as numbered .cvc files plus a text index.

    The manifest lists one chunk per line: path, first frame, frame count.
    """
    os.makedirs(directory, exist_ok=True)
    books = [codec.codebooks[g].data for g in range(codec.config.num_codebooks)]
    manifest = os.path.join(directory, f"{name}.manifest")
    with open(manifest, "w") as fh:
        fh.write(f"# chunk manifest: path\tstart_frame\tframes\n")
        for t, codes in enumerate(stream.chunks):
            fname = f"{name}_{t:05d}.cvc"
            cont.write_container(codes, books, os.path.join(directory, fname))
            fh.write(f"{fname}\t{t * CHUNK_FRAMES}\t{CHUNK_FRAMES}\n")
    return manifest


def read_stream_manifest(manifest, codec=None):
    """Load a manifested stream back into a ChunkStream.

    With a codec, embeddings are rebuilt; codebooks inside the containers
    are ignored in that case (the codec's own tables win).
    """
    base = os.path.dirname(manifest)
    chunks = []
    with open(manifest) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fname, _start, _count = line.split("\t")
            codes, _books = cont.read_container(os.path.join(base, fname))
            chunks.append(codes)
    embs = None
    if codec is not None:
        embs = np.stack([codec.embed_codes(c.indices) for c in chunks])
    return ChunkStream(chunks=chunks, cursor=0, embeddings=embs)
