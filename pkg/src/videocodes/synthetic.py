"""Seeded synthetic video: moving soft-edged shapes over a textured gradient.

Every frame is a closed-form function of (seed, frame index), so chunked
generation is bit-identical to whole-stream generation and streams can be
hours long without materializing them.

Labels:
  * clip motion class: sign of object 0's horizontal velocity (reversing the
    velocity flips the class);
  * per-frame phase: which half of the frame object 0 currently occupies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SyntheticSceneSpec:
    seed: int
    frames: int = 8
    height: int = 32
    width: int = 32
    num_objects: int = 3
    texture_amp: float = 0.08
    edge_softness: float = 1.1
    _params: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._params is None:
            self._params = _scene_params(self)


def _scene_params(spec):
    """All stochastic choices happen once here, from the seed."""
    gen = np.random.Generator(np.random.PCG64(spec.seed))
    h, w = spec.height, spec.width
    p = {}
    base = gen.uniform(0.3, 0.6, 3)
    p["bg_base"] = base
    p["bg_grad_y"] = gen.uniform(-0.25, 0.25, 3)
    p["bg_grad_x"] = gen.uniform(-0.25, 0.25, 3)
    p["tex_freq"] = gen.uniform(0.3, 0.8, 2)  # cycles per 8 px
    p["tex_phase"] = gen.uniform(0, 2 * np.pi, 3)
    p["tex_drift"] = gen.uniform(-0.15, 0.15)
    objs = []
    margin = max(1.0, 0.09 * min(h, w))
    for j in range(spec.num_objects):
        size = gen.uniform(0.22, 0.38) * min(h, w)
        speed_x = gen.uniform(0.35, 1.1) * (1 if gen.uniform(0, 1) < 0.5 else -1)
        speed_y = gen.uniform(-0.8, 0.8)
        objs.append({
            "kind": "disk" if gen.uniform(0, 1) < 0.5 else "square",
            "size": size,
            "color": gen.uniform(0.0, 1.0, 3),
            "y0": gen.uniform(margin + size / 2, h - margin - size / 2),
            "x0": gen.uniform(margin + size / 2, w - margin - size / 2),
            "vy": speed_y,
            "vx": speed_x,
        })
    p["objects"] = objs
    return p


def _bounce(p0, v, t, lo, hi):
    """Position at time t on a reflecting path inside [lo, hi]."""
    span = hi - lo
    if span <= 0:
        return np.full_like(np.asarray(t, dtype=np.float64), (lo + hi) / 2)
    q = np.mod(p0 - lo + v * np.asarray(t, dtype=np.float64), 2 * span)
    return lo + np.where(q <= span, q, 2 * span - q)


def gen_synthetic_stream(spec, start=0, count=None):
    """Render frames [start, start+count) as a float64 (F, H, W, 3) tensor."""
    count = spec.frames if count is None else count
    h, w = spec.height, spec.width
    p = spec._params
    t = np.arange(start, start + count, dtype=np.float64)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")

    bg = (p["bg_base"][None, None, None, :]
          + p["bg_grad_y"][None, None, None, :] * (yy / h)[None, :, :, None]
          + p["bg_grad_x"][None, None, None, :] * (xx / w)[None, :, :, None])
    fy, fx = p["tex_freq"]
    phase = (2 * np.pi / 8.0) * (fy * yy + fx * xx)[None, :, :, None] \
        + p["tex_phase"][None, None, None, :] \
        + p["tex_drift"] * t[:, None, None, None]
    frames = bg + spec.texture_amp * np.sin(phase)

    for obj in p["objects"]:
        half = obj["size"] / 2.0
        cy = _bounce(obj["y0"], obj["vy"], t, half + 1.0, h - half - 1.0)
        cx = _bounce(obj["x0"], obj["vx"], t, half + 1.0, w - half - 1.0)
        dy = yy[None, :, :] - cy[:, None, None]
        dx = xx[None, :, :] - cx[:, None, None]
        if obj["kind"] == "disk":
            dist = np.sqrt(dy * dy + dx * dx)
        else:
            dist = np.maximum(np.abs(dy), np.abs(dx))
        mask = 1.0 / (1.0 + np.exp((dist - half) / spec.edge_softness))
        frames = frames * (1 - mask[..., None]) + obj["color"][None, None, None, :] * mask[..., None]

    return np.clip(frames, 0.0, 1.0)


def motion_class(spec):
    """Clip-level label: 1 if object 0 moves rightward, else 0."""
    return int(spec._params["objects"][0]["vx"] > 0)


def frame_phase_labels(spec, start=0, count=None):
    """Per-frame label: 0 while object 0 is in the left half, 1 in the right."""
    count = spec.frames if count is None else count
    obj = spec._params["objects"][0]
    half = obj["size"] / 2.0
    t = np.arange(start, start + count, dtype=np.float64)
    cx = _bounce(obj["x0"], obj["vx"], t, half + 1.0, spec.width - half - 1.0)
    return (cx >= spec.width / 2.0).astype(np.int64)


def reversed_spec(spec):
    """Same scene with object 0's velocity reversed (flips the motion class)."""
    import copy
    out = copy.deepcopy(spec)
    out._params["objects"][0]["vx"] *= -1
    out._params["objects"][0]["vy"] *= -1
    return out


def make_dataset(seed, n_clips, frames=8, height=32, width=32, num_objects=3):
    """Seeded clip dataset with motion-class labels; clips are float32."""
    clips = []
    labels = []
    specs = []
    for i in range(n_clips):
        spec = SyntheticSceneSpec(seed=seed * 1000003 + i, frames=frames,
                                  height=height, width=width, num_objects=num_objects)
        clips.append(gen_synthetic_stream(spec).astype(np.float32))
        labels.append(motion_class(spec))
        specs.append(spec)
    return np.stack(clips), np.asarray(labels), specs
