"""Walkthrough: train a small codec, compress one clip, inspect the file.

Everything here is seeded, so re-running prints the same numbers. The codec
is deliberately tiny (a few hundred steps) — the point is the pipeline, not
the reconstruction quality.
"""

import os
import tempfile

import numpy as np

from videocodes import codec, container, metrics, synthetic

# 1. A seeded dataset of short clips: moving soft shapes over a textured
#    gradient. Labels come along for free but are unused here.
clips, labels, _ = synthetic.make_dataset(seed=0, n_clips=64)
print(f"dataset: {clips.shape}, labels balanced at {labels.mean():.2f}")

# 2. A small codec. The default config maps 8x32x32x3 pixels to an
#    (8,4,4) grid of code positions with two codebooks of 256 entries:
#    128 positions * 2 groups * 8 bits = 2048 bits per clip.
cfg = codec.CodecConfig()
rate = codec.compression_rate((8, 32, 32, 3), cfg)
print(f"analytic compression rate: {rate:.1f}x")

model, curve = codec.train_codec(clips, cfg, steps=120, seed=0)
print(f"trained 120 steps, l1 {curve[0]['l1']:.3f} -> {curve[-1]['l1']:.3f}")

# 3. Compress a clip the codec never saw.
held_out = synthetic.gen_synthetic_stream(synthetic.SyntheticSceneSpec(seed=999))
codes = model.encode(held_out)
print(f"code tensor: {codes.indices.shape}, K={codes.codebook_size}")

with tempfile.TemporaryDirectory() as d:
    path = os.path.join(d, "clip.cvc")
    nbytes = container.write_container(
        codes, [cb.data for cb in model.codebooks], path)
    print(f"container: {nbytes} bytes on disk "
          f"(payload rate {container.measured_rate(path):.1f}x)")

    # 4. Round-trip: the indices come back bit-exact, the pixels only
    #    approximately.
    back, _ = container.read_container(path)
    assert np.array_equal(back.indices, codes.indices)
    recon = model.decode(back)

print(f"reconstruction: psnr {metrics.psnr(held_out, recon):.2f} dB, "
      f"ssim {metrics.ssim(held_out, recon):.3f}")
print("train longer (see the classifier and augmentation demos) for "
      "reconstructions you would actually use.")
