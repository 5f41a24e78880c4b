"""Walkthrough: augment a video without ever leaving code space.

The trick: a small transformer edits the code embeddings so that decoding
the edited embedding looks like the pixel-space transform of the original
clip. Once trained, flipping or brightening a stored clip costs one pass
over 128 tokens instead of decode -> edit -> re-encode.
"""

import numpy as np

from videocodes import augment, codec, metrics, synthetic

# A quickly-trained codec (see demo 01 for the slower, better version).
clips, _, _ = synthetic.make_dataset(seed=0, n_clips=64)
cfg = codec.CodecConfig()
model, _ = codec.train_codec(clips, cfg, steps=120, seed=0)

# Train a brightness-editing network against pixel-space oracle targets.
# The codec is frozen; train_augmentation_network checksums it to prove it.
net, losses = augment.train_augmentation_network(
    model, "brightness", clips[:32], steps=60, seed=0)
print(f"brightness net: loss {losses[0]:.4f} -> {losses[-1]:.4f}")

# Apply it to a held-out clip at 1.4x brightness (normalized param 0.8).
clip = synthetic.gen_synthetic_stream(synthetic.SyntheticSceneSpec(seed=777))
codes = model.encode(clip)
spec = augment.AugSpec("brightness", (0.8,))
emb = augment.apply_latent_augmentation(codes, spec, net, model)
got = model.decode_embedding(emb)

# Compare against the exact pixel-space transform of the same clip.
want = metrics.apply_pixel_transform(clip, spec)
base = model.decode(codes)
print(f"latent edit vs pixel oracle: mae {metrics.mae(want, got):.4f}")
print(f"(plain reconstruction vs oracle, for scale: "
      f"mae {metrics.mae(want, base):.4f})")

# The same machinery handles geometric edits. For horizontal flip the
# tempting shortcut -- just reversing the code grid -- is a useful bad
# baseline: positions move but each code still renders unflipped content.
naive = model.decode(augment.naive_latent_flip(codes))
flip = metrics.apply_pixel_transform(clip, augment.AugSpec("flip", (1.0,)))
print(f"naive grid-reversal flip vs oracle: ssim {metrics.ssim(flip, naive):.3f} "
      "(a trained flip network has to beat this)")
