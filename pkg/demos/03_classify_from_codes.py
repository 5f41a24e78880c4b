"""Walkthrough: train a classifier directly on compressed codes.

The classifier's stem adapts its strides to the input source: pixel clips
get downsampled 8x spatially, code embeddings (already 8x smaller) pass
through at stride 1. Both paths meet at the same post-stem shape, so the
trunk is shared code and accuracy comparisons are apples-to-apples.
"""

import numpy as np

from videocodes import classify, codec, synthetic

# Labeled clips: class = direction of the lead object's horizontal motion.
clips, labels, _ = synthetic.make_dataset(seed=0, n_clips=96)
test_clips, test_labels, _ = synthetic.make_dataset(seed=5000, n_clips=32)

# A quick codec to produce code embeddings (see demo 01).
model, _ = codec.train_codec(clips, codec.CodecConfig(), steps=120, seed=0)


def embed(batch):
    return np.stack([model.embed_codes(model.encode(c).indices) for c in batch])


train_emb, test_emb = embed(clips), embed(test_clips)
print(f"pixels {clips.shape[1:]} -> code embeddings {train_emb.shape[1:]}")

# Same architecture, two sources. Post-stem shapes agree by construction.
px = classify.build_classifier(classify.ClassifierConfig(source="pixels",
                                                         in_channels=3), seed=0)
cd = classify.build_classifier(classify.ClassifierConfig(source="codes"), seed=0)
print(f"post-stem: pixels {px.post_stem_shape((8, 32, 32, 3))} == "
      f"codes {cd.post_stem_shape((8, 4, 4, 64))}")

for name, net, tr, te in [("pixels", px, clips, test_clips),
                          ("codes", cd, train_emb, test_emb)]:
    net, hist = classify.train_classifier(net, tr, labels, steps=150, seed=0)
    acc = (classify.predict(net, te).argmax(1) == test_labels).mean()
    print(f"{name:>6}: train acc {hist['accuracy'][-1]:.2f}, "
          f"test acc {acc:.2f}")

# The payoff: the code path pushes ~64x fewer voxels through the stem.
bpx = classify.bench_forward(px, clips[:4], repeats=20)
bcd = classify.bench_forward(cd, train_emb[:4], repeats=20)
print(f"forward pass: pixels {bpx['mean'] * 1e3:.1f} ms, "
      f"codes {bcd['mean'] * 1e3:.1f} ms "
      f"({bpx['mean'] / bcd['mean']:.1f}x faster on codes)")
