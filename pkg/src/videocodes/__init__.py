"""videocodes: a desk-scale neural video codec toolkit.

Trains a VQ-VAE video codec, stores codes in a bit-exact packed container,
learns latent-space augmentations, and runs classification and long-video
memory tasks directly on the codes.
"""

__version__ = "0.1.0"
