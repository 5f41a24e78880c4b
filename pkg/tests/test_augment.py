"""Augmentation module tests: spec validation, sampler statistics, shape
preservation, the frozen-codec contract, and serialization."""

import numpy as np
import pytest

from videocodes import augment as A
from videocodes import codec as C
from videocodes import synthetic as S

TINY = C.CodecConfig(spatial_blocks=2, enc_res_blocks=1, dec_res_blocks=1,
                     latent_channels=8, num_codebooks=2, codebook_size=4)


@pytest.fixture(scope="module")
def tiny_codec():
    return C.CodecModel(TINY, seed=0)


@pytest.fixture(scope="module")
def tiny_clips():
    clips, _, _ = S.make_dataset(0, 4, frames=4, height=16, width=16)
    return clips


class TestAugSpec:
    def test_valid_families(self):
        A.AugSpec("flip", (1.0,))
        A.AugSpec("brightness", (0.5,))
        A.AugSpec("crop", (0.0, 0.0, 0.875, 0.875))

    def test_unknown_family(self):
        with pytest.raises(ValueError, match="family"):
            A.AugSpec("zoom", (0.1,))

    def test_wrong_param_count(self):
        with pytest.raises(ValueError, match="parameters"):
            A.AugSpec("flip", (1.0, 0.0))

    def test_crop_box_ordering(self):
        with pytest.raises(ValueError, match="range"):
            A.AugSpec("crop", (0.5, 0.0, 0.2, 0.3))

    def test_crop_box_aspect(self):
        with pytest.raises(ValueError, match="square"):
            A.AugSpec("crop", (0.0, 0.0, 0.5, 0.9))

    def test_scalar_range(self):
        with pytest.raises(ValueError, match=r"\[-1,1\]"):
            A.AugSpec("rotation", (1.5,))

    def test_flip_must_be_binary(self):
        with pytest.raises(ValueError, match="0 or 1"):
            A.AugSpec("flip", (0.5,))


class TestSampler:
    def test_crop_boxes_target_sized_and_in_bounds(self):
        rng = np.random.default_rng(0)
        side = round(A.CROP_FRACTION * 32)
        for _ in range(2000):
            s = A.sample_augmentation_params("crop", rng)
            y0, x0, y1, x1 = s.params
            assert 0.0 <= y0 and y1 <= 1.0 and 0.0 <= x0 and x1 <= 1.0
            assert round((y1 - y0) * 32) == side
            assert round((x1 - x0) * 32) == side

    def test_flip_is_fair(self):
        rng = np.random.default_rng(1)
        draws = [A.sample_augmentation_params("flip", rng).params[0]
                 for _ in range(10000)]
        assert 0.45 <= np.mean(draws) <= 0.55

    def test_scalars_cover_range(self):
        rng = np.random.default_rng(2)
        vals = [A.sample_augmentation_params("brightness", rng).params[0]
                for _ in range(500)]
        assert min(vals) < -0.8 and max(vals) > 0.8

    def test_seeded_sequence_is_stable(self):
        a = [A.sample_augmentation_params("crop", np.random.default_rng(3)).params
             for _ in range(5)]
        b = [A.sample_augmentation_params("crop", np.random.default_rng(3)).params
             for _ in range(5)]
        # same fresh generator, same first draw
        assert a[0] == b[0]


class TestAugNetwork:
    def test_shape_preserved_every_family(self, tiny_codec, tiny_clips):
        codes = tiny_codec.encode(tiny_clips[0])
        rng = np.random.default_rng(0)
        for family in A.FAMILIES:
            net = A.AugNetwork(family, TINY.latent_channels, 4 * 4 * 4, seed=0)
            spec = A.sample_augmentation_params(family, rng, frame_size=16)
            out = A.apply_latent_augmentation(codes, spec, net, tiny_codec)
            assert out.shape == (4, 4, 4, TINY.latent_channels)

    def test_family_mismatch_rejected(self, tiny_codec, tiny_clips):
        codes = tiny_codec.encode(tiny_clips[0])
        net = A.AugNetwork("flip", TINY.latent_channels, 64, seed=0)
        with pytest.raises(ValueError, match="family"):
            A.apply_latent_augmentation(codes, A.AugSpec("brightness", (0.0,)),
                                        net, tiny_codec)

    def test_token_count_mismatch_rejected(self, tiny_codec, tiny_clips):
        codes = tiny_codec.encode(tiny_clips[0])
        net = A.AugNetwork("flip", TINY.latent_channels, 99, seed=0)
        with pytest.raises(ValueError, match="positions"):
            A.apply_latent_augmentation(codes, A.AugSpec("flip", (1.0,)),
                                        net, tiny_codec)

    def test_requantize_returns_valid_codes(self, tiny_codec, tiny_clips):
        codes = tiny_codec.encode(tiny_clips[0])
        net = A.AugNetwork("flip", TINY.latent_channels, 64, seed=0)
        _, new_codes = A.apply_latent_augmentation(
            codes, A.AugSpec("flip", (1.0,)), net, tiny_codec, requantize=True)
        assert new_codes.indices.shape == codes.indices.shape
        assert new_codes.indices.max() < TINY.codebook_size

    def test_conditioning_changes_output(self, tiny_codec, tiny_clips):
        codes = tiny_codec.encode(tiny_clips[0])
        net = A.AugNetwork("brightness", TINY.latent_channels, 64, seed=0)
        a = A.apply_latent_augmentation(codes, A.AugSpec("brightness", (-1.0,)),
                                        net, tiny_codec)
        b = A.apply_latent_augmentation(codes, A.AugSpec("brightness", (1.0,)),
                                        net, tiny_codec)
        assert not np.allclose(a, b)


class TestNaiveFlip:
    def test_involution(self, tiny_codec, tiny_clips):
        codes = tiny_codec.encode(tiny_clips[0])
        twice = A.naive_latent_flip(A.naive_latent_flip(codes))
        assert np.array_equal(twice.indices, codes.indices)

    def test_width_one_is_noop(self):
        idx = np.arange(8).reshape(2, 4, 1, 1)
        assert np.array_equal(A.naive_latent_flip(idx), idx)

    def test_reverses_width(self):
        idx = np.arange(6).reshape(1, 1, 3, 2)
        assert np.array_equal(A.naive_latent_flip(idx), idx[:, :, ::-1, :])


class TestTraining:
    def test_lr_zero_keeps_params(self, tiny_codec, tiny_clips):
        net = A.AugNetwork("flip", TINY.latent_channels, 64, seed=0)
        before = net.store.copy_values()
        A.train_augmentation_network(tiny_codec, "flip", tiny_clips, steps=2,
                                     batch_size=2, lr=0.0, net=net)
        for name, val in before.items():
            assert np.array_equal(val, net.store.params[name].data)

    def test_frozen_codec_tamper_detected(self, tiny_clips):
        codec = C.CodecModel(TINY, seed=0)
        real_adam_step = None

        class Saboteur(A.nn.Adam):
            def step(self, lr=None):
                super().step(lr)
                codec.store.params["enc.s0.b"].data[0] += 1.0

        orig = A.nn.Adam
        A.nn.Adam = Saboteur
        try:
            with pytest.raises(RuntimeError, match="frozen"):
                A.train_augmentation_network(codec, "flip", tiny_clips,
                                             steps=1, batch_size=2)
        finally:
            A.nn.Adam = orig

    def test_seeded_run_reproducible(self, tiny_codec, tiny_clips):
        _, la = A.train_augmentation_network(tiny_codec, "flip", tiny_clips,
                                             steps=3, batch_size=2, seed=4)
        _, lb = A.train_augmentation_network(tiny_codec, "flip", tiny_clips,
                                             steps=3, batch_size=2, seed=4)
        assert la == lb

    def test_loss_decreases(self, tiny_codec, tiny_clips):
        _, losses = A.train_augmentation_network(
            tiny_codec, "brightness", tiny_clips, steps=25, batch_size=4,
            seed=0)
        assert np.mean(losses[-5:]) < np.mean(losses[:5])


class TestSerialization:
    def test_round_trip(self, tmp_path):
        net = A.AugNetwork("crop", 8, 64, seed=2)
        p = tmp_path / "n.cvan"
        A.save_augnet(net, p)
        back = A.load_augnet(p)
        assert back.family == "crop"
        assert back.tokens == net.tokens
        for name in net.store.params:
            assert np.array_equal(net.store.params[name].data,
                                  back.store.params[name].data)

    def test_rejects_codec_model_magic(self, tmp_path):
        p = tmp_path / "n.cvan"
        p.write_bytes(b"CVCM" + b"\0" * 32)
        with pytest.raises(ValueError, match="magic"):
            A.load_augnet(p)
