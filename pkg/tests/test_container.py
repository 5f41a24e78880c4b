"""Container format tests: hand bit-packing oracles, round trips, and
structured failure on corruption."""

import math
import struct
import zlib

import numpy as np
import pytest

from videocodes import container as cont
from videocodes.codec import CodeTensor, CorruptCodeError


def pack_by_hand(indices, bits):
    """Bit-level reference packer: one bit at a time, LSB-first."""
    out = bytearray()
    acc = 0
    nacc = 0
    for v in indices:
        for b in range(bits):
            acc |= ((v >> b) & 1) << nacc
            nacc += 1
            if nacc == 8:
                out.append(acc)
                acc = nacc = 0
    if nacc:
        out.append(acc)
    return bytes(out)


def make_codes(rng, k, shape=(4, 4, 4, 2)):
    return CodeTensor(rng.integers(0, k, shape), b"idid1234", k,
                      (shape[0], 32, 32, 3))


def make_books(rng, k, groups=2, dim=8):
    return [rng.normal(size=(k, dim)).astype(np.float32)
            for _ in range(groups)]


class TestBitPacking:
    def test_k2_hand_example(self):
        payload = cont.pack_indices(np.array([1, 0, 1, 1, 0, 0, 0, 0]), 2)
        assert payload == b"\x0d"

    def test_k256_payload_is_one_byte_per_index(self):
        payload = cont.pack_indices(np.zeros(4096, dtype=np.int64), 256)
        assert len(payload) == 4096

    def test_k8192_payload_size(self):
        payload = cont.pack_indices(np.zeros(16384, dtype=np.int64), 8192)
        assert len(payload) == math.ceil(16384 * 13 / 8) == 26624

    def test_matches_hand_packer_all_k(self):
        rng = np.random.default_rng(0)
        for k in (2, 3, 256, 257, 8192):
            bits = cont.index_bits(k)
            idx = rng.integers(0, k, 100)
            assert cont.pack_indices(idx, k) == pack_by_hand(idx, bits)

    def test_unpack_inverts_pack(self):
        rng = np.random.default_rng(1)
        for k in (2, 3, 256, 257, 8192):
            idx = rng.integers(0, k, 999)
            back = cont.unpack_indices(cont.pack_indices(idx, k), 999, k)
            assert np.array_equal(back, idx)

    def test_index_bits(self):
        assert [cont.index_bits(k) for k in (2, 3, 4, 256, 257, 8192)] == \
            [1, 2, 2, 8, 9, 13]

    def test_overrange_index_rejected(self):
        with pytest.raises(CorruptCodeError):
            cont.pack_indices(np.array([4]), 4)


class TestRoundTrip:
    @pytest.mark.parametrize("k", [2, 3, 256, 257, 8192])
    def test_bit_exact(self, k, tmp_path):
        rng = np.random.default_rng(k)
        codes = make_codes(rng, k)
        books = make_books(rng, k)
        path = tmp_path / "t.cvc"
        cont.write_container(codes, books, path)
        back, back_books = cont.read_container(path)
        assert np.array_equal(back.indices, codes.indices)
        assert back.codec_id == codes.codec_id
        assert back.codebook_size == k
        assert back.video_shape == codes.video_shape
        for a, b in zip(books, back_books):
            assert np.array_equal(a, b)

    def test_byte_count_matches_file(self, tmp_path):
        rng = np.random.default_rng(7)
        codes = make_codes(rng, 256)
        path = tmp_path / "t.cvc"
        n = cont.write_container(codes, make_books(rng, 256), path)
        assert path.stat().st_size == n


class TestCorruption:
    def _written(self, tmp_path, k=256):
        rng = np.random.default_rng(3)
        path = tmp_path / "t.cvc"
        cont.write_container(make_codes(rng, k), make_books(rng, k), path)
        return path

    def test_flipped_payload_byte_fails_crc(self, tmp_path):
        path = self._written(tmp_path)
        data = bytearray(path.read_bytes())
        data[-20] ^= 0xFF  # inside the payload
        path.write_bytes(bytes(data))
        with pytest.raises(cont.ChecksumError):
            cont.read_container(path)

    def test_truncation_is_structured(self, tmp_path):
        path = self._written(tmp_path)
        data = path.read_bytes()
        for cut in (3, 30, len(data) // 2, len(data) - 2):
            path.write_bytes(data[:cut])
            with pytest.raises(cont.TruncatedError):
                cont.read_container(path)

    def test_bad_magic(self, tmp_path):
        path = self._written(tmp_path)
        path.write_bytes(b"ZZZZ" + path.read_bytes()[4:])
        with pytest.raises(cont.BadMagicError):
            cont.read_container(path)

    def test_bad_version(self, tmp_path):
        path = self._written(tmp_path)
        data = bytearray(path.read_bytes())
        data[4:6] = struct.pack("<H", 99)
        path.write_bytes(bytes(data))
        with pytest.raises(cont.BadVersionError):
            cont.read_container(path)

    def test_out_of_range_index_detected(self, tmp_path):
        # K=3 at 2 bits: the bit pattern 0b11 decodes to 3, which is invalid
        rng = np.random.default_rng(4)
        path = tmp_path / "t.cvc"
        cont.write_container(make_codes(rng, 3), make_books(rng, 3), path)
        data = bytearray(path.read_bytes())
        payload_n = math.ceil(4 * 4 * 4 * 2 * 2 / 8)
        start = len(data) - 4 - payload_n
        data[start:start + payload_n] = b"\xff" * payload_n
        data[-4:] = struct.pack("<I", zlib.crc32(bytes(data[start:start + payload_n])))
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptCodeError):
            cont.read_container(path)


class TestMeasuredRate:
    def test_desk_scale_rate(self, tmp_path):
        rng = np.random.default_rng(5)
        codes = CodeTensor(rng.integers(0, 256, (8, 4, 4, 2)), b"x" * 8, 256,
                           (8, 32, 32, 3))
        path = tmp_path / "t.cvc"
        cont.write_container(codes, make_books(rng, 256, dim=32), path)
        assert cont.measured_rate(path) == 96.0

    def test_matches_formula_for_pow2_k(self, tmp_path):
        from videocodes.codec import compression_rate
        rng = np.random.default_rng(6)
        for k in (2, 256, 8192):
            codes = make_codes(rng, k)
            path = tmp_path / "t.cvc"
            cont.write_container(codes, make_books(rng, k), path)
            formula = compression_rate((4, 32, 32, 3), code_shape=(4, 4, 4),
                                       num_codebooks=2, codebook_size=k)
            assert cont.measured_rate(path, (4, 32, 32, 3)) == formula

    def test_non_pow2_k_measures_below_formula(self, tmp_path):
        from videocodes.codec import compression_rate
        rng = np.random.default_rng(8)
        for k in (3, 257):
            codes = make_codes(rng, k)
            path = tmp_path / "t.cvc"
            cont.write_container(codes, make_books(rng, k), path)
            formula = compression_rate((4, 32, 32, 3), code_shape=(4, 4, 4),
                                       num_codebooks=2, codebook_size=k)
            assert cont.measured_rate(path, (4, 32, 32, 3)) <= formula
