"""The .cvc container: a self-contained on-disk file of neural video codes.

Layout (all scalars little-endian):

    magic     4 bytes   b"CVC1"
    version   u16
    codec_id  8 bytes   hash binding the codes to the codec that made them
    I-dims    4 x u32   input video shape (F, H, W, C)
    T-dims    3 x u32   code tensor shape (T_T, T_H, T_W)
    T_C       u32       codebook groups per position
    K         u32       codebook size
    embed_dim u32       total embedding width across groups
    flags     u32       reserved, zero
    codebooks T_C * K * (embed_dim / T_C) f32
    payload   indices packed at b = ceil(log2 K) bits, row-major
              T_T -> T_H -> T_W -> T_C, LSB-first, zero-padded to a byte
    crc32     u32       CRC32 of the payload bytes

Codebooks travel inside every file, so a container decodes without the
training checkpoint; codec_id still catches decode attempts against the
wrong model.
"""

from __future__ import annotations

import math
import struct
import zlib

import numpy as np

from .codec import CodeTensor, CorruptCodeError

MAGIC = b"CVC1"
VERSION = 1

_HEADER = struct.Struct("<4sH8s4I3I4I")  # magic .. flags


class ContainerError(ValueError):
    """Base class for malformed .cvc files."""


class BadMagicError(ContainerError):
    pass


class BadVersionError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


def index_bits(codebook_size):
    """Bits per stored index: ceil(log2 K), at least 1."""
    if codebook_size < 2:
        raise ValueError(f"codebook size must be >= 2, got {codebook_size}")
    return max((codebook_size - 1).bit_length(), 1)


def pack_indices(indices, codebook_size):
    """Bit-pack an integer array at ceil(log2 K) bits each, LSB-first."""
    b = index_bits(codebook_size)
    flat = np.ascontiguousarray(indices, dtype=np.uint64).reshape(-1)
    if flat.size and int(flat.max()) >= codebook_size:
        raise CorruptCodeError(
            f"index outside [0,{codebook_size}) in code tensor")
    bits = ((flat[:, None] >> np.arange(b, dtype=np.uint64)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_indices(payload, count, codebook_size):
    """Inverse of pack_indices; validates every index against K."""
    b = index_bits(codebook_size)
    need = math.ceil(count * b / 8)
    buf = np.frombuffer(payload, dtype=np.uint8)
    if buf.size < need:
        raise TruncatedError(f"payload holds {buf.size} bytes, need {need}")
    bits = np.unpackbits(buf, bitorder="little", count=count * b)
    vals = bits.reshape(count, b).astype(np.uint64) @ (1 << np.arange(b, dtype=np.uint64))
    if vals.size and int(vals.max()) >= codebook_size:
        raise CorruptCodeError(
            f"unpacked index outside [0,{codebook_size})")
    return vals.astype(np.int64)


def write_container(codes, codebooks, path):
    """Write a CodeTensor plus its codebooks to ``path``; returns byte count.

    ``codebooks`` is a sequence of T_C arrays, each (K, embed_dim / T_C).
    """
    idx = np.asarray(codes.indices)
    if idx.ndim != 4:
        raise ValueError(f"expected (T_T,T_H,T_W,T_C) indices, got {idx.shape}")
    tt, th, tw, tc = idx.shape
    if len(codebooks) != tc:
        raise ValueError(f"{tc} code groups but {len(codebooks)} codebooks")
    k = codes.codebook_size
    books = [np.asarray(cb, dtype="<f4") for cb in codebooks]
    embed_dim = sum(cb.shape[1] for cb in books)
    for cb in books:
        if cb.shape[0] != k:
            raise ValueError(f"codebook has {cb.shape[0]} rows, expected K={k}")
    payload = pack_indices(idx, k)
    header = _HEADER.pack(MAGIC, VERSION, bytes(codes.codec_id),
                          *codes.video_shape, tt, th, tw, tc, k, embed_dim, 0)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            for cb in books:
                fh.write(cb.tobytes())
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))
    except OSError as exc:
        raise OSError(f"writing container {path}: {exc}") from exc
    return _HEADER.size + sum(cb.nbytes for cb in books) + len(payload) + 4


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedError(f"file ends inside {what} "
                             f"({len(data)} of {n} bytes)")
    return data


def read_container(path):
    """Read a .cvc file back into (CodeTensor, codebooks)."""
    with open(path, "rb") as fh:
        raw = _read_exact(fh, _HEADER.size, "header")
        (magic, version, codec_id, f, h, w, c,
         tt, th, tw, tc, k, embed_dim, _flags) = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise BadMagicError(f"not a .cvc container (magic {magic!r})")
        if version != VERSION:
            raise BadVersionError(f"unsupported container version {version}")
        if tc == 0 or embed_dim % tc:
            raise ContainerError(
                f"embed_dim {embed_dim} not divisible by {tc} code groups")
        per = embed_dim // tc
        codebooks = []
        for g in range(tc):
            buf = _read_exact(fh, k * per * 4, f"codebook {g}")
            codebooks.append(np.frombuffer(buf, dtype="<f4").reshape(k, per))
        n = tt * th * tw * tc
        nbytes = math.ceil(n * index_bits(k) / 8)
        payload = _read_exact(fh, nbytes, "payload")
        (crc,) = struct.unpack("<I", _read_exact(fh, 4, "trailer"))
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"payload CRC mismatch in {path}")
    indices = unpack_indices(payload, n, k).reshape(tt, th, tw, tc)
    codes = CodeTensor(indices=indices, codec_id=codec_id,
                       codebook_size=k, video_shape=(f, h, w, c))
    return codes, codebooks


def measured_rate(container_path, input_shape=None):
    """Raw 8-bit RGB bits divided by the packed payload bits of a real file.

    Defaults to the input shape recorded in the container header.
    """
    with open(container_path, "rb") as fh:
        raw = _read_exact(fh, _HEADER.size, "header")
    (magic, version, _cid, f, h, w, c,
     tt, th, tw, tc, k, _ed, _fl) = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagicError(f"not a .cvc container (magic {magic!r})")
    if version != VERSION:
        raise BadVersionError(f"unsupported container version {version}")
    if input_shape is not None:
        f, h, w, c = input_shape
    raw_bits = f * h * w * c * 8
    payload_bits = tt * th * tw * tc * index_bits(k)
    return raw_bits / payload_bits
