"""Binary and continuous code primitives.

A binary code is a K-dimensional vector over {-1, +1}, stored bit-packed so
that Hamming arithmetic runs on XOR + popcount over 64-bit words. The
continuous counterpart produced during training is ``tanh(beta * z)``, a plain
float array whose entries live in (-1, 1) and whose signs agree with the
binary code for every bandwidth ``beta > 0``.

Packing layout: bit k of a code is stored in word ``k // 64`` at bit position
``k % 64`` (set bit means +1); words are kept in little-endian order in the
code file so the format is bit-exact across platforms. Unused high bits of the
last word are always zero, which makes equal codes byte-equal.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

WORD_BITS = 64
MAX_CODE_BITS = 4096

CODE_FILE_MAGIC = b"HNBC"
CODE_FILE_VERSION = 1
_CODE_HEADER = struct.Struct("<4sIQI")  # magic, version, count, code length


def word_count(length: int) -> int:
    """Number of 64-bit words needed for a code of ``length`` bits."""
    return (length + WORD_BITS - 1) // WORD_BITS


def _finite_array(z, name: str = "input") -> np.ndarray:
    arr = np.asarray(z, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def scaled_tanh(z, beta: float) -> np.ndarray:
    """Element-wise ``tanh(beta * z)``, the smooth stand-in for the sign step.

    Entries of the result lie in (-1, 1); increasing ``beta`` sharpens the
    curve toward the sign function without ever changing the sign of any
    entry.
    """
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0.0:
        raise ValueError(f"beta must be a positive finite scalar, got {beta!r}")
    return np.tanh(beta * _finite_array(z))


def sign_values(z) -> np.ndarray:
    """Map reals of any shape to {-1, +1} int8, with zero mapping to +1."""
    arr = _finite_array(z)
    return np.where(arr >= 0.0, 1, -1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class BinaryCode:
    """A K-bit code over {-1, +1}, packed LSB-first into 64-bit words."""

    words: np.ndarray
    length: int

    def __post_init__(self):
        if not 1 <= self.length <= MAX_CODE_BITS:
            raise ValueError(
                f"code length must be in [1, {MAX_CODE_BITS}], got {self.length}"
            )
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.shape != (word_count(self.length),):
            raise ValueError(
                f"expected {word_count(self.length)} words for a "
                f"{self.length}-bit code, got shape {words.shape}"
            )
        used = self.length % WORD_BITS
        if used and words[-1] & ~np.uint64((1 << used) - 1):
            raise ValueError("unused high bits of the last word must be zero")
        words.flags.writeable = False
        object.__setattr__(self, "words", words)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryCode):
            return NotImplemented
        return self.length == other.length and bool(
            np.array_equal(self.words, other.words)
        )

    def unpack(self) -> np.ndarray:
        """The code as an int8 vector over {-1, +1}."""
        bits = _unpack_word_rows(self.words[np.newaxis, :], self.length)[0]
        return np.where(bits, 1, -1).astype(np.int8)


def _pack_bit_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean (N, K) matrix into (N, word_count(K)) uint64 rows."""
    n, k = bits.shape
    packed = np.packbits(bits, axis=1, bitorder="little")
    padded = np.zeros((n, word_count(k) * 8), dtype=np.uint8)
    padded[:, : packed.shape[1]] = packed
    return padded.view("<u8").astype(np.uint64, copy=False)


def _unpack_word_rows(words: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`_pack_bit_rows`; returns a boolean (N, length) matrix."""
    le = np.ascontiguousarray(words).astype("<u8").view(np.uint8)
    return np.unpackbits(le, axis=1, bitorder="little")[:, :length].astype(bool)


def pack_values(values) -> BinaryCode:
    """Pack a vector whose entries are exactly -1 or +1."""
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    if not (1 <= arr.size <= MAX_CODE_BITS):
        raise ValueError(f"code length must be in [1, {MAX_CODE_BITS}], got {arr.size}")
    if not np.isin(arr, (-1, 1)).all():
        raise ValueError("code values must be exactly -1 or +1")
    return BinaryCode(_pack_bit_rows((arr > 0)[np.newaxis, :])[0], arr.size)


def binarize(z) -> BinaryCode:
    """Threshold a real vector at zero into a :class:`BinaryCode`.

    Zero maps to +1, so ``binarize`` is total on finite inputs.
    """
    arr = _finite_array(z)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    return pack_values(np.where(arr >= 0.0, 1, -1))


def pack_sign_matrix(values) -> np.ndarray:
    """Pack the signs of each row of a real (N, K) matrix into uint64 words."""
    arr = _finite_array(values)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not 1 <= arr.shape[1] <= MAX_CODE_BITS:
        raise ValueError(f"code length must be in [1, {MAX_CODE_BITS}], got {arr.shape[1]}")
    return _pack_bit_rows(arr >= 0.0)


def unpack_matrix(words: np.ndarray, length: int) -> np.ndarray:
    """Unpack (N, W) uint64 rows into an int8 (N, length) matrix over {-1, +1}."""
    bits = _unpack_word_rows(words, length)
    return np.where(bits, 1, -1).astype(np.int8)


def _check_pair(a: BinaryCode, b: BinaryCode) -> None:
    if not (isinstance(a, BinaryCode) and isinstance(b, BinaryCode)):
        raise TypeError("expected two BinaryCode operands")
    if a.length != b.length:
        raise ValueError(f"code length mismatch: {a.length} vs {b.length}")


def hamming_distance(a: BinaryCode, b: BinaryCode) -> int:
    """Number of differing positions, via XOR + popcount on the packed words."""
    _check_pair(a, b)
    return int(np.bitwise_count(a.words ^ b.words).sum())


def inner_product(a: BinaryCode, b: BinaryCode) -> int:
    """Dot product of two {-1, +1} codes: ``K - 2 * hamming_distance``."""
    _check_pair(a, b)
    return a.length - 2 * hamming_distance(a, b)


def stack_codes(codes) -> tuple[np.ndarray, int]:
    """Stack equal-length codes into an (N, W) uint64 matrix, returning (words, K)."""
    codes = list(codes)
    if not codes:
        raise ValueError("expected at least one code")
    length = codes[0].length
    for c in codes:
        if c.length != length:
            raise ValueError(f"code length mismatch: {c.length} vs {length}")
    return np.stack([c.words for c in codes]), length


def write_code_file(path, words: np.ndarray, code_bits: int) -> None:
    """Write packed codes in the HNBC format (bit-exact across platforms)."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    if words.ndim != 2 or words.shape[1] != word_count(code_bits):
        raise ValueError(
            f"expected an (N, {word_count(code_bits)}) word matrix for "
            f"{code_bits}-bit codes, got shape {words.shape}"
        )
    with open(path, "wb") as fh:
        fh.write(_CODE_HEADER.pack(CODE_FILE_MAGIC, CODE_FILE_VERSION, words.shape[0], code_bits))
        fh.write(words.astype("<u8").tobytes())


def read_code_file(path) -> tuple[np.ndarray, int]:
    """Read an HNBC file, returning the (N, W) uint64 word matrix and K."""
    with open(path, "rb") as fh:
        header = fh.read(_CODE_HEADER.size)
        if len(header) != _CODE_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, count, code_bits = _CODE_HEADER.unpack(header)
        if magic != CODE_FILE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != CODE_FILE_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        if not 1 <= code_bits <= MAX_CODE_BITS:
            raise ValueError(f"{path}: code length {code_bits} out of range")
        body = fh.read()
    w = word_count(code_bits)
    expected = count * w * 8
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(body)}")
    words = np.frombuffer(body, dtype="<u8").astype(np.uint64).reshape(count, w)
    used = code_bits % WORD_BITS
    if used and count and (words[:, -1] & ~np.uint64((1 << used) - 1)).any():
        raise ValueError(f"{path}: nonzero padding bits in last word")
    return words, code_bits
