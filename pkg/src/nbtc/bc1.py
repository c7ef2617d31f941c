"""Bit-exact BC1 block encode/decode (4-color mode only).

A BC1 block packs a 4x4 texel tile into 8 bytes: two RGB565 endpoints
followed by sixteen 2-bit interpolation indices.  Every decoded texel is
(1 - alpha) * e0 + alpha * e1 with alpha in {0, 1/3, 2/3, 1}.

This codec never emits 3-color mode (e0_packed <= e1_packed); blocks are
reordered on encode so e0_packed > e1_packed always holds, and 3-color
blocks are rejected on decode.

Byte layout (little-endian throughout):
    bytes 0-1   e0_packed, RGB565 (red in bits 15..11, green 10..5, blue 4..0)
    bytes 2-3   e1_packed
    bytes 4-7   indices; texel (x, y) occupies bits 2*(4*y + x)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

BLOCK_BYTES = 8
BLOCK_DIM = 4

# Interpolation levels k/3; BC1 index order is 0 -> e0, 1 -> e1, 2 -> 1/3,
# 3 -> 2/3, so level k and index are related by the two tables below.
ALPHA_LEVELS = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
LEVEL_TO_INDEX = np.array([0, 2, 3, 1], dtype=np.uint32)
INDEX_TO_LEVEL = np.array([0, 3, 1, 2], dtype=np.int64)

ENDPOINT_BITS = (5, 6, 5)


class BlockFormatError(ValueError):
    """Raised for blocks this codec cannot represent (3-color mode)."""


@dataclass(frozen=True)
class BC1Block:
    """One 8-byte BC1 block in 4-color mode."""

    e0_packed: int
    e1_packed: int
    indices: int

    def to_bytes(self) -> bytes:
        return struct.pack("<HHI", self.e0_packed, self.e1_packed, self.indices)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "BC1Block":
        if len(raw) != BLOCK_BYTES:
            raise BlockFormatError(f"expected {BLOCK_BYTES} bytes, got {len(raw)}")
        e0, e1, idx = struct.unpack("<HHI", raw)
        return cls(e0, e1, idx)


def pack_565(r5: int, g6: int, b5: int) -> int:
    """Pack 5/6/5-bit channel codes into a 16-bit RGB565 word."""
    return ((r5 & 0x1F) << 11) | ((g6 & 0x3F) << 5) | (b5 & 0x1F)


def unpack_565(packed: int) -> tuple[int, int, int]:
    """Split an RGB565 word into its 5/6/5-bit channel codes."""
    return (packed >> 11) & 0x1F, (packed >> 5) & 0x3F, packed & 0x1F


def expand_565(c5: int, c6: int, c5b: int) -> tuple[int, int, int]:
    """Expand 5/6/5-bit channel codes to 8 bits by bit replication.

    5-bit: v8 = (v5 << 3) | (v5 >> 2); 6-bit: v8 = (v6 << 2) | (v6 >> 4).
    Inputs are masked to their bit range.
    """
    r = c5 & 0x1F
    g = c6 & 0x3F
    b = c5b & 0x1F
    return (r << 3) | (r >> 2), (g << 2) | (g >> 4), (b << 3) | (b >> 2)


def _endpoint_rgb01(packed: int) -> np.ndarray:
    r8, g8, b8 = expand_565(*unpack_565(packed))
    return np.array([r8, g8, b8], dtype=np.float64) / 255.0


def decode_block(block: BC1Block) -> np.ndarray:
    """Decode a 4-color-mode block to a (4, 4, 3) float grid in [0, 1].

    Endpoints are 565-expanded by bit replication, normalized, and each
    texel is (1 - alpha) * e0 + alpha * e1 per its 2-bit index.
    """
    if block.e0_packed <= block.e1_packed:
        raise BlockFormatError(
            "3-color-mode block (e0_packed <= e1_packed) is not supported: "
            f"e0=0x{block.e0_packed:04x} e1=0x{block.e1_packed:04x}"
        )
    e0 = _endpoint_rgb01(block.e0_packed)
    e1 = _endpoint_rgb01(block.e1_packed)
    idx = block_indices(block.indices)
    alpha = ALPHA_LEVELS[INDEX_TO_LEVEL[idx]]
    return (1.0 - alpha)[..., None] * e0 + alpha[..., None] * e1


def block_indices(indices_word: int) -> np.ndarray:
    """Unpack a 32-bit index word into a (4, 4) array of 2-bit indices."""
    shifts = 2 * (4 * np.arange(4)[:, None] + np.arange(4)[None, :])
    return (indices_word >> shifts) & 0x3


def pack_indices(idx: np.ndarray) -> int:
    """Pack a (4, 4) array of 2-bit indices into the 32-bit index word."""
    shifts = 2 * (4 * np.arange(4)[:, None] + np.arange(4)[None, :])
    return int(np.sum(idx.astype(np.uint64) << shifts))


def encode_block(
    texels: np.ndarray,
    e0: np.ndarray,
    e1: np.ndarray,
    alphas: np.ndarray,
) -> BC1Block:
    """Pack already-chosen endpoints and per-texel alpha levels into a block.

    This is a packer, not a rate-distortion encoder: `e0`/`e1` must already
    sit on the 565 grid (channel value k / (2^bits - 1)) and `alphas` on the
    {0, 1/3, 2/3, 1} grid.  `texels` documents the intended (4, 4, 3) decode
    and is validated for shape only.  Endpoints are swapped (with the index
    remap 0<->1, 2<->3) whenever needed so the block stays in 4-color mode;
    coincident endpoints trigger the one-blue-code degenerate policy.
    """
    texels = np.asarray(texels, dtype=np.float64)
    if texels.shape != (BLOCK_DIM, BLOCK_DIM, 3):
        raise ValueError(f"texels must be (4, 4, 3), got {texels.shape}")
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (BLOCK_DIM, BLOCK_DIM):
        raise ValueError(f"alphas must be (4, 4), got {alphas.shape}")

    e0c = unit_to_codes(np.asarray(e0, dtype=np.float64))
    e1c = unit_to_codes(np.asarray(e1, dtype=np.float64))
    levels = alpha_to_levels(alphas)

    e0p, e1p, idx_word, _ = encode_grid(
        e0c[None, None, :], e1c[None, None, :], levels[None, None, :, :]
    )
    return BC1Block(int(e0p[0, 0]), int(e1p[0, 0]), int(idx_word[0, 0]))


def unit_to_codes(rgb: np.ndarray) -> np.ndarray:
    """Map [0, 1] channel values to integer 5/6/5 codes (round half away)."""
    scale = np.array([2**b - 1 for b in ENDPOINT_BITS], dtype=np.float64)
    return np.floor(np.clip(rgb, 0.0, 1.0) * scale + 0.5).astype(np.int64)


def codes_to_unit(codes) -> np.ndarray:
    """Inverse of `unit_to_codes`: 5/6/5 codes -> k / (2^bits - 1) values."""
    scale = np.array([2**b - 1 for b in ENDPOINT_BITS], dtype=np.float64)
    return np.asarray(codes, dtype=np.float64) / scale


def alpha_to_levels(alphas: np.ndarray) -> np.ndarray:
    """Map {0, 1/3, 2/3, 1} alpha values to integer levels 0..3."""
    levels = np.floor(np.asarray(alphas) * 3.0 + 0.5).astype(np.int64)
    if np.any(levels < 0) or np.any(levels > 3):
        raise ValueError("alpha values outside [0, 1]")
    return levels


def encode_grid(
    e0_codes: np.ndarray,
    e1_codes: np.ndarray,
    levels: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Vectorized block packer over a (Hb, Wb) grid of blocks.

    Args:
        e0_codes, e1_codes: (Hb, Wb, 3) integer 5/6/5 channel codes.
        levels: (Hb, Wb, 4, 4) integer alpha levels 0..3.

    Returns:
        (e0_packed, e1_packed, index_words, degenerate_count) where the
        packed arrays are (Hb, Wb) uint16/uint32 and every output block
        satisfies e0_packed > e1_packed.

    Coincident endpoints are resolved by nudging e1's blue code down one
    step and pinning the block to alpha level 0 (decode stays exactly e0);
    if blue is already 0 the nudged endpoint is placed as e0 instead and
    the block pins to level 3, which again decodes exactly to the original
    endpoint.
    """
    e0c = np.array(e0_codes, dtype=np.int64, copy=True)
    e1c = np.array(e1_codes, dtype=np.int64, copy=True)
    levels = np.array(levels, dtype=np.int64, copy=True)

    e0p = _pack_565_array(e0c)
    e1p = _pack_565_array(e1c)

    degen = e0p == e1p
    n_degenerate = int(np.count_nonzero(degen))
    if n_degenerate:
        blue_ok = degen & (e1c[..., 2] > 0)
        e1c[blue_ok, 2] -= 1
        levels[blue_ok] = 0

        blue_zero = degen & ~blue_ok
        e1c[blue_zero, 2] += 1
        # Nudged endpoint is now the larger one; place it as e0 and select
        # the original endpoint through alpha level 3.
        tmp = e0c[blue_zero]
        e0c[blue_zero] = e1c[blue_zero]
        e1c[blue_zero] = tmp
        levels[blue_zero] = 3

        e0p = _pack_565_array(e0c)
        e1p = _pack_565_array(e1c)

    swap = e0p < e1p
    if np.any(swap):
        e0p_new = np.where(swap, e1p, e0p)
        e1p_new = np.where(swap, e0p, e1p)
        e0p, e1p = e0p_new, e1p_new
        levels = np.where(swap[..., None, None], 3 - levels, levels)

    indices = LEVEL_TO_INDEX[levels].astype(np.uint64)
    shifts = (2 * (4 * np.arange(4)[:, None] + np.arange(4)[None, :])).astype(np.uint64)
    words = np.sum(indices << shifts, axis=(-2, -1), dtype=np.uint64)

    return (
        e0p.astype(np.uint16),
        e1p.astype(np.uint16),
        words.astype(np.uint32),
        n_degenerate,
    )


def _pack_565_array(codes: np.ndarray) -> np.ndarray:
    return (codes[..., 0] << 11) | (codes[..., 1] << 5) | codes[..., 2]


def unpack_565_array(packed: np.ndarray) -> np.ndarray:
    """Split an array of RGB565 words into (..., 3) channel codes."""
    packed = np.asarray(packed, dtype=np.int64)
    return np.stack(
        [(packed >> 11) & 0x1F, (packed >> 5) & 0x3F, packed & 0x1F], axis=-1
    )


def decode_grid_levels(index_words: np.ndarray) -> np.ndarray:
    """Unpack (Hb, Wb) index words into (Hb, Wb, 4, 4) alpha levels 0..3."""
    words = np.asarray(index_words, dtype=np.uint64)
    shifts = (2 * (4 * np.arange(4)[:, None] + np.arange(4)[None, :])).astype(np.uint64)
    idx = (words[..., None, None] >> shifts) & 0x3
    return INDEX_TO_LEVEL[idx.astype(np.int64)]


def serialize_grid(
    e0_packed: np.ndarray, e1_packed: np.ndarray, index_words: np.ndarray
) -> bytes:
    """Serialize a (Hb, Wb) block grid to row-major 8-byte block records."""
    hb, wb = e0_packed.shape
    rec = np.zeros((hb, wb), dtype=[("e0", "<u2"), ("e1", "<u2"), ("idx", "<u4")])
    rec["e0"] = e0_packed
    rec["e1"] = e1_packed
    rec["idx"] = index_words
    return rec.tobytes()


def parse_grid(raw: bytes, hb: int, wb: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse row-major 8-byte block records back into packed arrays."""
    expected = hb * wb * BLOCK_BYTES
    if len(raw) != expected:
        raise BlockFormatError(f"expected {expected} payload bytes, got {len(raw)}")
    rec = np.frombuffer(raw, dtype=[("e0", "<u2"), ("e1", "<u2"), ("idx", "<u4")])
    rec = rec.reshape(hb, wb)
    return rec["e0"].copy(), rec["e1"].copy(), rec["idx"].copy()
