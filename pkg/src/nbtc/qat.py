"""Quantization-aware training primitives for latent block textures.

Latent textures are stored as unconstrained real parameters (per-block
endpoints, per-texel alpha) that decode through sigmoid + grid quantization
into exactly the values a BC1 block can hold.  Quantization is trained with
a straight-through estimator: the quantized value is used in the forward
pass while gradients flow as if quantization were the identity, so the
backward pass of the whole decode is, by construction, the backward pass of
the smooth sigmoid + interpolation path.

Also provides the Adam optimizer used for all parameter groups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bc1

ALPHA_BITS = 2
ENDPOINT_BITS = bc1.ENDPOINT_BITS


def quant(x: np.ndarray | float, bits: int) -> np.ndarray | float:
    """Snap [0, 1] values onto the k / (2^bits - 1) grid.

    Rounding is half-away-from-zero so results do not depend on platform
    rounding mode.  Inputs are clamped to [0, 1] first (defensive; decoded
    values are post-sigmoid).  The straight-through gradient of this op is
    exactly 1, see `quant_backward`.
    """
    n = float(2**bits - 1)
    x = np.clip(x, 0.0, 1.0)
    return np.floor(x * n + 0.5) / n


def quant_backward(upstream):
    """Straight-through gradient of `quant`: passes through unchanged."""
    return upstream


_SCALE_565 = np.array([2.0**b - 1.0 for b in ENDPOINT_BITS])


def quant_565(rgb: np.ndarray) -> np.ndarray:
    """Quantize (..., 3) RGB values with the per-channel 5/6/5 pattern."""
    return np.floor(np.clip(rgb, 0.0, 1.0) * _SCALE_565 + 0.5) / _SCALE_565


def code_to_unit(codes: np.ndarray, bits: int) -> np.ndarray:
    """Map integer codes back to their grid value k / (2^bits - 1).

    This is the exact inverse of `quant` on grid points and therefore the
    value mapping used when sampling frozen latent textures, so that frozen
    and trainable backings decode bit-identically.
    """
    return np.asarray(codes, dtype=np.float64) / float(2**bits - 1)


def codes_to_unit_565(codes: np.ndarray) -> np.ndarray:
    """Map (..., 3) integer 5/6/5 codes to their quantization-grid values."""
    out = np.empty(codes.shape, dtype=np.float64)
    for c, bits in enumerate(ENDPOINT_BITS):
        out[..., c] = code_to_unit(codes[..., c], bits)
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def sigmoid_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 - s)


def mip_chain_length(width: int, height: int) -> int:
    """Number of mip levels so the coarsest level is at least 4x4."""
    return int(np.floor(np.log2(min(width, height)))) - 1


def mip_dims(width: int, height: int, level: int) -> tuple[int, int]:
    return max(1, width >> level), max(1, height >> level)


@dataclass
class MipParams:
    """Raw (pre-sigmoid) parameters of one latent mip level."""

    alpha_raw: np.ndarray  # (H, W)
    e0_raw: np.ndarray  # (ceil(H/4), ceil(W/4), 3)
    e1_raw: np.ndarray

    @property
    def arrays(self) -> list[np.ndarray]:
        return [self.alpha_raw, self.e0_raw, self.e1_raw]


class TrainableLatentTexture:
    """A latent texture with one set of raw block parameters per mip level.

    Raw values are unconstrained reals; `decode_trainable` maps them through
    sigmoid + quantization onto the exact value lattice a BC1 block stores.
    """

    def __init__(self, width: int, height: int, rng: np.random.Generator):
        self.width = width
        self.height = height
        self.n_mips = mip_chain_length(width, height)
        self.mips: list[MipParams] = []
        for m in range(self.n_mips):
            w, h = mip_dims(width, height, m)
            hb, wb = -(-h // 4), -(-w // 4)
            self.mips.append(
                MipParams(
                    alpha_raw=rng.uniform(-1.0, 1.0, size=(h, w)),
                    e0_raw=rng.uniform(-1.0, 1.0, size=(hb, wb, 3)),
                    e1_raw=rng.uniform(-1.0, 1.0, size=(hb, wb, 3)),
                )
            )

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for mp in self.mips:
            out.extend(mp.arrays)
        return out


@dataclass
class DecodeCache:
    """Per-mip decode intermediates kept for the backward pass.

    `alpha_s`, `e0_s`, `e1_s` are the smooth (pre-quantization) sigmoid
    values; the backward pass uses them as interpolation cofactors so the
    gradient of the quantized decode equals the smooth-path gradient.
    """

    texels: np.ndarray  # (H, W, 3) quantized decode
    alpha_s: np.ndarray  # (H, W) smooth alpha
    e0_s: np.ndarray  # (Hb, Wb, 3) smooth endpoints
    e1_s: np.ndarray
    alpha_raw: np.ndarray
    e0_raw: np.ndarray
    e1_raw: np.ndarray
    levels: np.ndarray | None = None  # (H, W) quantized alpha levels 0..3


def _blocks_to_texels(block_vals: np.ndarray, h: int, w: int) -> np.ndarray:
    """Broadcast per-block values (Hb, Wb, ...) onto the (h, w, ...) grid."""
    up = np.repeat(np.repeat(block_vals, 4, axis=0), 4, axis=1)
    return up[:h, :w]


def interp_levels(e0_t: np.ndarray, e1_t: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Quantized-lattice interpolation with level-indexed weights.

    Both weights come from the shared {k/3} table (never via 1 - alpha), so
    an endpoint swap with level remap k -> 3-k only commutes the two terms
    of the sum and the result is bit-identical.  Texels whose endpoints
    coincide short-circuit to that endpoint, which keeps blocks hit by the
    degenerate export policy exactly reproducible.
    """
    w0 = bc1.ALPHA_LEVELS[3 - levels][..., None]
    w1 = bc1.ALPHA_LEVELS[levels][..., None]
    out = w0 * e0_t + w1 * e1_t
    eq = np.all(e0_t == e1_t, axis=-1)
    if np.any(eq):
        out[eq] = e0_t[eq]
    return out


def decode_trainable(
    t: TrainableLatentTexture, mip: int, quantize: bool = True
) -> np.ndarray:
    """Decode one mip to its (H, W, 3) texel grid.

    With `quantize=False` the smooth sigmoid values are interpolated
    directly; that path defines the gradients of the quantized path.
    """
    return decode_trainable_cached(t, mip, quantize).texels


def decode_trainable_cached(
    t: TrainableLatentTexture, mip: int, quantize: bool = True
) -> DecodeCache:
    mp = t.mips[mip]
    h, w = mp.alpha_raw.shape
    alpha_s = sigmoid(mp.alpha_raw)
    e0_s = sigmoid(mp.e0_raw)
    e1_s = sigmoid(mp.e1_raw)
    levels = None
    if quantize:
        levels = np.floor(alpha_s * 3.0 + 0.5).astype(np.int64)
        e0_t = _blocks_to_texels(quant_565(e0_s), h, w)
        e1_t = _blocks_to_texels(quant_565(e1_s), h, w)
        texels = interp_levels(e0_t, e1_t, levels)
    else:
        e0_t = _blocks_to_texels(e0_s, h, w)
        e1_t = _blocks_to_texels(e1_s, h, w)
        texels = (1.0 - alpha_s)[..., None] * e0_t + alpha_s[..., None] * e1_t
    return DecodeCache(
        texels=texels,
        alpha_s=alpha_s,
        e0_s=e0_s,
        e1_s=e1_s,
        alpha_raw=mp.alpha_raw,
        e0_raw=mp.e0_raw,
        e1_raw=mp.e1_raw,
        levels=levels,
    )


def texel_grads_to_raw(
    cache: DecodeCache, g_texels: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward of the decode: texel-value gradients -> raw-parameter gradients.

    Interpolation cofactors come from the smooth sigmoid values in `cache`,
    so this is exactly the Jacobian of the unquantized decode path.
    """
    if not np.any(g_texels):
        return (
            np.zeros_like(cache.alpha_raw),
            np.zeros_like(cache.e0_raw),
            np.zeros_like(cache.e1_raw),
        )
    h, w = cache.alpha_s.shape
    e0_t = _blocks_to_texels(cache.e0_s, h, w)
    e1_t = _blocks_to_texels(cache.e1_s, h, w)

    a = cache.alpha_s
    d_alpha = np.sum(g_texels * (e1_t - e0_t), axis=-1) * (a * (1.0 - a))

    w_e0 = g_texels * (1.0 - a)[..., None]
    w_e1 = g_texels * a[..., None]
    d_e0 = _block_sum(w_e0) * (cache.e0_s * (1.0 - cache.e0_s))
    d_e1 = _block_sum(w_e1) * (cache.e1_s * (1.0 - cache.e1_s))
    return d_alpha, d_e0, d_e1


def _block_sum(texel_vals: np.ndarray) -> np.ndarray:
    """Sum (H, W, C) texel values over their 4x4 blocks -> (Hb, Wb, C)."""
    h, w, c = texel_vals.shape
    hb, wb = -(-h // 4), -(-w // 4)
    padded = np.zeros((hb * 4, wb * 4, c), dtype=texel_vals.dtype)
    padded[:h, :w] = texel_vals
    return padded.reshape(hb, 4, wb, 4, c).sum(axis=(1, 3))


@dataclass
class ExportedTexture:
    """BC1 block grids per mip plus degenerate-block accounting."""

    mips: list[tuple[np.ndarray, np.ndarray, np.ndarray]]  # (e0p, e1p, idx) grids
    degenerate_blocks: int


def export_to_bc1(t: TrainableLatentTexture) -> ExportedTexture:
    """Freeze a trainable texture into BC1 block grids, one per mip.

    The freeze is lossless on the value lattice: quantized alphas map to
    exact 2-bit levels and quantized endpoints to exact 5/6/5 codes, so
    decoding the exported blocks on the quantization grid reproduces
    `decode_trainable` bit for bit (coincident-endpoint blocks included,
    via the degenerate policy of `bc1.encode_grid`).
    """
    mips = []
    degenerate = 0
    for m in range(t.n_mips):
        cache = decode_trainable_cached(t, m)
        h, w = cache.alpha_s.shape
        hb, wb = -(-h // 4), -(-w // 4)
        levels = np.zeros((hb * 4, wb * 4), dtype=np.int64)
        levels[:h, :w] = cache.levels
        levels = levels.reshape(hb, 4, wb, 4).transpose(0, 2, 1, 3)

        e0_codes = bc1.unit_to_codes(quant_565(cache.e0_s))
        e1_codes = bc1.unit_to_codes(quant_565(cache.e1_s))
        e0p, e1p, idx, n_deg = bc1.encode_grid(e0_codes, e1_codes, levels)
        degenerate += n_deg
        mips.append((e0p, e1p, idx))
    return ExportedTexture(mips=mips, degenerate_blocks=degenerate)


def decode_block_grid(
    e0_packed: np.ndarray, e1_packed: np.ndarray, index_words: np.ndarray,
    h: int, w: int,
) -> np.ndarray:
    """Decode a frozen block grid on the quantization-grid value mapping.

    Endpoint codes map to k / (2^bits - 1) — the exact values the trainable
    decode produces — rather than the bit-replicated 8-bit expansion used
    for hardware interchange in `bc1.decode_block`.
    """
    e0 = codes_to_unit_565(bc1.unpack_565_array(e0_packed))
    e1 = codes_to_unit_565(bc1.unpack_565_array(e1_packed))
    levels = bc1.decode_grid_levels(index_words)  # (Hb, Wb, 4, 4)

    hb, wb = e0_packed.shape
    levels_t = levels.transpose(0, 2, 1, 3).reshape(hb * 4, wb * 4)[:h, :w]
    e0_t = _blocks_to_texels(e0, h, w)
    e1_t = _blocks_to_texels(e1, h, w)
    return interp_levels(e0_t, e1_t, levels_t)


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter group."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> None:
    """One bias-corrected Adam update, applied to `params` in place."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter/gradient/state length mismatch")
    state.step_count += 1
    t = state.step_count
    corr1 = 1.0 - state.beta1**t
    corr2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        m_hat = m / corr1
        v_hat = v / corr2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
