"""Latent texture stacks: variant layouts, mip chains, and filtered sampling.

A pyramid holds four latent textures whose resolutions are fixed divisors
of the base texture size.  Sampling fetches each texture with bilinear or
trilinear filtering (per-texture LOD offset by its resolution ratio) and
concatenates the four RGB results into the decoder's 12-channel input.

Texel addressing: texel i covers [i/W, (i+1)/W) with its center at
(i + 0.5)/W; coordinates clamp to the edge.  Shifted textures sample at
uv + half a texel of the mip being fetched, in both u and v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qat

NUM_TEXTURES = 4
LATENT_CHANNELS = 3 * NUM_TEXTURES


@dataclass(frozen=True)
class VariantConfig:
    """Resolution divisors and half-texel shift flags for the 4 textures."""

    name: str
    divisors: tuple[tuple[int, int], ...]
    shift_flags: tuple[bool, bool, bool, bool] = (False, True, False, True)

    def resolutions(self, base_w: int, base_h: int) -> list[tuple[int, int]]:
        return [(base_w // dx, base_h // dy) for dx, dy in self.divisors]

    def lod_offsets(self) -> list[float]:
        """Per-texture LOD shift s_k = log2(base_w / w_k)."""
        return [float(np.log2(dx)) for dx, _ in self.divisors]


VARIANT_A = VariantConfig("A", ((1, 1), (1, 1), (2, 2), (2, 2)))
VARIANT_B = VariantConfig("B", ((1, 1), (2, 2), (4, 4), (8, 8)))
VARIANTS = {"A": VARIANT_A, "B": VARIANT_B}


def get_variant(name: str) -> VariantConfig:
    try:
        return VARIANTS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")


def check_base_dims(width: int, height: int) -> None:
    if width % 32 or height % 32 or width <= 0 or height <= 0:
        raise ValueError(
            f"base dimensions must be positive multiples of 32, got {width}x{height}"
        )


class FrozenLatentTexture:
    """Immutable latent texture: decoded mip grids, optionally with the
    BC1 block payload they came from."""

    def __init__(self, grids, shifted=False, blocks=None):
        self.grids = [np.asarray(g, dtype=np.float64) for g in grids]
        self.shifted = bool(shifted)
        self.blocks = blocks  # list of (e0_packed, e1_packed, index_words)

    @property
    def n_mips(self) -> int:
        return len(self.grids)


class TrainableBacking:
    """Mutable latent texture whose grids are re-decoded after each update."""

    def __init__(self, texture: qat.TrainableLatentTexture, shifted: bool):
        self.texture = texture
        self.shifted = bool(shifted)
        self.grids: list[np.ndarray] = []
        self.caches: list[qat.DecodeCache] = []
        self.refresh()

    @property
    def n_mips(self) -> int:
        return self.texture.n_mips

    def refresh(self, quantize: bool = True) -> None:
        self.caches = [
            qat.decode_trainable_cached(self.texture, m, quantize=quantize)
            for m in range(self.texture.n_mips)
        ]
        self.grids = [c.texels for c in self.caches]


class LatentPyramid:
    """Four mip-chained latent textures plus their variant layout."""

    def __init__(self, variant: VariantConfig, base_w: int, base_h: int, textures):
        check_base_dims(base_w, base_h)
        if len(textures) != NUM_TEXTURES:
            raise ValueError(f"expected {NUM_TEXTURES} textures, got {len(textures)}")
        self.variant = variant
        self.base_w = base_w
        self.base_h = base_h
        self.textures = list(textures)

    @classmethod
    def create_trainable(
        cls, variant: VariantConfig, base_w: int, base_h: int, rng: np.random.Generator
    ) -> "LatentPyramid":
        check_base_dims(base_w, base_h)
        textures = [
            TrainableBacking(qat.TrainableLatentTexture(w, h, rng), shifted)
            for (w, h), shifted in zip(
                variant.resolutions(base_w, base_h), variant.shift_flags
            )
        ]
        return cls(variant, base_w, base_h, textures)

    @property
    def is_trainable(self) -> bool:
        return any(isinstance(t, TrainableBacking) for t in self.textures)

    def refresh(self, quantize: bool = True) -> None:
        for t in self.textures:
            if isinstance(t, TrainableBacking):
                t.refresh(quantize=quantize)

    def freeze(self) -> tuple["LatentPyramid", int]:
        """Export trainable textures to BC1 and return (frozen pyramid,
        degenerate block count).  Frozen textures pass through unchanged."""
        frozen = []
        degenerate = 0
        for t in self.textures:
            if isinstance(t, TrainableBacking):
                exported = qat.export_to_bc1(t.texture)
                degenerate += exported.degenerate_blocks
                grids = []
                for m, (e0p, e1p, idx) in enumerate(exported.mips):
                    h, w = t.texture.mips[m].alpha_raw.shape
                    grids.append(qat.decode_block_grid(e0p, e1p, idx, h, w))
                frozen.append(
                    FrozenLatentTexture(grids, shifted=t.shifted, blocks=exported.mips)
                )
            else:
                frozen.append(t)
        return LatentPyramid(self.variant, self.base_w, self.base_h, frozen), degenerate


# ---------------------------------------------------------------------------
# Filtered sampling
# ---------------------------------------------------------------------------


def _bilinear_prepare(h, w, u, v, shifted):
    """Texel indices and fractional weights for bilinear fetch, edge-clamped."""
    if shifted:
        u = u + 0.5 / w
        v = v + 0.5 / h
    x = u * w - 0.5
    y = v * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    ix0 = np.clip(x0, 0, w - 1).astype(np.int64)
    ix1 = np.clip(x0 + 1, 0, w - 1).astype(np.int64)
    iy0 = np.clip(y0, 0, h - 1).astype(np.int64)
    iy1 = np.clip(y0 + 1, 0, h - 1).astype(np.int64)
    return ix0, ix1, iy0, iy1, fx, fy


def _bilinear_gather(grid, prep):
    ix0, ix1, iy0, iy1, fx, fy = prep
    wx = fx[:, None]
    wy = fy[:, None]
    return (
        grid[iy0, ix0] * (1.0 - wx) * (1.0 - wy)
        + grid[iy0, ix1] * wx * (1.0 - wy)
        + grid[iy1, ix0] * (1.0 - wx) * wy
        + grid[iy1, ix1] * wx * wy
    )


def bilinear_batch(grid: np.ndarray, uv: np.ndarray, shifted: bool = False) -> np.ndarray:
    """Bilinear fetch of an (H, W, C) grid at (N, 2) normalized coordinates."""
    uv = np.asarray(uv, dtype=np.float64)
    h, w = grid.shape[:2]
    prep = _bilinear_prepare(h, w, uv[:, 0], uv[:, 1], shifted)
    return _bilinear_gather(grid, prep)


def sample_bilinear(texture, uv, mip: int = 0, shifted=None) -> np.ndarray:
    """Bilinear sample of one texture mip at a single uv; returns its texel
    vector.  `texture` may be a backing object or a raw (H, W, C) grid."""
    if isinstance(texture, np.ndarray):
        grid = texture
        if shifted is None:
            shifted = False
    else:
        grid = texture.grids[mip]
        if shifted is None:
            shifted = texture.shifted
    return bilinear_batch(grid, np.asarray(uv, dtype=np.float64)[None, :], shifted)[0]


def sample_mip_chain(
    grids: list[np.ndarray], uv: np.ndarray, lod: np.ndarray, shifted: bool = False
) -> np.ndarray:
    """Trilinear fetch from a mip chain: bilinear at floor/ceil mips blended
    by the fractional LOD.  `lod` clamps to [0, n_mips - 1]."""
    out, _ = _sample_mip_chain_impl(grids, uv, lod, shifted, want_cache=False)
    return out


@dataclass
class _ChainTap:
    mip: int
    sel: np.ndarray  # sample indices into the batch
    scale: np.ndarray  # trilinear weight per selected sample
    prep: tuple


def _sample_mip_chain_impl(grids, uv, lod, shifted, want_cache):
    uv = np.asarray(uv, dtype=np.float64)
    lod = np.asarray(lod, dtype=np.float64)
    n = uv.shape[0]
    n_mips = len(grids)
    eff = np.clip(lod, 0.0, float(n_mips - 1))
    l0 = np.floor(eff).astype(np.int64)
    t = eff - l0
    l1 = np.minimum(l0 + 1, n_mips - 1)

    channels = grids[0].shape[2]
    out = np.zeros((n, channels), dtype=np.float64)
    taps: list[_ChainTap] = []
    for m in range(n_mips):
        for role_sel, role_w in (
            (l0 == m, 1.0 - t),
            ((l1 == m) & (t > 0.0), t),
        ):
            sel = np.nonzero(role_sel)[0]
            if sel.size == 0:
                continue
            grid = grids[m]
            h, w = grid.shape[:2]
            prep = _bilinear_prepare(h, w, uv[sel, 0], uv[sel, 1], shifted)
            scale = role_w[sel]
            out[sel] += scale[:, None] * _bilinear_gather(grid, prep)
            if want_cache:
                taps.append(_ChainTap(mip=m, sel=sel, scale=scale, prep=prep))
    return out, taps


def sample_latents_batch(
    p: LatentPyramid, uv: np.ndarray, lod: np.ndarray
) -> np.ndarray:
    """Sample all four latent textures -> (N, 12) concatenated channels.

    Texture k is fetched at effective LOD max(0, lod - s_k) in its own mip
    chain, where s_k is the log2 resolution ratio to the base texture.
    """
    out, _ = _sample_latents_impl(p, uv, lod, want_cache=False)
    return out


def _sample_latents_impl(p, uv, lod, want_cache):
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    lod = np.broadcast_to(np.asarray(lod, dtype=np.float64), (uv.shape[0],)).copy()
    offsets = p.variant.lod_offsets()
    n = uv.shape[0]
    out = np.empty((n, LATENT_CHANNELS), dtype=np.float64)
    cache = []
    for k, tex in enumerate(p.textures):
        eff = np.maximum(lod - offsets[k], 0.0)
        vals, taps = _sample_mip_chain_impl(
            tex.grids, uv, eff, tex.shifted, want_cache
        )
        out[:, 3 * k : 3 * k + 3] = vals
        cache.append(taps)
    return out, cache


def sample_latents(p: LatentPyramid, uv, lod: float) -> np.ndarray:
    """Single-sample convenience wrapper around `sample_latents_batch`."""
    return sample_latents_batch(p, np.asarray(uv, dtype=np.float64)[None, :], lod)[0]


def sample_latents_with_cache(p, uv, lod):
    """Batch sampling that also returns the tap cache for `scatter_latent_grads`."""
    return _sample_latents_impl(p, uv, lod, want_cache=True)


def scatter_latent_grads(
    p: LatentPyramid, cache, d_latents: np.ndarray
) -> list[list[np.ndarray]]:
    """Backward of `sample_latents_batch`: distribute (N, 12) gradients onto
    per-texture, per-mip texel-value gradient grids.

    Accumulation uses bincount with a fixed traversal order, so results are
    deterministic for a given batch.
    """
    grads: list[list[np.ndarray]] = []
    for k, tex in enumerate(p.textures):
        tex_grads = [np.zeros_like(g) for g in tex.grids]
        dk = d_latents[:, 3 * k : 3 * k + 3]
        for tap in cache[k]:
            grid = tex.grids[tap.mip]
            h, w, c = grid.shape
            ix0, ix1, iy0, iy1, fx, fy = tap.prep
            g = dk[tap.sel] * tap.scale[:, None]
            wx = fx[:, None]
            wy = fy[:, None]
            acc = tex_grads[tap.mip].ravel()
            for iy, ix, cw in (
                (iy0, ix0, (1.0 - wx) * (1.0 - wy)),
                (iy0, ix1, wx * (1.0 - wy)),
                (iy1, ix0, (1.0 - wx) * wy),
                (iy1, ix1, wx * wy),
            ):
                flat = ((iy * w + ix) * c)[:, None] + np.arange(c)[None, :]
                acc += np.bincount(
                    flat.ravel(), weights=(g * cw).ravel(), minlength=h * w * c
                )
        grads.append(tex_grads)
    return grads


def sample_latents_aniso_batch(
    p: LatentPyramid,
    uv: np.ndarray,
    axis: np.ndarray,
    lod: np.ndarray,
    taps: int,
) -> np.ndarray:
    """Anisotropic fetch: average `taps` isotropic samples spread along the
    footprint's major axis (uv + t * axis for t evenly spaced in [-1/2, 1/2]).

    taps=1 reduces exactly to `sample_latents_batch`.
    """
    if taps < 1:
        raise ValueError("taps must be >= 1")
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    axis = np.asarray(axis, dtype=np.float64)
    if taps == 1:
        return sample_latents_batch(p, uv, lod)
    offsets = np.linspace(-0.5, 0.5, taps)
    acc = np.zeros((uv.shape[0], LATENT_CHANNELS), dtype=np.float64)
    for t in offsets:
        acc += sample_latents_batch(p, uv + t * axis, lod)
    return acc / taps


def sample_latents_aniso(p, uv, axis, lod: float, taps: int) -> np.ndarray:
    return sample_latents_aniso_batch(
        p, np.asarray(uv, dtype=np.float64)[None, :], axis, lod, taps
    )[0]


# ---------------------------------------------------------------------------
# Mip chain construction
# ---------------------------------------------------------------------------


def downsample_box(grid: np.ndarray) -> np.ndarray:
    """Halve both dimensions by 2x2 box averaging (odd edges fold inward)."""
    h, w = grid.shape[:2]
    nh, nw = max(1, h // 2), max(1, w // 2)
    if h == 2 * nh and w == 2 * nw:
        return grid.reshape(nh, 2, nw, 2, -1).mean(axis=(1, 3)).reshape(
            (nh, nw) + grid.shape[2:]
        )
    out = np.empty((nh, nw) + grid.shape[2:], dtype=grid.dtype)
    for yy in range(nh):
        y1 = min(2 * yy + 2, h) if yy < nh - 1 else h
        for xx in range(nw):
            x1 = min(2 * xx + 2, w) if xx < nw - 1 else w
            out[yy, xx] = grid[2 * yy : y1, 2 * xx : x1].mean(axis=(0, 1))
    return out


def build_mip_chain(base: np.ndarray, n_mips: int) -> list[np.ndarray]:
    """Box-filtered mip chain of length `n_mips`, level 0 being `base`."""
    mips = [np.asarray(base, dtype=np.float64)]
    for _ in range(n_mips - 1):
        mips.append(downsample_box(mips[-1]))
    return mips
