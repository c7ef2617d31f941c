"""CPU simulator of the tiled neural-decode runtime.

Screens carry a material id (or none) plus uv/lod per pixel.  8x4 pixel
tiles are classified as no-neural, single-MLP, or mixed; mixed-tile pixels
are repacked into groups of up to 32 sharing one decoder, mirroring the
constraint that one batched matrix product serves one weight set.  Batched
decode results splat back to their screen positions, and occupancy
statistics report how full the tiles and repacked groups were.

Repacking uses plain deterministic counters (not atomics), so group
contents and order are reproducible: pixels are gathered tile-major then
row-major and chunked per MLP id in that order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import mlp as mlp_mod
from . import pyramid, utils

TILE_W = 8
TILE_H = 4
TILE_PIXELS = TILE_W * TILE_H

NO_MATERIAL = -1  # per-pixel: no material id
TILE_NO_NEURAL = -1  # tile-class codes; values >= 0 mean SingleNeural(id)
TILE_MIXED = -2

SCREEN_MAGIC = b"SCRN"
SCREEN_VERSION = 1


class ScreenFormatError(ValueError):
    """Raised for malformed screen files."""


class MissingAssetError(ValueError):
    """Raised when a screen references a material id with no loaded asset."""

    def __init__(self, mlp_id: int):
        self.mlp_id = mlp_id
        super().__init__(f"no asset registered for material id {mlp_id}")


@dataclass(frozen=True)
class TileClass:
    """Classification of one 8x4 tile."""

    kind: str  # "no_neural" | "single" | "mixed"
    mlp_id: int | None = None

    @classmethod
    def from_code(cls, code: int) -> "TileClass":
        if code == TILE_NO_NEURAL:
            return cls("no_neural")
        if code == TILE_MIXED:
            return cls("mixed")
        return cls("single", int(code))


class MaterialScreen:
    """Per-pixel material id + uv + lod, padded to whole 8x4 tiles."""

    def __init__(self, material_id, uv, lod):
        material_id = np.asarray(material_id, dtype=np.int64)
        uv = np.asarray(uv, dtype=np.float64)
        lod = np.asarray(lod, dtype=np.float64)
        if material_id.ndim != 2:
            raise ValueError("material_id must be (H, W)")
        h, w = material_id.shape
        if uv.shape != (h, w, 2) or lod.shape != (h, w):
            raise ValueError("uv must be (H, W, 2) and lod (H, W)")
        pad_w = (-w) % TILE_W
        pad_h = (-h) % TILE_H
        if pad_w or pad_h:
            material_id = np.pad(
                material_id, ((0, pad_h), (0, pad_w)), constant_values=NO_MATERIAL
            )
            uv = np.pad(uv, ((0, pad_h), (0, pad_w), (0, 0)))
            lod = np.pad(lod, ((0, pad_h), (0, pad_w)))
        self.material_id = material_id
        self.uv = uv
        self.lod = lod

    @property
    def width(self) -> int:
        return self.material_id.shape[1]

    @property
    def height(self) -> int:
        return self.material_id.shape[0]

    @property
    def tiles_x(self) -> int:
        return self.width // TILE_W

    @property
    def tiles_y(self) -> int:
        return self.height // TILE_H


def classify_a(screen: MaterialScreen) -> np.ndarray:
    """First pass: per-tile class codes (-1 none, -2 mixed, id for single)."""
    ids = screen.material_id.reshape(
        screen.tiles_y, TILE_H, screen.tiles_x, TILE_W
    ).transpose(0, 2, 1, 3).reshape(screen.tiles_y, screen.tiles_x, TILE_PIXELS)
    neural = ids >= 0
    has_neural = neural.any(axis=2)
    big = np.iinfo(np.int64).max
    lo = np.where(neural, ids, big).min(axis=2)
    hi = np.where(neural, ids, -1).max(axis=2)
    codes = np.full((screen.tiles_y, screen.tiles_x), TILE_NO_NEURAL, dtype=np.int64)
    single = has_neural & (lo == hi)
    codes[single] = hi[single]
    codes[has_neural & ~single] = TILE_MIXED
    return codes


@dataclass
class RepackGroup:
    """Up to 32 mixed-tile pixels sharing one MLP id."""

    mlp_id: int
    pixels: np.ndarray  # (n, 2) screen coordinates (y, x)

    @property
    def fill(self) -> float:
        return len(self.pixels) / TILE_PIXELS


def classify_b(screen: MaterialScreen, tile_classes: np.ndarray) -> list[RepackGroup]:
    """Second pass: repack mixed-tile pixels into per-MLP groups of <= 32.

    Pixels are visited tile-major (row-major over tiles) then row-major
    inside each tile; each id's pixel stream is chunked into groups of 32,
    a group filling completely before the next one opens.
    """
    per_id: dict[int, list[np.ndarray]] = {}
    mixed_tiles = np.argwhere(tile_classes == TILE_MIXED)
    for ty, tx in mixed_tiles:
        y0, x0 = ty * TILE_H, tx * TILE_W
        block = screen.material_id[y0 : y0 + TILE_H, x0 : x0 + TILE_W]
        ys, xs = np.nonzero(block >= 0)
        ids = block[ys, xs]
        coords = np.stack([ys + y0, xs + x0], axis=1)
        for mid in np.unique(ids):
            per_id.setdefault(int(mid), []).append(coords[ids == mid])

    groups: list[RepackGroup] = []
    for mid in sorted(per_id):
        stream = np.concatenate(per_id[mid], axis=0)
        for start in range(0, len(stream), TILE_PIXELS):
            groups.append(RepackGroup(mid, stream[start : start + TILE_PIXELS]))
    return groups


@dataclass
class DecodeStats:
    tiles_total: int
    tiles_no_neural: int
    tiles_single: int
    tiles_mixed: int
    repack_groups: int
    decoded_pixels: int
    neural_pixels: int
    mean_single_tile_fill: float
    mean_group_fill: float

    def as_lines(self):
        yield f"tiles_total: {self.tiles_total}"
        yield f"tiles_no_neural: {self.tiles_no_neural}"
        yield f"tiles_single: {self.tiles_single}"
        yield f"tiles_mixed: {self.tiles_mixed}"
        yield f"repack_groups: {self.repack_groups}"
        yield f"decoded_pixels: {self.decoded_pixels}"
        yield f"neural_pixels: {self.neural_pixels}"
        yield f"mean_single_tile_fill: {self.mean_single_tile_fill:.6f}"
        yield f"mean_group_fill: {self.mean_group_fill:.6f}"


def decode_screen(
    screen: MaterialScreen, assets: dict, workers: int | None = None
) -> tuple[np.ndarray, DecodeStats]:
    """Decode all neural pixels into an (H, W, 9) feature buffer plus stats.

    `assets` maps material id -> (LatentPyramid, MLPDecoder).  Every batched
    decoder invocation covers pixels of exactly one id; per-row results are
    independent of batch composition, so the output equals a per-pixel
    decode exactly.  Non-neural pixels stay zero.
    """
    referenced = np.unique(screen.material_id[screen.material_id >= 0])
    for mid in referenced:
        if int(mid) not in assets:
            raise MissingAssetError(int(mid))

    codes = classify_a(screen)
    features = np.zeros((screen.height, screen.width, mlp_mod.OUTPUT_DIM))

    tile_code_per_pixel = np.repeat(np.repeat(codes, TILE_H, axis=0), TILE_W, axis=1)
    single_fills: list[float] = []
    decoded_pixels = 0

    for mid in referenced:
        mid = int(mid)
        mask = (tile_code_per_pixel == mid) & (screen.material_id == mid)
        if not mask.any():
            continue
        ys, xs = np.nonzero(mask)
        _decode_into(features, screen, assets[mid], ys, xs, workers)
        decoded_pixels += len(ys)
    single_tiles = codes >= 0
    if single_tiles.any():
        counts = (
            (screen.material_id.reshape(
                screen.tiles_y, TILE_H, screen.tiles_x, TILE_W
            ) >= 0)
            .transpose(0, 2, 1, 3)
            .reshape(screen.tiles_y, screen.tiles_x, TILE_PIXELS)
            .sum(axis=2)
        )
        single_fills = list(counts[single_tiles] / TILE_PIXELS)

    groups = classify_b(screen, codes)
    by_id: dict[int, list[np.ndarray]] = {}
    for g in groups:
        by_id.setdefault(g.mlp_id, []).append(g.pixels)
    for mid in sorted(by_id):
        coords = np.concatenate(by_id[mid], axis=0)
        _decode_into(features, screen, assets[mid], coords[:, 0], coords[:, 1], workers)
        decoded_pixels += len(coords)

    stats = DecodeStats(
        tiles_total=codes.size,
        tiles_no_neural=int(np.count_nonzero(codes == TILE_NO_NEURAL)),
        tiles_single=int(np.count_nonzero(codes >= 0)),
        tiles_mixed=int(np.count_nonzero(codes == TILE_MIXED)),
        repack_groups=len(groups),
        decoded_pixels=decoded_pixels,
        neural_pixels=int(np.count_nonzero(screen.material_id >= 0)),
        mean_single_tile_fill=float(np.mean(single_fills)) if single_fills else 0.0,
        mean_group_fill=(
            float(np.mean([g.fill for g in groups])) if groups else 0.0
        ),
    )
    return features, stats


def _decode_into(features, screen, asset, ys, xs, workers):
    p, decoder = asset
    uv = screen.uv[ys, xs]
    lod = screen.lod[ys, xs]

    def run(start, stop):
        latents = pyramid.sample_latents_batch(p, uv[start:stop], lod[start:stop])
        return mlp_mod.forward_batch(decoder, latents)

    parts = utils.map_chunks(run, len(ys), workers=workers)
    features[ys, xs] = np.concatenate(parts, axis=0)


def decode_pixel(screen: MaterialScreen, assets: dict, y: int, x: int) -> np.ndarray:
    """Single-pixel reference decode (oracle for the batched path)."""
    mid = int(screen.material_id[y, x])
    if mid < 0:
        raise ValueError(f"pixel ({y}, {x}) has no material")
    if mid not in assets:
        raise MissingAssetError(mid)
    p, decoder = assets[mid]
    latents = pyramid.sample_latents(p, screen.uv[y, x], float(screen.lod[y, x]))
    return mlp_mod.forward(decoder, latents)


# ---------------------------------------------------------------------------
# Screen file I/O: binary (magic SCRN) or whitespace text, auto-detected.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHII")
_RECORD_DTYPE = np.dtype([("id", "<i4"), ("u", "<f4"), ("v", "<f4"), ("lod", "<f4")])


def save_screen(screen: MaterialScreen, path, binary: bool = True) -> None:
    """Write a screen: header (width, height) then id,u,v,lod per pixel."""
    if binary:
        rec = np.empty(screen.height * screen.width, dtype=_RECORD_DTYPE)
        rec["id"] = screen.material_id.ravel()
        rec["u"] = screen.uv[..., 0].ravel()
        rec["v"] = screen.uv[..., 1].ravel()
        rec["lod"] = screen.lod.ravel()
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(SCREEN_MAGIC, SCREEN_VERSION, screen.width, screen.height))
            fh.write(rec.tobytes())
        return
    with open(path, "w") as fh:
        fh.write(f"{screen.width} {screen.height}\n")
        ids = screen.material_id.ravel()
        us = screen.uv[..., 0].ravel()
        vs = screen.uv[..., 1].ravel()
        lods = screen.lod.ravel()
        for i in range(ids.size):
            fh.write(f"{ids[i]} {us[i]:.8g} {vs[i]:.8g} {lods[i]:.8g}\n")


def load_screen(path) -> MaterialScreen:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == SCREEN_MAGIC:
        if len(data) < _HEADER.size:
            raise ScreenFormatError("truncated screen header")
        magic, version, w, h = _HEADER.unpack_from(data, 0)
        if version != SCREEN_VERSION:
            raise ScreenFormatError(f"unsupported screen version {version}")
        expected = _HEADER.size + w * h * _RECORD_DTYPE.itemsize
        if len(data) != expected:
            raise ScreenFormatError(
                f"expected {expected} bytes for {w}x{h} screen, got {len(data)}"
            )
        rec = np.frombuffer(data, dtype=_RECORD_DTYPE, offset=_HEADER.size)
        ids = rec["id"].astype(np.int64).reshape(h, w)
        uv = np.stack([rec["u"], rec["v"]], axis=-1).astype(np.float64).reshape(h, w, 2)
        lod = rec["lod"].astype(np.float64).reshape(h, w)
        return MaterialScreen(ids, uv, lod)

    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ScreenFormatError("not a screen file (bad magic, not text)") from exc
    lines = text.splitlines()
    if not lines:
        raise ScreenFormatError("empty screen file")
    try:
        w, h = (int(v) for v in lines[0].split())
    except ValueError as exc:
        raise ScreenFormatError(f"bad header line: {lines[0]!r}") from exc
    if len(lines) - 1 < w * h:
        raise ScreenFormatError(f"expected {w * h} pixel lines, got {len(lines) - 1}")
    vals = np.loadtxt(lines[1 : 1 + w * h], dtype=np.float64, ndmin=2)
    if vals.shape[1] != 4:
        raise ScreenFormatError("pixel lines must hold: id u v lod")
    ids = vals[:, 0].astype(np.int64).reshape(h, w)
    uv = vals[:, 1:3].reshape(h, w, 2)
    lod = vals[:, 3].reshape(h, w)
    return MaterialScreen(ids, uv, lod)
