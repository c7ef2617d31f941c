"""On-disk formats: the .nbtc asset container and texture-set image I/O.

An .nbtc file is fully self-describing: every payload size follows from
the 30-byte header (base size, variant, decoder shape), and all encoding
is fixed little-endian, so files are platform independent and round-trip
byte-exactly.  See FORMAT.md for the byte-level layout and a worked
example.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import bc1, mlp, pyramid, qat, trainer

MAGIC = b"NBTC"
VERSION = 1
NUM_TEXTURES = pyramid.NUM_TEXTURES

_HEADER = struct.Struct("<4sHIIBBHHB9B")
_VARIANT_TAGS = {"A": 0, "B": 1}
_TAG_VARIANTS = {v: k for k, v in _VARIANT_TAGS.items()}
_ROLE_IDS = {role: i for i, role in enumerate(trainer.CHANNEL_ROLES)}


class ContainerFormatError(ValueError):
    """Raised on malformed .nbtc payloads; carries the failing byte offset."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"at byte {offset}: {message}")


@dataclass
class NbtcFile:
    """In-memory image of one .nbtc container."""

    width: int
    height: int
    variant: str
    hidden_dim: int
    num_hidden_layers: int
    channel_roles: tuple[str, ...]
    mlp_weights: list[np.ndarray]  # float32, (out, in) row-major per layer
    mlp_biases: list[np.ndarray]  # float32, (out,) per layer
    textures: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]]

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [mlp.INPUT_DIM] + [self.hidden_dim] * self.num_hidden_layers + [mlp.OUTPUT_DIM]
        return list(zip(dims[:-1], dims[1:]))

    def mip_layout(self) -> list[list[tuple[int, int]]]:
        """Per texture: per mip (w, h) texel dimensions."""
        cfg = pyramid.get_variant(self.variant)
        layout = []
        for w_k, h_k in cfg.resolutions(self.width, self.height):
            n = qat.mip_chain_length(w_k, h_k)
            layout.append([qat.mip_dims(w_k, h_k, m) for m in range(n)])
        return layout


def save(nf: NbtcFile) -> bytes:
    """Serialize to bytes (fixed little-endian layout)."""
    if nf.variant not in _VARIANT_TAGS:
        raise ValueError(f"unknown variant {nf.variant!r}")
    role_ids = [_ROLE_IDS[r] for r in nf.channel_roles]
    out = bytearray()
    out += _HEADER.pack(
        MAGIC,
        VERSION,
        nf.width,
        nf.height,
        _VARIANT_TAGS[nf.variant],
        NUM_TEXTURES,
        nf.hidden_dim,
        nf.num_hidden_layers,
        len(role_ids),
        *role_ids,
    )
    for (fan_in, fan_out), w, b in zip(nf.layer_dims(), nf.mlp_weights, nf.mlp_biases):
        if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
            raise ValueError(f"layer shape mismatch: {w.shape}, {b.shape}")
        out += np.ascontiguousarray(w, dtype="<f4").tobytes()
        out += np.ascontiguousarray(b, dtype="<f4").tobytes()
    layout = nf.mip_layout()
    for mips, dims in zip(nf.textures, layout):
        if len(mips) != len(dims):
            raise ValueError(f"expected {len(dims)} mips, got {len(mips)}")
        out += struct.pack("<B", len(mips))
        for (e0p, e1p, idx), (w, h) in zip(mips, dims):
            hb, wb = -(-h // 4), -(-w // 4)
            if e0p.shape != (hb, wb):
                raise ValueError(f"block grid shape {e0p.shape} != ({hb}, {wb})")
            out += bc1.serialize_grid(e0p, e1p, idx)
    return bytes(out)


def load(data: bytes) -> NbtcFile:
    """Parse bytes into an NbtcFile, validating sizes against the header."""
    if len(data) < _HEADER.size:
        raise ContainerFormatError(len(data), f"file shorter than {_HEADER.size}-byte header")
    fields = _HEADER.unpack_from(data, 0)
    magic, version, width, height, vtag, n_tex, hidden, n_layers = fields[:8]
    n_channels, role_ids = fields[8], fields[9:]
    if magic != MAGIC:
        raise ContainerFormatError(0, f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerFormatError(4, f"unsupported version {version}")
    if vtag not in _TAG_VARIANTS:
        raise ContainerFormatError(14, f"unknown variant tag {vtag}")
    if n_tex != NUM_TEXTURES:
        raise ContainerFormatError(15, f"expected {NUM_TEXTURES} textures, got {n_tex}")
    if n_channels != len(trainer.CHANNEL_ROLES):
        raise ContainerFormatError(20, f"expected {len(trainer.CHANNEL_ROLES)} channels")
    try:
        roles = tuple(trainer.CHANNEL_ROLES[i] for i in role_ids)
    except IndexError:
        raise ContainerFormatError(21, f"unknown channel role id in {role_ids}")
    try:
        pyramid.check_base_dims(width, height)
    except ValueError as exc:
        raise ContainerFormatError(6, str(exc))

    nf = NbtcFile(
        width=width,
        height=height,
        variant=_TAG_VARIANTS[vtag],
        hidden_dim=hidden,
        num_hidden_layers=n_layers,
        channel_roles=roles,
        mlp_weights=[],
        mlp_biases=[],
        textures=[],
    )

    pos = _HEADER.size
    for fan_in, fan_out in nf.layer_dims():
        need = 4 * (fan_out * fan_in + fan_out)
        if pos + need > len(data):
            raise ContainerFormatError(
                pos, f"truncated MLP payload: need {need} bytes, have {len(data) - pos}"
            )
        w = np.frombuffer(data, dtype="<f4", count=fan_out * fan_in, offset=pos)
        pos += 4 * fan_out * fan_in
        b = np.frombuffer(data, dtype="<f4", count=fan_out, offset=pos)
        pos += 4 * fan_out
        nf.mlp_weights.append(w.reshape(fan_out, fan_in).copy())
        nf.mlp_biases.append(b.copy())

    for k, dims in enumerate(nf.mip_layout()):
        if pos + 1 > len(data):
            raise ContainerFormatError(pos, f"missing mip count for texture {k}")
        (mip_count,) = struct.unpack_from("<B", data, pos)
        pos += 1
        if mip_count != len(dims):
            raise ContainerFormatError(
                pos - 1, f"texture {k}: mip count {mip_count} != derived {len(dims)}"
            )
        mips = []
        for w, h in dims:
            hb, wb = -(-h // 4), -(-w // 4)
            need = hb * wb * bc1.BLOCK_BYTES
            if pos + need > len(data):
                raise ContainerFormatError(
                    pos,
                    f"truncated block payload: need {need} bytes, have {len(data) - pos}",
                )
            mips.append(bc1.parse_grid(data[pos : pos + need], hb, wb))
            pos += need
        nf.textures.append(mips)

    if pos != len(data):
        raise ContainerFormatError(pos, f"{len(data) - pos} trailing bytes")
    return nf


def save_file(nf: NbtcFile, path) -> None:
    Path(path).write_bytes(save(nf))


def load_file(path) -> NbtcFile:
    return load(Path(path).read_bytes())


def from_artifacts(p: pyramid.LatentPyramid, decoder: mlp.MLPDecoder) -> NbtcFile:
    """Build a container from a frozen pyramid and its decoder."""
    textures = []
    for tex in p.textures:
        if not isinstance(tex, pyramid.FrozenLatentTexture) or tex.blocks is None:
            raise ValueError("pyramid must be frozen to BC1 blocks before saving")
        textures.append(tex.blocks)
    return NbtcFile(
        width=p.base_w,
        height=p.base_h,
        variant=p.variant.name,
        hidden_dim=decoder.hidden_dim,
        num_hidden_layers=decoder.num_hidden_layers,
        channel_roles=trainer.CHANNEL_ROLES,
        mlp_weights=[w.astype(np.float32) for w in decoder.weights],
        mlp_biases=[b.astype(np.float32) for b in decoder.biases],
        textures=textures,
    )


def to_artifacts(nf: NbtcFile) -> tuple[pyramid.LatentPyramid, mlp.MLPDecoder]:
    """Reconstruct the frozen pyramid and decoder from a parsed container.

    Decoder weights are stored at 32-bit and promoted to float64 for the
    double-precision inference path.
    """
    cfg = pyramid.get_variant(nf.variant)
    textures = []
    for k, (mips, dims) in enumerate(zip(nf.textures, nf.mip_layout())):
        grids = [
            qat.decode_block_grid(e0p, e1p, idx, h, w)
            for (e0p, e1p, idx), (w, h) in zip(mips, dims)
        ]
        textures.append(
            pyramid.FrozenLatentTexture(grids, shifted=cfg.shift_flags[k], blocks=mips)
        )
    p = pyramid.LatentPyramid(cfg, nf.width, nf.height, textures)
    decoder = mlp.MLPDecoder(
        weights=[w.astype(np.float64) for w in nf.mlp_weights],
        biases=[b.astype(np.float64) for b in nf.mlp_biases],
    )
    return p, decoder


# ---------------------------------------------------------------------------
# Texture-set ingestion and decoded-image export
# ---------------------------------------------------------------------------

MAP_NAMES = ("albedo", "normal", "roughness", "metalness", "ao")
_SCALAR_SLOTS = {"roughness": 6, "metalness": 7, "ao": 8}


def import_texture_set(albedo, normal, roughness, metalness, ao) -> trainer.TextureSet:
    """Load the five 8-bit maps into a 9-channel texture set with mips.

    Albedo and normal contribute three channels each; the scalar maps use
    their (first) channel.  All images must share one resolution, a
    positive multiple of 32 in both dimensions.
    """
    arrays = {}
    size = None
    for name, path in zip(MAP_NAMES, (albedo, normal, roughness, metalness, ao)):
        with Image.open(path) as img:
            if img.mode not in ("L", "LA", "RGB", "RGBA", "P"):
                raise ValueError(f"{name} map {path}: unsupported mode {img.mode} (need 8-bit)")
            arr = np.asarray(img.convert("RGB" if name in ("albedo", "normal") else "L"))
        if size is None:
            size = arr.shape[:2]
        elif arr.shape[:2] != size:
            raise ValueError(
                f"{name} map {path}: resolution {arr.shape[1]}x{arr.shape[0]} does not "
                f"match {size[1]}x{size[0]}"
            )
        arrays[name] = arr.astype(np.float64) / 255.0
    h, w = size
    pyramid.check_base_dims(w, h)

    base = np.empty((h, w, trainer.NUM_CHANNELS))
    base[..., 0:3] = arrays["albedo"]
    base[..., 3:6] = arrays["normal"]
    for name, slot in _SCALAR_SLOTS.items():
        base[..., slot] = arrays[name]
    return trainer.TextureSet(base)


def export_images(features: np.ndarray, out_dir, suffix: str = "") -> list[str]:
    """Write decoded (H, W, 9) features as the five channel-group PNGs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    u8 = np.clip(np.asarray(features) * 255.0 + 0.5, 0.0, 255.0).astype(np.uint8)
    written = []
    groups = [
        ("albedo", u8[..., 0:3], "RGB"),
        ("normal", u8[..., 3:6], "RGB"),
        ("roughness", u8[..., 6], "L"),
        ("metalness", u8[..., 7], "L"),
        ("ao", u8[..., 8], "L"),
    ]
    for name, data, mode in groups:
        path = out_dir / f"{name}{suffix}.png"
        Image.fromarray(data, mode=mode).save(path)
        written.append(str(path))
    return written
