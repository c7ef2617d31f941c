"""Quality metrics and footprint accounting for compressed texture sets.

PSNR is computed over [0, 1] values, jointly across channels for the
aggregate figure and per channel for diagnostics.  Footprints are exact
rationals: latent bits per texel from the variant layout, MLP weights
amortized over the base texel count, against a 72 bits/texel reference
(nine 8-bit channels).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import mlp, pyramid, trainer, utils

PSNR_CAP_DB = 99.0
REFERENCE_BITS_PER_TEXEL = Fraction(8 * trainer.NUM_CHANNELS)  # 72
MIP_CHAIN_FACTOR = Fraction(4, 3)


def psnr(decoded: np.ndarray, reference: np.ndarray) -> float:
    """10*log10(1/MSE) in decibels, capped at 99 dB (identical images)."""
    decoded = np.asarray(decoded, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if decoded.shape != reference.shape:
        raise ValueError(f"shape mismatch: {decoded.shape} vs {reference.shape}")
    mse = float(np.mean((decoded - reference) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


@dataclass(frozen=True)
class FootprintReport:
    """Exact-rational storage accounting for one configuration."""

    variant: str
    width: int
    height: int
    hidden_dim: int
    include_mips: bool
    latent_bits_per_texel: Fraction
    mlp_bits_per_texel: Fraction
    total_bits_per_texel: Fraction
    reference_bits_per_texel: Fraction

    @property
    def latent_compression_ratio(self) -> Fraction:
        return self.reference_bits_per_texel / self.latent_bits_per_texel

    @property
    def total_compression_ratio(self) -> Fraction:
        return self.reference_bits_per_texel / self.total_bits_per_texel


def footprint(
    variant: str,
    width: int,
    height: int,
    hidden_dim: int,
    include_mips: bool = False,
    num_hidden_layers: int = 1,
) -> FootprintReport:
    """Bits/texel and compression ratio versus the 8-bit 9-channel reference.

    Latent cost is 4 bits per texel of each latent texture (BC1), expressed
    per base texel; a 4/3 factor covers the mip chains of both sides when
    `include_mips` is set.  The decoder's 32-bit weights amortize over the
    base texel count.
    """
    cfg = pyramid.get_variant(variant)
    pyramid.check_base_dims(width, height)
    base = Fraction(width * height)
    latent = Fraction(0)
    for w_k, h_k in cfg.resolutions(width, height):
        latent += Fraction(4 * w_k * h_k) / base
    factor = MIP_CHAIN_FACTOR if include_mips else Fraction(1)
    latent *= factor

    dims = [mlp.INPUT_DIM] + [hidden_dim] * num_hidden_layers + [mlp.OUTPUT_DIM]
    n_params = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    mlp_bits = Fraction(32 * n_params) / base

    return FootprintReport(
        variant=cfg.name,
        width=width,
        height=height,
        hidden_dim=hidden_dim,
        include_mips=include_mips,
        latent_bits_per_texel=latent,
        mlp_bits_per_texel=mlp_bits,
        total_bits_per_texel=latent + mlp_bits,
        reference_bits_per_texel=REFERENCE_BITS_PER_TEXEL * factor,
    )


def decode_features(
    p: pyramid.LatentPyramid,
    decoder: mlp.MLPDecoder,
    uv: np.ndarray,
    lod,
    aniso_axis=None,
    taps: int = 1,
    clamp: bool = True,
    workers: int | None = None,
) -> np.ndarray:
    """Decode (N, 9) features at uv/lod, optionally with anisotropic taps."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    lod_arr = np.broadcast_to(np.asarray(lod, dtype=np.float64), (uv.shape[0],))

    def run(start, stop):
        chunk_uv = uv[start:stop]
        chunk_lod = lod_arr[start:stop]
        if aniso_axis is None or taps == 1:
            latents = pyramid.sample_latents_batch(p, chunk_uv, chunk_lod)
        else:
            latents = pyramid.sample_latents_aniso_batch(
                p, chunk_uv, aniso_axis, chunk_lod, taps
            )
        return mlp.forward_batch(decoder, latents)

    parts = utils.map_chunks(run, uv.shape[0], workers=workers)
    out = np.concatenate(parts, axis=0)
    return np.clip(out, 0.0, 1.0) if clamp else out


@dataclass
class EvalReport:
    """Per-channel and aggregate PSNR of a decoded level."""

    lod: float
    taps: int
    per_channel_db: dict[str, float]
    aggregate_db: float


def evaluate_asset(
    p: pyramid.LatentPyramid,
    decoder: mlp.MLPDecoder,
    ts: trainer.TextureSet,
    lod: float = 0.0,
    aniso_axis=None,
    taps: int = 1,
    workers: int | None = None,
) -> EvalReport:
    """Decode every texel of the LOD's grid and report PSNR vs the reference.

    With `aniso_axis`/`taps` set, both the decoded output and the reference
    are filtered with the same tap rule, so the comparison isolates the
    decoder's behavior under anisotropic footprints.
    """
    level = int(np.clip(np.floor(lod), 0, ts.n_mips - 1))
    h, w = ts.mips[level].shape[:2]
    uv = utils.texel_center_grid(w, h)

    decoded = decode_features(
        p, decoder, uv, lod, aniso_axis=aniso_axis, taps=taps, workers=workers
    )

    if aniso_axis is None or taps == 1:
        refs = trainer.reference_fetch_batch(ts, uv, lod)
    else:
        offsets = np.linspace(-0.5, 0.5, taps)
        axis = np.asarray(aniso_axis, dtype=np.float64)
        refs = np.zeros((uv.shape[0], trainer.NUM_CHANNELS))
        for t in offsets:
            refs += trainer.reference_fetch_batch(ts, uv + t * axis, lod)
        refs /= taps

    per_channel = {
        role: psnr(decoded[:, c], refs[:, c])
        for c, role in enumerate(trainer.CHANNEL_ROLES)
    }
    return EvalReport(
        lod=float(lod),
        taps=taps,
        per_channel_db=per_channel,
        aggregate_db=psnr(decoded, refs),
    )


def evaluate_per_lod(p, decoder, ts, lods=None, workers=None) -> list[EvalReport]:
    if lods is None:
        lods = range(ts.n_mips)
    return [evaluate_asset(p, decoder, ts, lod=float(l), workers=workers) for l in lods]


def report_lines(reports: list[EvalReport]):
    """Structured `key: value` text for one or more evaluation reports."""
    multi = len(reports) > 1
    for rep in reports:
        prefix = f"lod{rep.lod:g}." if multi else ""
        yield f"{prefix}lod: {rep.lod:g}"
        yield f"{prefix}taps: {rep.taps}"
        for role, db in rep.per_channel_db.items():
            yield f"{prefix}psnr.{role}: {db:.4f}"
        yield f"{prefix}psnr.aggregate: {rep.aggregate_db:.4f}"
    if multi:
        mean = float(np.mean([r.aggregate_db for r in reports]))
        yield f"psnr.aggregate_mean_over_lods: {mean:.4f}"


def write_report_csv(reports: list[EvalReport], path) -> None:
    """Machine-readable table: one row per (lod, channel) plus aggregates."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lod", "taps", "channel", "psnr_db"])
        for rep in reports:
            for role, db in rep.per_channel_db.items():
                writer.writerow([f"{rep.lod:g}", rep.taps, role, f"{db:.6f}"])
            writer.writerow([f"{rep.lod:g}", rep.taps, "aggregate", f"{rep.aggregate_db:.6f}"])


def write_report_figures(reports: list[EvalReport], out_dir) -> list[str]:
    """Render the report as PNG figures next to the CSV output.

    Always writes a per-channel PSNR bar chart for the finest evaluated
    level; adds a PSNR-vs-LOD curve when several levels were evaluated.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    rep = reports[0]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    roles = list(rep.per_channel_db)
    values = [rep.per_channel_db[r] for r in roles]
    ax.bar(range(len(roles)), values, color="#4878a8")
    ax.axhline(rep.aggregate_db, color="#a84848", ls="--", lw=1,
               label=f"aggregate {rep.aggregate_db:.2f} dB")
    ax.set_xticks(range(len(roles)), roles, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"Per-channel PSNR at LOD {rep.lod:g}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "psnr_per_channel.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(str(path))

    if len(reports) > 1:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        lods = [r.lod for r in reports]
        ax.plot(lods, [r.aggregate_db for r in reports], "o-", label="aggregate")
        ax.set_xlabel("LOD")
        ax.set_ylabel("PSNR (dB)")
        ax.set_title("PSNR across the mip chain")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / "psnr_vs_lod.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(str(path))
    return written
