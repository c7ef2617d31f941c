"""Command-line interface: compress, decompress, eval, tilesim.

Exit codes: 0 success, 1 bad input or usage, 2 training divergence,
3 I/O failure.  All commands are deterministic for a fixed --seed.
The NBTC_THREADS environment variable caps decode worker count (0 = auto).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import container, eval as eval_mod, pyramid, tilesim, trainer, utils

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_DIVERGED = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _add_map_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    for name in container.MAP_NAMES:
        p.add_argument(f"--{name}", required=required, help=f"{name} map image (8-bit)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nbtc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", parents=[], help="train and write an .nbtc asset")
    _add_map_flags(p)
    p.add_argument("--variant", choices=["A", "B"], default="A")
    p.add_argument("--hidden-dim", type=int, choices=[16, 32, 64], default=32)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch-size", type=int, default=2**14)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .nbtc path")
    p.add_argument("--log", help="optional training-log path (step loss lr lr)")

    p = sub.add_parser("decompress", help="decode an .nbtc asset to images")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--lod", type=float, default=0.0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--aniso", help="anisotropic axis as 'du,dv' in uv units")
    p.add_argument("--taps", type=int, default=1)

    p = sub.add_parser("eval", help="PSNR report of an asset vs reference maps")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument(
        "--reference",
        nargs=5,
        required=True,
        metavar=("ALBEDO", "NORMAL", "ROUGHNESS", "METALNESS", "AO"),
        help="the five reference maps",
    )
    p.add_argument("--per-lod", action="store_true", help="evaluate every mip level")
    p.add_argument("--out-dir", help="write report.txt, report.csv and figures here")

    p = sub.add_parser("tilesim", help="tile-classified decode of a material screen")
    p.add_argument("--screen", required=True)
    p.add_argument(
        "--assets",
        nargs="+",
        required=True,
        metavar="ID=FILE",
        help="material id to .nbtc mappings, e.g. 0=rock.nbtc 1=bark.nbtc",
    )
    p.add_argument("--stats", required=True, help="output path for the stats text")
    p.add_argument("--features", default="features.npy", help="feature-buffer .npy path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        handler = {
            "compress": _cmd_compress,
            "decompress": _cmd_decompress,
            "eval": _cmd_eval,
            "tilesim": _cmd_tilesim,
        }[args.command]
        return handler(args)
    except trainer.TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, container.ContainerFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def _load_reference(args_or_paths) -> trainer.TextureSet:
    if isinstance(args_or_paths, argparse.Namespace):
        paths = [getattr(args_or_paths, name) for name in container.MAP_NAMES]
    else:
        paths = list(args_or_paths)
    return container.import_texture_set(*paths)


def _cmd_compress(args) -> int:
    ts = _load_reference(args)
    cfg = trainer.TrainConfig(
        variant=args.variant,
        hidden_dim=args.hidden_dim,
        steps=args.steps,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    result = trainer.train(ts, cfg)
    payload = container.save(container.from_artifacts(result.pyramid, result.decoder))
    Path(args.out).write_bytes(payload)
    elapsed = time.perf_counter() - t0

    if args.log:
        result.log.write(args.log)

    # Report quality of the file as written (round-tripped artifacts).
    p, decoder = container.to_artifacts(container.load(payload))
    report = eval_mod.evaluate_asset(p, decoder, ts, lod=0.0)
    fp = eval_mod.footprint(args.variant, ts.width, ts.height, args.hidden_dim)
    print(f"wrote: {args.out} ({len(payload)} bytes)")
    print(f"psnr_db: {report.aggregate_db:.4f}")
    print(f"bits_per_texel: {float(fp.total_bits_per_texel):.6f}")
    print(f"compression_ratio: {float(fp.total_compression_ratio):.4f}")
    print(f"train_seconds: {elapsed:.2f}")
    if result.degenerate_blocks:
        print(f"degenerate_blocks: {result.degenerate_blocks}")
    return EXIT_OK


def _parse_axis(text: str) -> np.ndarray:
    try:
        du, dv = (float(v) for v in text.split(","))
    except ValueError:
        raise ValueError(f"--aniso expects 'du,dv', got {text!r}")
    return np.array([du, dv])


def _cmd_decompress(args) -> int:
    nf = container.load_file(args.infile)
    p, decoder = container.to_artifacts(nf)
    n_mips = len(nf.mip_layout()[0])
    level = int(np.clip(np.floor(args.lod), 0, n_mips - 1))
    w, h = nf.width >> level, nf.height >> level
    uv = utils.texel_center_grid(w, h)
    axis = _parse_axis(args.aniso) if args.aniso else None
    features = eval_mod.decode_features(
        p, decoder, uv, args.lod, aniso_axis=axis, taps=args.taps
    ).reshape(h, w, trainer.NUM_CHANNELS)
    written = container.export_images(features, args.out_dir)
    for path in written:
        print(f"wrote: {path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    nf = container.load_file(args.infile)
    p, decoder = container.to_artifacts(nf)
    ts = _load_reference(args.reference)
    if (ts.width, ts.height) != (nf.width, nf.height):
        raise ValueError(
            f"reference is {ts.width}x{ts.height} but asset is {nf.width}x{nf.height}"
        )
    if args.per_lod:
        reports = eval_mod.evaluate_per_lod(p, decoder, ts)
    else:
        reports = [eval_mod.evaluate_asset(p, decoder, ts, lod=0.0)]
    lines = list(eval_mod.report_lines(reports))
    for line in lines:
        print(line)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text("\n".join(lines) + "\n")
        eval_mod.write_report_csv(reports, out_dir / "report.csv")
        for path in eval_mod.write_report_figures(reports, out_dir):
            print(f"wrote: {path}")
        print(f"wrote: {out_dir / 'report.txt'}")
        print(f"wrote: {out_dir / 'report.csv'}")
    return EXIT_OK


def _cmd_tilesim(args) -> int:
    screen = tilesim.load_screen(args.screen)
    assets = {}
    for entry in args.assets:
        if "=" not in entry:
            raise ValueError(f"--assets entries must look like ID=FILE, got {entry!r}")
        mid_str, path = entry.split("=", 1)
        try:
            mid = int(mid_str)
        except ValueError:
            raise ValueError(f"bad material id in {entry!r}")
        assets[mid] = container.to_artifacts(container.load_file(path))
    features, stats = tilesim.decode_screen(screen, assets)
    np.save(args.features, features)
    stats_text = "\n".join(stats.as_lines()) + "\n"
    Path(args.stats).write_text(stats_text)
    print(stats_text, end="")
    print(f"wrote: {args.features}")
    print(f"wrote: {args.stats}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
