"""End-to-end CLI tests: flags, exit codes, determinism, outputs."""

import numpy as np
import pytest
from PIL import Image

from nbtc import cli, container, tilesim, trainer


@pytest.fixture()
def maps(tmp_path):
    """Five small synthetic reference maps on disk."""
    ts = trainer.synthetic_texture_set(64, 64, seed=150)
    base = (ts.mips[0] * 255.0 + 0.5).astype(np.uint8)
    paths = {}
    groups = [
        ("albedo", base[..., 0:3], "RGB"),
        ("normal", base[..., 3:6], "RGB"),
        ("roughness", base[..., 6], "L"),
        ("metalness", base[..., 7], "L"),
        ("ao", base[..., 8], "L"),
    ]
    for name, arr, mode in groups:
        p = tmp_path / f"{name}.png"
        Image.fromarray(arr, mode=mode).save(p)
        paths[name] = str(p)
    return paths


def map_flags(maps):
    out = []
    for name, path in maps.items():
        out += [f"--{name}", path]
    return out


def compress_args(maps, out, steps=5, seed=3, extra=()):
    return (
        ["compress"]
        + map_flags(maps)
        + ["--variant", "A", "--hidden-dim", "16", "--steps", str(steps),
           "--batch-size", "256", "--seed", str(seed), "--out", str(out)]
        + list(extra)
    )


class TestCompress:
    def test_writes_file_and_reports(self, maps, tmp_path, capsys):
        out = tmp_path / "asset.nbtc"
        rc = cli.main(compress_args(maps, out, steps=0))
        assert rc == 0
        assert out.exists()
        stdout = capsys.readouterr().out
        assert "psnr_db:" in stdout
        assert "bits_per_texel:" in stdout
        assert "compression_ratio:" in stdout
        assert "train_seconds:" in stdout

    def test_same_seed_byte_identical(self, maps, tmp_path):
        out1 = tmp_path / "a.nbtc"
        out2 = tmp_path / "b.nbtc"
        assert cli.main(compress_args(maps, out1, steps=4, seed=7)) == 0
        assert cli.main(compress_args(maps, out2, steps=4, seed=7)) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_different_seed_differs(self, maps, tmp_path):
        out1 = tmp_path / "a.nbtc"
        out2 = tmp_path / "b.nbtc"
        assert cli.main(compress_args(maps, out1, steps=4, seed=7)) == 0
        assert cli.main(compress_args(maps, out2, steps=4, seed=8)) == 0
        assert out1.read_bytes() != out2.read_bytes()

    def test_bad_variant_usage_error_exit_1(self, maps, tmp_path):
        argv = compress_args(maps, tmp_path / "x.nbtc")
        argv[argv.index("A")] = "C"
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 1

    def test_missing_input_exit_1(self, maps, tmp_path):
        maps = dict(maps)
        maps["albedo"] = str(tmp_path / "missing.png")
        rc = cli.main(compress_args(maps, tmp_path / "x.nbtc"))
        assert rc == 1 or rc == 3  # PIL raises FileNotFoundError (OSError)

    def test_log_written(self, maps, tmp_path):
        log = tmp_path / "train.log"
        rc = cli.main(compress_args(maps, tmp_path / "x.nbtc", steps=3,
                                    extra=["--log", str(log)]))
        assert rc == 0
        lines = log.read_text().strip().splitlines()
        assert len(lines) == 3
        step, loss, lr_mlp, lr_lat = lines[0].split()
        assert step == "0" and lr_mlp == "0.001" and lr_lat == "0.01"


@pytest.fixture()
def asset(maps, tmp_path):
    out = tmp_path / "asset.nbtc"
    assert cli.main(compress_args(maps, out, steps=5)) == 0
    return out


class TestDecompress:
    def test_writes_channel_images(self, asset, tmp_path):
        out_dir = tmp_path / "decoded"
        rc = cli.main(["decompress", "--in", str(asset), "--lod", "0",
                       "--out-dir", str(out_dir)])
        assert rc == 0
        for name in container.MAP_NAMES:
            img = Image.open(out_dir / f"{name}.png")
            assert img.size == (64, 64)

    def test_lod_scales_output(self, asset, tmp_path):
        out_dir = tmp_path / "decoded2"
        rc = cli.main(["decompress", "--in", str(asset), "--lod", "2",
                       "--out-dir", str(out_dir)])
        assert rc == 0
        assert Image.open(out_dir / "albedo.png").size == (16, 16)

    def test_aniso_flags(self, asset, tmp_path):
        out_dir = tmp_path / "decoded3"
        rc = cli.main(["decompress", "--in", str(asset), "--lod", "1",
                       "--out-dir", str(out_dir), "--aniso", "0.05,0.0",
                       "--taps", "4"])
        assert rc == 0

    def test_bad_aniso_exit_1(self, asset, tmp_path):
        rc = cli.main(["decompress", "--in", str(asset), "--lod", "0",
                       "--out-dir", str(tmp_path / "d"), "--aniso", "nope"])
        assert rc == 1

    def test_corrupt_container_exit_1(self, asset, tmp_path):
        bad = tmp_path / "bad.nbtc"
        bad.write_bytes(b"XXXX" + asset.read_bytes()[4:])
        rc = cli.main(["decompress", "--in", str(bad), "--lod", "0",
                       "--out-dir", str(tmp_path / "d")])
        assert rc == 1


class TestEval:
    def test_report_and_outputs(self, asset, maps, tmp_path, capsys):
        out_dir = tmp_path / "report"
        rc = cli.main(
            ["eval", "--in", str(asset), "--reference"]
            + [maps[n] for n in container.MAP_NAMES]
            + ["--out-dir", str(out_dir)]
        )
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "psnr.aggregate:" in stdout
        assert (out_dir / "report.csv").exists()
        assert (out_dir / "report.txt").exists()
        assert (out_dir / "psnr_per_channel.png").exists()

    def test_per_lod(self, asset, maps, capsys):
        rc = cli.main(
            ["eval", "--in", str(asset), "--reference"]
            + [maps[n] for n in container.MAP_NAMES]
            + ["--per-lod"]
        )
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "psnr.aggregate_mean_over_lods:" in stdout
        assert "lod4.psnr.aggregate:" in stdout

    def test_size_mismatch_exit_1(self, asset, tmp_path, capsys):
        small = {}
        rng = np.random.default_rng(0)
        for name in container.MAP_NAMES:
            p = tmp_path / f"small_{name}.png"
            mode = "RGB" if name in ("albedo", "normal") else "L"
            shape = (32, 32, 3) if mode == "RGB" else (32, 32)
            Image.fromarray(rng.integers(0, 255, shape, dtype=np.uint8), mode).save(p)
            small[name] = str(p)
        rc = cli.main(
            ["eval", "--in", str(asset), "--reference"]
            + [small[n] for n in container.MAP_NAMES]
        )
        assert rc == 1


class TestTilesim:
    def test_end_to_end(self, asset, tmp_path, capsys):
        rng = np.random.default_rng(151)
        ids = rng.integers(-1, 1, size=(16, 24))  # mix of none and id 0
        screen = tilesim.MaterialScreen(
            ids, rng.random((16, 24, 2)), rng.random((16, 24)) * 2
        )
        screen_path = tmp_path / "screen.bin"
        tilesim.save_screen(screen, screen_path)
        stats_path = tmp_path / "stats.txt"
        feat_path = tmp_path / "features.npy"
        rc = cli.main(["tilesim", "--screen", str(screen_path),
                       "--assets", f"0={asset}",
                       "--stats", str(stats_path), "--features", str(feat_path)])
        assert rc == 0
        stats = stats_path.read_text()
        assert "tiles_total:" in stats
        feats = np.load(feat_path)
        assert feats.shape == (16, 24, 9)

    def test_missing_asset_exit_1(self, asset, tmp_path):
        rng = np.random.default_rng(152)
        screen = tilesim.MaterialScreen(
            np.full((8, 8), 5), rng.random((8, 8, 2)), np.zeros((8, 8))
        )
        screen_path = tmp_path / "screen.bin"
        tilesim.save_screen(screen, screen_path)
        rc = cli.main(["tilesim", "--screen", str(screen_path),
                       "--assets", f"0={asset}",
                       "--stats", str(tmp_path / "s.txt")])
        assert rc == 1

    def test_bad_asset_spec_exit_1(self, asset, tmp_path):
        rng = np.random.default_rng(153)
        screen = tilesim.MaterialScreen(
            np.zeros((4, 8), dtype=int), rng.random((4, 8, 2)), np.zeros((4, 8))
        )
        screen_path = tmp_path / "screen.bin"
        tilesim.save_screen(screen, screen_path)
        rc = cli.main(["tilesim", "--screen", str(screen_path),
                       "--assets", "nope",
                       "--stats", str(tmp_path / "s.txt")])
        assert rc == 1


class TestErrorPaths:
    def test_training_divergence_exit_2(self, maps, tmp_path, monkeypatch):
        def boom(ts, cfg):
            raise trainer.TrainingDivergedError(3, "latent")

        monkeypatch.setattr(cli.trainer, "train", boom)
        rc = cli.main(compress_args(maps, tmp_path / "x.nbtc"))
        assert rc == 2

    def test_unwritable_output_exit_3(self, maps, tmp_path):
        out = tmp_path / "no" / "such" / "dir" / "x.nbtc"
        rc = cli.main(compress_args(maps, out, steps=0))
        assert rc == 3

    def test_threads_env_respected(self, asset, maps, monkeypatch, capsys):
        monkeypatch.setenv("NBTC_THREADS", "2")
        rc = cli.main(
            ["eval", "--in", str(asset), "--reference"]
            + [maps[n] for n in container.MAP_NAMES]
        )
        assert rc == 0
        base = capsys.readouterr().out
        monkeypatch.setenv("NBTC_THREADS", "1")
        rc = cli.main(
            ["eval", "--in", str(asset), "--reference"]
            + [maps[n] for n in container.MAP_NAMES]
        )
        assert rc == 0
        # Worker count must not change any reported number.
        assert capsys.readouterr().out == base

    def test_bad_threads_env_exit_1(self, asset, maps, monkeypatch):
        monkeypatch.setenv("NBTC_THREADS", "many")
        rc = cli.main(
            ["eval", "--in", str(asset), "--reference"]
            + [maps[n] for n in container.MAP_NAMES]
        )
        assert rc == 1


class TestHelp:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--help"])
        assert exc.value.code == 0
        assert "compress" in capsys.readouterr().out

    def test_subcommand_help_lists_flags(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["compress", "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for flag in ("--albedo", "--variant", "--hidden-dim", "--steps", "--seed", "--out"):
            assert flag in out

    def test_no_command_exit_1(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 1
