"""Worker resolution and chunked-map determinism."""

import numpy as np
import pytest

from nbtc import utils


class TestResolveWorkers:
    def test_explicit(self):
        assert utils.resolve_workers(2) == 2

    def test_env_auto(self, monkeypatch):
        monkeypatch.setenv(utils.THREADS_ENV, "0")
        assert utils.resolve_workers() >= 1

    def test_env_value(self, monkeypatch):
        monkeypatch.setenv(utils.THREADS_ENV, "3")
        assert utils.resolve_workers() == 3

    def test_env_invalid(self, monkeypatch):
        monkeypatch.setenv(utils.THREADS_ENV, "lots")
        with pytest.raises(ValueError):
            utils.resolve_workers()
        with pytest.raises(ValueError):
            utils.resolve_workers(-1)


class TestMapChunks:
    def test_results_independent_of_workers(self):
        data = np.arange(1000, dtype=float)

        def fn(s, e):
            return np.sqrt(data[s:e])

        a = np.concatenate(utils.map_chunks(fn, 1000, chunk_size=64, workers=1))
        b = np.concatenate(utils.map_chunks(fn, 1000, chunk_size=64, workers=4))
        assert np.array_equal(a, b)

    def test_empty(self):
        assert utils.map_chunks(lambda s, e: None, 0) == []

    def test_chunk_bounds_cover_everything(self):
        seen = []
        utils.map_chunks(lambda s, e: seen.append((s, e)), 130, chunk_size=50, workers=1)
        assert seen == [(0, 50), (50, 100), (100, 130)]


def test_texel_center_grid():
    g = utils.texel_center_grid(2, 3)
    assert g.shape == (6, 2)
    assert np.allclose(g[0], [0.25, 1 / 6])
    assert np.allclose(g[-1], [0.75, 5 / 6])
