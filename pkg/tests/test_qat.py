"""Quantizer, trainable-texture decode, Adam, and BC1 export tests."""

import numpy as np
import pytest

from nbtc import bc1, qat


class TestQuant:
    def test_grid_endpoints(self):
        assert qat.quant(0.0, 2) == 0.0
        assert qat.quant(1.0, 2) == 1.0

    def test_half_rounds_away_from_zero(self):
        # 0.5 * 3 = 1.5 -> 2 (half away from zero) -> 2/3; enumerating the
        # grid {0, 1/3, 2/3, 1}, 0.5 is equidistant from 1/3 and 2/3.
        assert qat.quant(0.5, 2) == 2.0 / 3.0

    def test_idempotent(self):
        rng = np.random.default_rng(21)
        for bits in (2, 5, 6):
            x = rng.random(10000)
            q = qat.quant(x, bits)
            assert np.array_equal(qat.quant(q, bits), q)

    def test_grid_membership(self):
        rng = np.random.default_rng(22)
        for bits in (2, 5, 6):
            n = 2**bits - 1
            q = qat.quant(rng.random(10000), bits)
            assert np.array_equal(q, np.round(q * n) / n)
            assert q.min() >= 0.0 and q.max() <= 1.0

    def test_nearest_grid_point(self):
        # quant must pick the closest grid value (ties away from zero).
        rng = np.random.default_rng(23)
        for bits in (2, 5):
            n = 2**bits - 1
            x = rng.random(2000)
            q = qat.quant(x, bits)
            grid = np.arange(n + 1) / n
            best = np.abs(x[:, None] - grid[None, :]).min(axis=1)
            assert np.allclose(np.abs(x - q), best, atol=1e-12)

    def test_clamps_out_of_range(self):
        assert qat.quant(-0.5, 2) == 0.0
        assert qat.quant(1.5, 2) == 1.0

    def test_straight_through_backward_is_identity(self):
        rng = np.random.default_rng(24)
        g = rng.standard_normal(1000)
        out = qat.quant_backward(g)
        assert out is g or np.array_equal(out, g)


class TestSigmoid:
    def test_matches_formula(self):
        x = np.linspace(-20, 20, 101)
        assert np.allclose(qat.sigmoid(x), 1.0 / (1.0 + np.exp(-x)), atol=1e-15)

    def test_stable_at_extremes(self):
        assert qat.sigmoid(np.array([-1e4, 1e4])) == pytest.approx([0.0, 1.0])

    def test_grad(self):
        x = np.linspace(-5, 5, 41)
        h = 1e-6
        fd = (qat.sigmoid(x + h) - qat.sigmoid(x - h)) / (2 * h)
        assert np.allclose(qat.sigmoid_grad(x), fd, atol=1e-9)


class TestMipGeometry:
    @pytest.mark.parametrize(
        "w,h,count", [(256, 256, 7), (128, 128, 6), (32, 32, 4), (128, 64, 5)]
    )
    def test_chain_length(self, w, h, count):
        assert qat.mip_chain_length(w, h) == count

    def test_coarsest_at_least_4(self):
        for w, h in [(32, 32), (64, 32), (4096, 4096), (96, 96)]:
            n = qat.mip_chain_length(w, h)
            cw, ch = qat.mip_dims(w, h, n - 1)
            assert min(cw, ch) >= 4

    def test_block_grid_dims(self):
        rng = np.random.default_rng(25)
        t = qat.TrainableLatentTexture(64, 32, rng)
        for m in range(t.n_mips):
            w, h = qat.mip_dims(64, 32, m)
            assert t.mips[m].alpha_raw.shape == (h, w)
            assert t.mips[m].e0_raw.shape == (-(-h // 4), -(-w // 4), 3)


class TestDecodeTrainable:
    def test_zero_alpha_raw_gives_two_thirds_blend(self):
        # sigmoid(0) = 0.5 -> quant -> 2/3, so texel = 1/3 e0 + 2/3 e1.
        rng = np.random.default_rng(26)
        t = qat.TrainableLatentTexture(8, 8, rng)
        t.mips[0].alpha_raw[:] = 0.0
        t.mips[0].e1_raw[:] = t.mips[0].e0_raw + 3.0  # keep endpoints distinct
        cache = qat.decode_trainable_cached(t, 0)
        e0 = qat.quant_565(qat.sigmoid(t.mips[0].e0_raw))
        e1 = qat.quant_565(qat.sigmoid(t.mips[0].e1_raw))
        e0_t = np.repeat(np.repeat(e0, 4, 0), 4, 1)[:8, :8]
        e1_t = np.repeat(np.repeat(e1, 4, 0), 4, 1)[:8, :8]
        assert np.array_equal(cache.texels, (1 / 3) * e0_t + (2 / 3) * e1_t)

    def test_equal_endpoints_alpha_invariant(self):
        rng = np.random.default_rng(27)
        t = qat.TrainableLatentTexture(8, 8, rng)
        t.mips[0].e1_raw[:] = t.mips[0].e0_raw
        base = qat.decode_trainable(t, 0)
        t.mips[0].alpha_raw[:] = rng.standard_normal((8, 8))
        assert np.allclose(qat.decode_trainable(t, 0), base, atol=1e-15)

    def test_texels_on_quantized_lattice(self):
        rng = np.random.default_rng(28)
        t = qat.TrainableLatentTexture(16, 16, rng)
        tex = qat.decode_trainable(t, 0)
        e0 = qat.quant_565(qat.sigmoid(t.mips[0].e0_raw))
        e1 = qat.quant_565(qat.sigmoid(t.mips[0].e1_raw))
        for y in range(16):
            for x in range(16):
                c0 = e0[y // 4, x // 4]
                c1 = e1[y // 4, x // 4]
                lattice = [(1 - a) * c0 + a * c1 for a in (0, 1 / 3, 2 / 3, 1)]
                d = min(np.abs(tex[y, x] - l).max() for l in lattice)
                assert d < 1e-12

    def test_gradient_matches_smooth_path_fd(self):
        # The straight-through decode gradient equals the gradient of the
        # unquantized sigmoid+interpolation path; central finite differences
        # on that smooth path are the oracle.
        rng = np.random.default_rng(29)
        t = qat.TrainableLatentTexture(8, 8, rng)
        g = rng.standard_normal((8, 8, 3))

        cache = qat.decode_trainable_cached(t, 0, quantize=True)
        d_alpha, d_e0, d_e1 = qat.texel_grads_to_raw(cache, g)

        def smooth_scalar():
            return float(np.sum(qat.decode_trainable(t, 0, quantize=False) * g))

        h = 1e-6
        for arr, grad in (
            (t.mips[0].alpha_raw, d_alpha),
            (t.mips[0].e0_raw, d_e0),
            (t.mips[0].e1_raw, d_e1),
        ):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for i in rng.choice(flat.size, size=8, replace=False):
                orig = flat[i]
                flat[i] = orig + h
                up = smooth_scalar()
                flat[i] = orig - h
                dn = smooth_scalar()
                flat[i] = orig
                fd = (up - dn) / (2 * h)
                assert abs(gflat[i] - fd) <= 1e-4 * max(abs(fd), 1e-8)


class TestAdam:
    def test_zero_gradient_no_motion(self):
        p = np.array([1.0, -2.0, 3.0])
        state = qat.AdamState.for_params([p], lr=1e-3)
        qat.adam_step([p], [np.zeros(3)], state)
        assert np.array_equal(p, [1.0, -2.0, 3.0])
        assert state.step_count == 1

    def test_first_step_magnitude(self):
        # Hand evaluation at t=1, g=1: m_hat = v_hat = 1, so the update is
        # lr / (1 + eps) which is lr to within 1e-6.
        p = np.array([0.5])
        state = qat.AdamState.for_params([p], lr=1e-3)
        qat.adam_step([p], [np.ones(1)], state)
        assert abs((0.5 - p[0]) - 1e-3) < 1e-6

    def test_two_steps_match_scalar_reference(self):
        # Independent scalar transcription of the Adam recurrence.
        def scalar_adam(g_seq, lr, b1=0.9, b2=0.999, eps=1e-8, theta=0.0):
            m = v = 0.0
            for t, g in enumerate(g_seq, start=1):
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                mh = m / (1 - b1**t)
                vh = v / (1 - b2**t)
                theta -= lr * mh / (np.sqrt(vh) + eps)
            return theta

        p = np.array([0.0])
        state = qat.AdamState.for_params([p], lr=0.01)
        qat.adam_step([p], [np.array([0.7])], state)
        qat.adam_step([p], [np.array([0.7])], state)
        assert abs(p[0] - scalar_adam([0.7, 0.7], 0.01)) < 1e-12

    def test_multi_array_and_shape_checks(self):
        a = np.zeros((2, 2))
        b = np.zeros(3)
        state = qat.AdamState.for_params([a, b], lr=1e-2)
        qat.adam_step([a, b], [np.ones((2, 2)), np.ones(3)], state)
        assert np.all(a < 0) and np.all(b < 0)
        with pytest.raises(ValueError):
            qat.adam_step([a], [np.ones(3)], state)


class TestExport:
    def test_round_trip_equals_trainable_decode(self):
        rng = np.random.default_rng(30)
        for trial in range(50):
            t = qat.TrainableLatentTexture(16, 16, rng)
            exported = qat.export_to_bc1(t)
            assert len(exported.mips) == t.n_mips
            for m, (e0p, e1p, idx) in enumerate(exported.mips):
                h, w = t.mips[m].alpha_raw.shape
                frozen = qat.decode_block_grid(e0p, e1p, idx, h, w)
                assert np.array_equal(frozen, qat.decode_trainable(t, m))

    def test_all_black(self):
        rng = np.random.default_rng(31)
        t = qat.TrainableLatentTexture(8, 8, rng)
        for mp in t.mips:
            mp.alpha_raw[:] = -50.0
            mp.e0_raw[:] = -50.0
            mp.e1_raw[:] = -50.0
        exported = qat.export_to_bc1(t)
        for m, (e0p, e1p, idx) in enumerate(exported.mips):
            h, w = t.mips[m].alpha_raw.shape
            assert np.array_equal(
                qat.decode_block_grid(e0p, e1p, idx, h, w), np.zeros((h, w, 3))
            )

    def test_exported_blocks_are_valid_4color(self):
        rng = np.random.default_rng(32)
        t = qat.TrainableLatentTexture(16, 16, rng)
        # Force a batch of coincident endpoints to exercise the degenerate path.
        t.mips[0].e1_raw[:2] = t.mips[0].e0_raw[:2]
        exported = qat.export_to_bc1(t)
        for e0p, e1p, _ in exported.mips:
            assert np.all(e0p > e1p)
        assert exported.degenerate_blocks >= 8
        # Degenerate handling keeps the decode exact.
        e0p, e1p, idx = exported.mips[0]
        frozen = qat.decode_block_grid(e0p, e1p, idx, 16, 16)
        assert np.array_equal(frozen, qat.decode_trainable(t, 0))

    def test_export_grid_matches_scalar_blocks(self):
        # The vectorized exporter must agree with the scalar packer.
        rng = np.random.default_rng(33)
        t = qat.TrainableLatentTexture(8, 8, rng)
        cache = qat.decode_trainable_cached(t, 0)
        alpha = qat.quant(cache.alpha_s, qat.ALPHA_BITS)
        e0 = qat.quant_565(cache.e0_s)
        e1 = qat.quant_565(cache.e1_s)
        (e0p, e1p, idx) = qat.export_to_bc1(t).mips[0]
        for by in range(2):
            for bx in range(2):
                blk = bc1.encode_block(
                    np.zeros((4, 4, 3)),
                    e0[by, bx],
                    e1[by, bx],
                    alpha[by * 4 : by * 4 + 4, bx * 4 : bx * 4 + 4],
                )
                assert blk.e0_packed == e0p[by, bx]
                assert blk.e1_packed == e1p[by, bx]
                assert blk.indices == idx[by, bx]
