import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import _grad
from prosodykit import adaptor as A
from prosodykit.nn.layers import layer_norm

F64 = np.float64


def ceil_chain(n, factors=A.FACTORS):
    out = []
    for f in factors:
        n = (n + f - 1) // f
        out.append(n)
    return out


@pytest.mark.parametrize("name", sorted(_grad.ADAPTOR_CASES))
def test_gradients(name):
    report = _grad.run_case(name)
    assert report.max_error < 1e-5, report.worst()


class TestPyramid:
    @pytest.mark.parametrize("n,want", [(4000, [200, 20, 2, 1]), (4001, [201, 21, 3, 2]),
                                        (1, [1, 1, 1, 1])])
    def test_lengths(self, n, want):
        assert A.pyramid_lengths(n) == want

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 10**6))
    def test_lengths_property(self, n):
        lens = A.pyramid_lengths(n)
        assert lens == ceil_chain(n)
        # the frame level holds one step per hop
        assert lens[1] == -(-n // 200)

    def test_meanpool_shapes_match_arithmetic(self):
        pyr = A.meanpool_pyramid(np.zeros((2, 4001)), np.array([4001, 2500]))
        assert [lv.shape[1] for lv in pyr.levels] == [201, 21, 3, 2]
        np.testing.assert_array_equal(pyr.lengths[1], ceil_chain(2500))

    def test_meanpool_constant(self):
        pyr = A.meanpool_pyramid(np.full((2, 4321), 0.7), np.array([4321, 1234]))
        for lv, m in zip(pyr.levels, pyr.masks):
            np.testing.assert_allclose(lv[..., 0][m], 0.7, rtol=1e-12)
            assert np.all(lv[..., 0][~m] == 0)

    def test_meanpool_ignores_padding(self):
        x = np.random.default_rng(0).standard_normal(3000)
        alone = A.meanpool_pyramid(x)
        padded = A.meanpool_pyramid(np.concatenate([x, np.full(1000, 9.0)])[None],
                                    np.array([3000]))
        for a, b, m in zip(alone.levels, padded.levels, padded.masks):
            np.testing.assert_allclose(b[0, m[0]], a[0], atol=1e-12)

    def test_learned_pyramid_lengths(self):
        lp = A.LearnedPyramid(4, rng=np.random.default_rng(0))
        pyr = lp.forward(np.zeros((1, 4001)))
        assert [lv.shape[1] for lv in pyr.levels] == [201, 21, 3, 2]
        assert all(lv.shape[2] == 4 for lv in pyr.levels)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            A.meanpool_pyramid(np.zeros((1, 10)), np.array([0]))


class TestLengthRegulate:
    def test_example(self):
        out = A.length_regulate(np.array([[1.0], [2.0]]), [2, 1])
        np.testing.assert_array_equal(out, [[1], [1], [2]])

    def test_unit_durations_identity(self):
        c = np.random.default_rng(0).standard_normal((5, 3))
        np.testing.assert_array_equal(A.length_regulate(c, np.ones(5, int)), c)

    def test_length_contract(self):
        d = np.array([3, 1, 4, 1, 5])
        assert len(A.length_regulate(np.zeros((5, 2)), d)) == d.sum()

    @pytest.mark.parametrize("d", [[0, 1], [-1, 2], [1.5, 1], [1]])
    def test_bad_durations(self, d):
        with pytest.raises(ValueError):
            A.length_regulate(np.zeros((2, 2)), d)

    def test_batch_padding(self):
        frames, mask = A.regulate_batch([np.ones((2, 3)), np.ones((1, 3))], [[2, 2], [1]])
        assert frames.shape == (2, 4, 3)
        np.testing.assert_array_equal(mask.sum(1), [4, 1])
        assert np.all(frames[1, 1:] == 0)


def attn(rng, d=6, kv=4, zero_output=False, pos_dim=0):
    return A.CrossAttention(d, kv, pos_dim=pos_dim, rng=rng, dtype=F64, zero_output=zero_output)


class TestCrossAttention:
    def test_single_key(self):
        rng = np.random.default_rng(0)
        m = attn(rng)
        q = rng.standard_normal((7, 6))
        kv = rng.standard_normal((1, 4))
        out = A.cross_attend(q, kv, m)
        np.testing.assert_array_equal(m.weights, 1.0)
        v = kv @ m.v.params["weight"] + m.v.params["bias"]
        want = (v @ m.o.params["weight"] + m.o.params["bias"]) + q
        np.testing.assert_allclose(out, want, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        m = attn(rng, pos_dim=4)
        km = rng.random((3, 9)) > 0.4
        km[:, 0] = True
        m.forward(rng.standard_normal((3, 5, 6)) * 5, rng.standard_normal((3, 9, 4)) * 5,
                  rng.standard_normal((5, 4)), rng.standard_normal((9, 4)), km)
        np.testing.assert_allclose(m.weights.sum(-1), 1.0, atol=1e-6)
        assert np.all(m.weights[np.broadcast_to(~km[:, None, :], m.weights.shape)] == 0)

    def test_identical_keys_permutation(self):
        rng = np.random.default_rng(2)
        m = attn(rng)
        q = rng.standard_normal((4, 6))
        kv = np.repeat(rng.standard_normal((1, 4)), 5, axis=0)
        a = A.cross_attend(q, kv, m)
        b = A.cross_attend(q, kv[::-1].copy(), m)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_convex_combination(self):
        rng = np.random.default_rng(3)
        m = attn(rng)
        kv = rng.standard_normal((6, 4))
        out = A.cross_attend(rng.standard_normal((3, 6)), kv, m, residual=False)
        v = kv @ m.v.params["weight"] + m.v.params["bias"]
        ctx = (out - m.o.params["bias"]) @ np.linalg.pinv(m.o.params["weight"])
        assert np.all(ctx.max(0) <= v.max(0) + 1e-9) and np.all(ctx.min(0) >= v.min(0) - 1e-9)

    def test_empty_keys(self):
        with pytest.raises(ValueError):
            A.cross_attend(np.zeros((2, 6)), np.zeros((0, 4)), attn(np.random.default_rng(0)))

    def test_zero_output_is_residual(self):
        rng = np.random.default_rng(4)
        q = rng.standard_normal((3, 6))
        out = A.cross_attend(q, rng.standard_normal((5, 4)), attn(rng, zero_output=True))
        np.testing.assert_array_equal(out, q)


class TestSALN:
    def trained(self, rng, d=8, ds=5):
        m = A.SALN(d, ds, dtype=F64)
        for lin in (m.gamma, m.delta):
            for p in lin.params.values():
                p[...] = rng.standard_normal(p.shape)
        return m

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        m = self.trained(rng)
        h, s = rng.standard_normal((20, 8)), rng.standard_normal(5)
        for c in (-3.0, 0.5, 40.0):
            np.testing.assert_allclose(A.saln(h + c, s, m), A.saln(h, s, m), atol=1e-6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        m = A.SALN(8, 5, dtype=F64)
        for lin in (m.gamma, m.delta):
            lin.params["weight"][...] = 0.3 * rng.standard_normal(lin.params["weight"].shape)
        h, s = rng.standard_normal((20, 8)), rng.standard_normal(5)
        # eps matters relative to the variance: unit-variance input, a >= 1
        for a in (1.5, 3.0, 100.0):
            np.testing.assert_allclose(A.saln(a * h, s, m), A.saln(h, s, m), atol=1e-4)

    def test_scale_error_is_eps_bounded(self):
        # large gains: the deviation stays within the first-order eps term
        rng = np.random.default_rng(1)
        m = self.trained(rng)
        h, s = rng.standard_normal((20, 8)), rng.standard_normal(5)
        g = np.abs(s @ m.gamma.params["weight"] + m.gamma.params["bias"]).max()
        xhat = np.abs(layer_norm(h[None])[0]).max()
        var = h.var(-1).min()
        for a in (0.5, 3.0, 100.0):
            bound = g * xhat * 1e-5 / (2 * var * min(a * a, 1)) * 1.01
            assert np.abs(A.saln(a * h, s, m) - A.saln(h, s, m)).max() <= bound

    def test_plain_layer_norm_at_init(self):
        rng = np.random.default_rng(2)
        m = A.SALN(8, 5, dtype=F64)
        h = rng.standard_normal((1, 20, 8)) * 4 + 2
        out = m.forward(h, np.zeros((1, 5)))
        np.testing.assert_allclose(out, layer_norm(h)[0], atol=1e-12)
        # reference normalization
        ref = (h - h.mean(-1, keepdims=True)) / np.sqrt(h.var(-1, keepdims=True) + 1e-5)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_rejects_single_channel(self):
        with pytest.raises(ValueError):
            A.SALN(1, 3)


def bundle(rng, d=8, ds=4):
    durations = rng.integers(1, 6, size=9)
    return A.ConditionBundle(rng.standard_normal((9, d)), rng.standard_normal(ds), durations)


class TestAdapt:
    def test_zero_levels_identity(self):
        rng = np.random.default_rng(0)
        m = A.HierarchicalAdaptor(8, 4, learned_pyramid=False, pos_dim=4, rng=rng, dtype=F64)
        b = bundle(rng)
        n = b.n_frames * A.HOP
        pyr = A.meanpool_pyramid(np.zeros(n))
        out = m.adapt(b, pyr).fused
        assert np.array_equal(out, A.length_regulate(b.content, b.durations))

    def test_zero_init_identity_any_pyramid(self):
        rng = np.random.default_rng(1)
        m = A.HierarchicalAdaptor(8, 4, pos_dim=4, rng=rng, dtype=F64)
        b = bundle(rng)
        frames = A.length_regulate(b.content, b.durations)[None]
        out = m.forward_excitation(frames, b.speaker[None], np.ones(frames.shape[:2], bool),
                                   rng.standard_normal((1, b.n_frames * A.HOP)),
                                   np.array([b.n_frames * A.HOP]))
        assert np.array_equal(out[0], frames[0])

    def test_output_length(self):
        rng = np.random.default_rng(2)
        m = A.HierarchicalAdaptor(8, 4, learned_pyramid=False, pos_dim=4, rng=rng, dtype=F64)
        _grad._unzero(m, rng)
        b = bundle(rng)
        pyr = A.meanpool_pyramid(rng.standard_normal(b.n_frames * A.HOP))
        out = m.adapt(b, pyr).fused
        assert out.shape == (b.n_frames, 8)
        assert not np.array_equal(out, A.length_regulate(b.content, b.durations))

    def test_padding_rows_do_not_leak(self):
        rng = np.random.default_rng(3)
        m = A.HierarchicalAdaptor(8, 4, learned_pyramid=False, pos_dim=4, rng=rng, dtype=F64)
        _grad._unzero(m, rng)
        content = rng.standard_normal((1, 12, 8))
        x = rng.standard_normal((1, 12 * A.HOP))
        short = m.forward(content[:, :8], np.ones((1, 4)), np.ones((1, 8), bool),
                          A.meanpool_pyramid(x[:, :8 * A.HOP]))
        fm = np.arange(12)[None] < 8
        long = m.forward(content, np.ones((1, 4)), fm,
                         A.meanpool_pyramid(x, np.array([8 * A.HOP])))
        np.testing.assert_allclose(long[:, :8], short, atol=1e-12)
        assert np.all(long[:, 8:] == 0)

    def test_bad_fusion_order(self):
        with pytest.raises(ValueError):
            A.HierarchicalAdaptor(8, 4, fusion_order="random")


class TestFlat:
    def test_zero_encoder_identity(self):
        rng = np.random.default_rng(0)
        m = A.FlatAdaptor(8, rng=rng, dtype=F64)
        b = bundle(rng)
        out = m.adapt_flat(b, rng.uniform(80, 300, b.n_frames)).fused
        assert np.array_equal(out, A.length_regulate(b.content, b.durations))

    def test_length_mismatch(self):
        rng = np.random.default_rng(1)
        b = bundle(rng)
        with pytest.raises(ValueError):
            A.FlatAdaptor(8, rng=rng).adapt_flat(b, np.zeros(b.n_frames + 1))

    def test_pointwise(self):
        # each output frame depends only on its own f0 value
        rng = np.random.default_rng(2)
        m = A.FlatAdaptor(8, hidden=6, rng=rng, dtype=F64, zero_output=False)
        c = np.zeros((1, 10, 8))
        f0 = rng.standard_normal((1, 10))
        a = m.forward(c, f0, np.ones((1, 10), bool))
        f0[0, 4] += 1
        b = m.forward(c, f0, np.ones((1, 10), bool))
        changed = np.any(a != b, axis=-1)[0]
        np.testing.assert_array_equal(np.flatnonzero(changed), [4])


class TestDurations:
    def test_init_predicts_one_frame(self):
        rng = np.random.default_rng(0)
        m = A.DurationPredictor(8, 4, rng=rng)
        np.testing.assert_array_equal(m.predict(rng.standard_normal((6, 8)), np.zeros(4)), 1)

    def test_clamp(self):
        np.testing.assert_array_equal(A.durations_from_log(np.log([0.2, 1.0, 2.6, 7.0])),
                                      [1, 1, 3, 7])

    def test_exp_zero(self):
        assert A.durations_from_log(np.zeros(1))[0] == 1
