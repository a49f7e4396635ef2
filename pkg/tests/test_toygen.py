import numpy as np
import pytest

from stridelab.inject import StrideConfig, stride_perturb
from stridelab.toygen import (
    batch_generate,
    build_generator,
    channel_spectrum,
    dump_generator,
    dump_trace,
    generate,
)


def small_gen(**kwargs):
    defaults = dict(depth=3, steps=1, height=6, width=6, feat_dim=8, out_dim=2, seed=13)
    defaults.update(kwargs)
    return build_generator(**defaults)


class TestBuild:
    def test_deterministic(self):
        a, b = small_gen(), small_gen()
        for blk_a, blk_b in zip(a.blocks, b.blocks):
            assert np.array_equal(blk_a.token_mix, blk_b.token_mix)
            assert np.array_equal(blk_a.channel_mix, blk_b.channel_mix)
            assert np.array_equal(blk_a.bias, blk_b.bias)
        assert np.array_equal(a.readout, b.readout)

    def test_minimal_generator_runs(self):
        gen = build_generator(1, 1, 4, 4, 8, 3, seed=0)
        img, trace = generate(gen, np.zeros((4, 4, 8)))
        assert img.shape == (4, 4, 3)
        assert set(trace) == {(0, 0)}

    def test_channel_spectrum_profile(self):
        gen = small_gen()
        s = np.linalg.svd(gen.blocks[0].channel_mix, compute_uv=False)
        expected = channel_spectrum(8, gen.spectrum_decay)
        assert np.abs(s - expected).max() < 1e-6

    def test_token_mix_orthogonal(self):
        gen = small_gen()
        a = gen.blocks[0].token_mix
        assert np.abs(a @ a.T - np.eye(36)).max() < 1e-10

    @pytest.mark.parametrize("field", ["depth", "steps", "height", "width", "feat_dim", "out_dim"])
    def test_zero_counts_rejected(self, field):
        kwargs = dict(depth=2, steps=1, height=4, width=4, feat_dim=4, out_dim=2, seed=0)
        kwargs[field] = 0
        with pytest.raises(ValueError):
            build_generator(**kwargs)

    def test_bad_contraction_rejected(self):
        with pytest.raises(ValueError):
            small_gen(contraction=1.0)


class TestGenerate:
    def test_identity_hook_transparent(self):
        gen = small_gen()
        lat = np.random.default_rng(1).standard_normal((6, 6, 8))
        plain, trace_plain = generate(gen, lat)
        hooked, trace_hooked = generate(gen, lat, hook=lambda fm: fm)
        assert np.array_equal(plain, hooked)
        for site in trace_plain:
            assert np.array_equal(trace_plain[site], trace_hooked[site])

    def test_alpha_zero_hook_transparent(self):
        gen = small_gen()
        lat = np.random.default_rng(2).standard_normal((6, 6, 8))
        cfg = StrideConfig(alpha=0.0, seed=5)
        plain, _ = generate(gen, lat)
        hooked, _ = generate(gen, lat, hook=lambda fm: stride_perturb(fm, cfg))
        assert np.array_equal(plain, hooked)

    def test_contraction_bound(self):
        gen = small_gen(depth=4, steps=2, contraction=0.9)
        rng = np.random.default_rng(3)
        z = rng.standard_normal((6, 6, 8))
        dz = rng.standard_normal((6, 6, 8)) * 1e-5
        a, _ = generate(gen, z)
        b, _ = generate(gen, z + dz)
        assert np.linalg.norm(b - a) <= 0.9 ** (4 * 2) * np.linalg.norm(dz)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            generate(small_gen(), np.zeros((6, 6, 7)))

    def test_multi_step_sites(self):
        gen = small_gen(steps=3)
        _, trace = generate(gen, np.zeros((6, 6, 8)))
        assert set(trace) == {(b, t) for t in range(3) for b in range(3)}

    def test_step_gating_across_steps(self):
        gen = small_gen(steps=2)
        lat = np.random.default_rng(4).standard_normal((6, 6, 8))
        plain, _ = generate(gen, lat)
        late = StrideConfig(alpha=1.0, layer_set=frozenset({0}), step_gate=frozenset({1}), seed=5)
        off = StrideConfig(alpha=1.0, layer_set=frozenset({0}), step_gate=frozenset({5}), seed=5)
        hooked_late, _ = generate(gen, lat, hook=lambda fm: stride_perturb(fm, late))
        hooked_off, _ = generate(gen, lat, hook=lambda fm: stride_perturb(fm, off))
        assert not np.array_equal(plain, hooked_late)
        assert np.array_equal(plain, hooked_off)


class TestBatchGenerate:
    def test_single_element_equals_generate(self):
        gen = small_gen()
        lat = np.random.default_rng(5).standard_normal((1, 6, 6, 8))
        imgs, traces = batch_generate(gen, lat)
        img, trace = generate(gen, lat[0], sample_index=0)
        assert np.array_equal(imgs[0], img)
        for site in trace:
            assert np.array_equal(traces[site][0], trace[site])

    def test_matches_sequential_runs(self):
        gen = build_generator(6, 1, 16, 16, 32, 3, seed=7)
        lat = np.random.default_rng(6).standard_normal((8, 16, 16, 32))
        cfg = StrideConfig(seed=11)
        hook = lambda fm: stride_perturb(fm, cfg)
        imgs, _ = batch_generate(gen, lat, hook)
        for i in range(8):
            img, _ = generate(gen, lat[i], hook, sample_index=i)
            assert np.array_equal(imgs[i], img)

    def test_permuted_batch_permutes_outputs(self):
        gen = small_gen()
        lat = np.random.default_rng(7).standard_normal((4, 6, 6, 8))
        ids = np.array([3, 1, 4, 1_000])
        imgs, _ = batch_generate(gen, lat, sample_indices=ids)
        perm = [2, 3, 0, 1]
        imgs_perm, _ = batch_generate(gen, lat[perm], sample_indices=ids[perm])
        assert np.array_equal(imgs_perm, imgs[perm])

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            batch_generate(small_gen(), np.zeros((0, 6, 6, 8)))


class TestConstructionTargets:
    def test_collapse_by_construction(self):
        # the generator maps i.i.d. latents to outputs that are far more
        # cosine-similar than the latents themselves
        gen = build_generator(6, 1, 16, 16, 32, 3, seed=7)
        rng = np.random.default_rng(8)
        lat = rng.standard_normal((64, 16, 16, 32))
        imgs, _ = batch_generate(gen, lat)

        def mean_cos(v):
            v = v.reshape(len(v), -1)
            vn = v / np.linalg.norm(v, axis=1, keepdims=True)
            m = vn @ vn.T
            return m[np.triu_indices(len(v), 1)].mean()

        assert mean_cos(imgs) > mean_cos(lat) + 0.5

    def test_low_rank_features_at_early_blocks(self):
        gen = build_generator(6, 1, 16, 16, 32, 3, seed=7)
        lat = np.random.default_rng(9).standard_normal((24, 16, 16, 32))
        _, traces = batch_generate(gen, lat)
        top = int(np.ceil(0.1 * 32))
        for block in (0, 1):
            feats = traces[(block, 0)].reshape(-1, 32)
            feats = feats - feats.mean(axis=0)
            s = np.linalg.svd(feats, compute_uv=False)
            assert (s[:top] ** 2).sum() / (s ** 2).sum() >= 0.9


def test_dump_round_trip(tmp_path):
    gen = small_gen()
    gen_path = tmp_path / "gen.npz"
    dump_generator(gen, gen_path)
    loaded = np.load(gen_path)
    assert loaded["meta"].tolist() == [3, 1, 6, 6, 8, 2, 13]
    assert loaded["block000_token_mix"].dtype == np.dtype("<f4")
    assert np.allclose(loaded["readout"], gen.readout, atol=1e-6)

    _, trace = generate(gen, np.random.default_rng(10).standard_normal((6, 6, 8)))
    trace_path = tmp_path / "trace.npz"
    dump_trace(trace, trace_path)
    loaded = np.load(trace_path)
    assert set(loaded.files) == {f"block{b:03d}_step000" for b in range(3)}
    assert np.allclose(loaded["block001_step000"], trace[(1, 0)], atol=1e-6)
