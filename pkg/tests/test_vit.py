import numpy as np
import pytest

from conftest import assert_grad_matches
from vitkit import tensor as T
from vitkit.tensor import Tensor, backward
from vitkit.vit import (
    ViTConfig,
    ViTModel,
    attention_head,
    embed,
    encoder_block,
    multi_head,
    parameter_count,
    patchify,
    preset_config,
    unpatchify,
)


def brute_force_attention(q, k, v):
    """Explicit three-loop scaled dot-product attention oracle."""
    n, d_k = q.shape
    d_v = v.shape[1]
    out = np.zeros((n, d_v))
    for i in range(n):
        scores = np.array([sum(q[i, t] * k[j, t] for t in range(d_k)) / np.sqrt(d_k)
                           for j in range(k.shape[0])])
        weights = np.exp(scores - scores.max())
        weights /= weights.sum()
        for c in range(d_v):
            out[i, c] = sum(weights[j] * v[j, c] for j in range(k.shape[0]))
    return out


class TestPatchify:
    def test_single_patch(self):
        img = np.random.default_rng(0).normal(size=(16, 16, 3))
        out = patchify(Tensor(img), 16)
        assert out.shape == (1, 768)
        np.testing.assert_array_equal(out.data[0], img.reshape(-1))

    def test_224(self):
        out = patchify(Tensor(np.zeros((224, 224, 3))), 16)
        assert out.shape == (196, 768)

    def test_1024(self):
        out = patchify(Tensor(np.zeros((1024, 1024, 3))), 16)
        assert out.shape == (4096, 768)

    def test_non_divisible(self):
        with pytest.raises(ValueError):
            patchify(Tensor(np.zeros((30, 30, 3))), 16)

    def test_lossless_roundtrip(self):
        img = np.random.default_rng(1).integers(0, 256, size=(32, 32, 3)).astype(float)
        patches = patchify(Tensor(img), 4)
        back = unpatchify(patches.data, 32, 32, 3, 4)
        np.testing.assert_array_equal(back, img)

    def test_batched(self):
        out = patchify(Tensor(np.zeros((2, 32, 32, 3))), 4)
        assert out.shape == (2, 64, 48)


class TestEmbed:
    def test_zero_projection_gives_pos(self):
        model = ViTModel(preset_config("tiny"))
        for name in ("embed.proj.w", "embed.proj.b", "embed.cls"):
            model.param(name).data[:] = 0.0
        pos = np.random.default_rng(0).normal(size=model.param("embed.pos").shape)
        model.param("embed.pos").data = pos.copy()
        out = embed(Tensor(np.zeros((64, 48))), model)
        np.testing.assert_array_equal(out.data, pos)

    def test_class_token_prepended(self):
        cfg = ViTConfig(patch_size=4, layers=1, hidden_size=8, mlp_size=16, heads=2,
                        num_classes=2, image_resolution=8)
        model = ViTModel(cfg)
        out = embed(Tensor(np.zeros((4, 48))), model)
        assert out.shape == (5, 8)

    def test_shapes_across_presets(self):
        for variant in ("tiny", "base16", "large16", "huge14"):
            cfg = preset_config(variant)
            if variant == "tiny":
                model = ViTModel(cfg)
            else:
                # allocation-free shape check for the big variants
                assert cfg.seq_len == cfg.num_patches + 1
                continue
            patches = np.zeros((cfg.num_patches, cfg.patch_dim))
            assert embed(Tensor(patches), model).shape == (cfg.seq_len, cfg.hidden_size)

    def test_width_mismatch(self):
        model = ViTModel(preset_config("tiny"))
        with pytest.raises(ValueError):
            embed(Tensor(np.zeros((64, 47))), model)


class TestAttentionHead:
    def test_single_token_returns_value(self):
        rng = np.random.default_rng(0)
        q, k, v = rng.normal(size=(1, 4)), rng.normal(size=(1, 4)), rng.normal(size=(1, 6))
        out = attention_head(Tensor(q), Tensor(k), Tensor(v))
        np.testing.assert_allclose(out.data, v)

    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(1)
        k_row = rng.normal(size=4)
        k = np.stack([k_row, k_row])
        v = rng.normal(size=(2, 3))
        q = rng.normal(size=(1, 4))
        out = attention_head(Tensor(q), Tensor(k), Tensor(v))
        np.testing.assert_allclose(out.data[0], v.mean(axis=0))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        q, k, v = (rng.normal(size=(3, 4)) for _ in range(3))
        out = attention_head(Tensor(q), Tensor(k), Tensor(v))
        np.testing.assert_allclose(out.data, brute_force_attention(q, k, v), atol=1e-10)

    def test_extent_mismatch(self):
        with pytest.raises(ValueError):
            attention_head(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 5))),
                           Tensor(np.zeros((3, 4))))

    def test_rows_are_convex_combinations(self):
        rng = np.random.default_rng(3)
        q, k, v = (rng.normal(size=(5, 6)) for _ in range(3))
        out = attention_head(Tensor(q), Tensor(k), Tensor(v)).data
        lo, hi = v.min(axis=0), v.max(axis=0)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)

    def test_key_value_permutation_invariance(self):
        rng = np.random.default_rng(4)
        q, k, v = (rng.normal(size=(4, 5)) for _ in range(3))
        perm = rng.permutation(4)
        base = attention_head(Tensor(q), Tensor(k), Tensor(v)).data
        permuted = attention_head(Tensor(q), Tensor(k[perm]), Tensor(v[perm])).data
        np.testing.assert_allclose(permuted, base, atol=1e-12)


def _mha_params(d, rng=None, identity=False, zero_out=False):
    if identity:
        mk = lambda: np.eye(d)
    else:
        mk = lambda: rng.normal(size=(d, d))
    p = {}
    for name in ("wq", "wk", "wv", "wo"):
        p[name] = Tensor(mk())
        p["b" + name[1]] = Tensor(np.zeros(d))
    if zero_out:
        p["wo"] = Tensor(np.zeros((d, d)))
    return p


class TestMultiHead:
    def test_single_head_identity_projections(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 4))
        params = _mha_params(4, identity=True)
        out = multi_head(Tensor(x), params, heads=1)
        expected = attention_head(Tensor(x), Tensor(x), Tensor(x)).data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_zero_output_projection(self):
        rng = np.random.default_rng(1)
        params = _mha_params(4, rng, zero_out=True)
        out = multi_head(Tensor(rng.normal(size=(3, 4))), params, heads=2)
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_two_head_slice_oracle(self):
        rng = np.random.default_rng(2)
        d, heads = 8, 2
        x = rng.normal(size=(3, d))
        params = _mha_params(d, rng)
        q, k, v = (x @ params[n].data for n in ("wq", "wk", "wv"))
        per_head = [
            brute_force_attention(q[:, h * 4:(h + 1) * 4], k[:, h * 4:(h + 1) * 4],
                                  v[:, h * 4:(h + 1) * 4])
            for h in range(heads)
        ]
        expected = np.concatenate(per_head, axis=1) @ params["wo"].data
        out = multi_head(Tensor(x), params, heads=heads)
        np.testing.assert_allclose(out.data, expected, atol=1e-10)

    def test_divisibility(self):
        with pytest.raises(ValueError):
            multi_head(Tensor(np.zeros((3, 4))), _mha_params(4, identity=True), heads=3)


class TestEncoderBlock:
    def test_zero_weights_residual_identity(self):
        model = ViTModel(preset_config("tiny"))
        params = model.layer_params(0)
        for key in ("wq", "wk", "wv", "wo", "w1", "w2"):
            params[key].data[:] = 0.0
        x = np.random.default_rng(0).normal(size=(5, 64))
        out = encoder_block(Tensor(x), params, heads=4)
        np.testing.assert_array_equal(out.data, x)

    def test_shape_preserved(self):
        model = ViTModel(preset_config("tiny"), seed=3)
        x = np.random.default_rng(1).normal(size=(9, 64))
        out = encoder_block(Tensor(x), model.layer_params(0), heads=4)
        assert out.shape == (9, 64)

    def test_gradient_matches_finite_differences(self):
        cfg = ViTConfig(patch_size=2, layers=1, hidden_size=6, mlp_size=8, heads=2,
                        num_classes=2, image_resolution=4)
        model = ViTModel(cfg, seed=5)
        params = model.layer_params(0)
        x = Tensor(np.random.default_rng(2).normal(size=(3, 6)), requires_grad=True)

        def f():
            return T.tsum(encoder_block(x, params, heads=2))

        assert_grad_matches(f, [x], rtol=1e-4)


class TestForward:
    def test_logit_shape(self):
        model = ViTModel(preset_config("tiny"), seed=1)
        out = model.forward(np.random.default_rng(0).normal(size=(2, 32, 32, 3)))
        assert out.shape == (2, 4)

    def test_identical_rows_for_identical_images(self):
        model = ViTModel(preset_config("tiny"), seed=1)
        img = np.random.default_rng(1).normal(size=(32, 32, 3))
        out = model.forward(np.stack([img, img]))
        np.testing.assert_array_equal(out.data[0], out.data[1])

    def test_constant_path_head_bias(self):
        model = ViTModel(preset_config("tiny"), seed=0)
        for name, p in model.params.items():
            p.tensor.data[:] = 0.0
        model.param("head.b").data[:] = [1.0, 2.0, 3.0, 4.0]
        out = model.forward(np.random.default_rng(2).normal(size=(3, 32, 32, 3)))
        np.testing.assert_array_equal(out.data, np.tile([1.0, 2.0, 3.0, 4.0], (3, 1)))

    def test_resolution_mismatch_names_both(self):
        model = ViTModel(preset_config("tiny"))
        with pytest.raises(ValueError, match="16x16.*32x32"):
            model.forward(np.zeros((1, 16, 16, 3)))

    def test_deterministic(self):
        x = np.random.default_rng(3).normal(size=(2, 32, 32, 3))
        outs = [ViTModel(preset_config("tiny"), seed=9).forward(x).data.tobytes()
                for _ in range(2)]
        assert outs[0] == outs[1]


class TestPresets:
    def test_base16(self):
        cfg = preset_config("base16")
        assert (cfg.patch_size, cfg.layers, cfg.hidden_size, cfg.mlp_size,
                cfg.heads) == (16, 12, 768, 3072, 12)

    def test_large16(self):
        cfg = preset_config("large16")
        assert (cfg.patch_size, cfg.layers, cfg.hidden_size, cfg.mlp_size,
                cfg.heads) == (16, 24, 1024, 4096, 16)

    def test_huge14(self):
        cfg = preset_config("huge14")
        assert (cfg.patch_size, cfg.layers, cfg.hidden_size, cfg.mlp_size,
                cfg.heads) == (14, 32, 1280, 5120, 16)

    def test_tiny(self):
        cfg = preset_config("tiny")
        assert (cfg.patch_size, cfg.layers, cfg.hidden_size, cfg.mlp_size, cfg.heads,
                cfg.image_resolution) == (4, 2, 64, 128, 4, 32)

    def test_unknown(self):
        with pytest.raises(ValueError):
            preset_config("giant")

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ViTConfig(patch_size=5, layers=1, hidden_size=8, mlp_size=8, heads=2,
                      num_classes=2, image_resolution=32)
        with pytest.raises(ValueError):
            ViTConfig(patch_size=4, layers=1, hidden_size=9, mlp_size=8, heads=2,
                      num_classes=2, image_resolution=32)


class TestParameterCount:
    @pytest.mark.parametrize("variant,target", [
        ("base16", 86_000_000), ("large16", 307_000_000), ("huge14", 632_000_000),
    ])
    def test_within_three_percent_of_reported(self, variant, target):
        count = parameter_count(preset_config(variant))
        assert abs(count - target) / target < 0.03

    def test_matches_allocation(self):
        model = ViTModel(preset_config("tiny"))
        allocated = sum(p.tensor.size for p in model.parameters())
        assert allocated == parameter_count(model.config)

    def test_unique_stable_names(self):
        model = ViTModel(preset_config("tiny"))
        names = [p.name for p in model.parameters()]
        assert len(names) == len(set(names))
        assert names == [p.name for p in ViTModel(preset_config("tiny")).parameters()]


class TestEndToEndGradient:
    def test_sampled_parameters_match_finite_differences(self):
        model = ViTModel(preset_config("tiny"), seed=11)
        x = np.random.default_rng(4).normal(size=(2, 32, 32, 3))
        labels = [1, 3]

        def f():
            return T.cross_entropy(model.forward(x), labels)

        backward(f())
        grads = {name: p.tensor.grad.copy() for name, p in model.params.items()}
        for p in model.parameters():
            p.tensor.grad = None
        rng = np.random.default_rng(5)
        names = list(model.params)
        checked = 0
        while checked < 30:
            name = names[rng.integers(len(names))]
            t = model.param(name)
            idx = tuple(rng.integers(s) for s in t.data.shape)
            orig = t.data[idx]
            t.data[idx] = orig + 1e-5
            plus = f().item()
            t.data[idx] = orig - 1e-5
            minus = f().item()
            t.data[idx] = orig
            num = (plus - minus) / 2e-5
            ana = grads[name][idx]
            assert abs(ana - num) <= 1e-6 + 1e-3 * max(abs(ana), abs(num)), (name, idx)
            checked += 1
