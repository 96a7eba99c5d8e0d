import numpy as np
import pytest

from attmerge import tensor as tn
from attmerge.encoder import (
    EmbeddingStack,
    EncoderConfig,
    block_forward,
    encode,
    encoder_tensors,
    init_encoder,
    positional_encoding,
    refine_layers,
    set_frozen,
    truncate,
)
from attmerge.tensor import Tensor, grad_check


def small_config(**kw):
    base = dict(num_layers=3, hidden_dim=8, num_heads=2, ffn_dim=12, seed=5)
    base.update(kw)
    return EncoderConfig(**base)


class TestEncoderConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ValueError, match="divisible"):
            EncoderConfig(hidden_dim=10, num_heads=3)

    @pytest.mark.parametrize("field", ["num_layers", "hidden_dim", "num_heads", "ffn_dim"])
    def test_dims_positive(self, field):
        with pytest.raises(ValueError, match=field):
            EncoderConfig(**{field: 0})

    def test_toy_defaults(self):
        cfg = EncoderConfig()
        assert (cfg.num_layers, cfg.hidden_dim, cfg.num_heads, cfg.ffn_dim) == (6, 16, 2, 32)


class TestEncode:
    def test_zero_input_follows_residual_path(self):
        cfg = small_config()
        blocks = init_encoder(cfg, zero_output_proj=True)
        stack = encode(np.zeros((4, 8)), cfg, blocks)
        assert stack.data.shape == (4, 8, 3)
        # attention and FFN branches contribute nothing, so each layer passes
        # its input (the positional encoding of a zero sequence) straight on
        for l in range(1, 4):
            np.testing.assert_array_equal(stack.layer(l), positional_encoding(4, 8))

    def test_zero_input_without_positions_is_zero(self):
        cfg = small_config(positional=False)
        stack = encode(np.zeros((4, 8)), cfg, init_encoder(cfg, zero_output_proj=True))
        np.testing.assert_array_equal(stack.data.data, 0.0)

    def test_single_layer(self, rng):
        cfg = small_config(num_layers=1, positional=False)
        blocks = init_encoder(cfg)
        x = rng.normal(size=(5, 8))
        stack = encode(x, cfg, blocks)
        assert stack.num_layers == 1
        np.testing.assert_array_equal(stack.layer(1), block_forward(Tensor(x), blocks[0], 2).data)

    def test_slices_are_successive_block_outputs(self, rng):
        cfg = small_config(positional=False)
        blocks = init_encoder(cfg)
        x = rng.normal(size=(5, 8))
        stack = encode(x, cfg, blocks)
        h = Tensor(x)
        for l, blk in enumerate(blocks, start=1):
            h = block_forward(h, blk, cfg.num_heads)
            np.testing.assert_array_equal(stack.layer(l), h.data)

    def test_bit_identical_replay(self, rng):
        cfg = small_config()
        x = rng.normal(size=(6, 8))
        first = encode(x, cfg, init_encoder(cfg)).data.data
        second = encode(x, cfg, init_encoder(cfg)).data.data
        assert first.tobytes() == second.tobytes()

    def test_dimension_mismatch(self, rng):
        cfg = small_config()
        with pytest.raises(ValueError, match="T x 8"):
            encode(rng.normal(size=(5, 7)), cfg, init_encoder(cfg))

    def test_permutation_equivariant_without_positions(self, rng):
        cfg = small_config(positional=False)
        blocks = init_encoder(cfg)
        x = rng.normal(size=(6, 8))
        perm = rng.permutation(6)
        out = encode(x, cfg, blocks).data.data
        out_perm = encode(x[perm], cfg, blocks).data.data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)

    def test_positions_break_equivariance(self, rng):
        cfg = small_config()
        blocks = init_encoder(cfg)
        x = rng.normal(size=(6, 8))
        perm = np.array([1, 0, 2, 3, 4, 5])
        out = encode(x, cfg, blocks).data.data
        out_perm = encode(x[perm], cfg, blocks).data.data
        assert np.max(np.abs(out_perm - out[perm])) > 1e-3

    def test_full_stack_gradients(self, rng):
        cfg = EncoderConfig(num_layers=3, hidden_dim=8, num_heads=2, ffn_dim=8)
        blocks = init_encoder(cfg, rng)
        for blk in blocks:
            for t in blk.tensors().values():
                t.data = t.data + rng.normal(0, 0.1, size=t.shape)
        names = list(blocks[0].tensors())
        flat = [t for blk in blocks for t in blk.tensors().values()]
        x = rng.normal(size=(5, 8))
        probe = rng.normal(size=(5, 8, 3))
        n = len(names)

        def f(*ps):
            rebuilt = [type(blocks[0])(**dict(zip(names, ps[i * n : (i + 1) * n]))) for i in range(3)]
            return tn.sum_over_axis(encode(x, cfg, rebuilt).data * probe)

        assert grad_check(f, flat) < 1e-4


class TestTruncate:
    def stack(self, rng, L=24):
        return EmbeddingStack(rng.normal(size=(3, 4, L)), "utt")

    def test_full_cap_is_identity(self, rng):
        s = self.stack(rng, 6)
        assert truncate(s, 6) is s

    def test_cap_one(self, rng):
        s = self.stack(rng, 6)
        t = truncate(s, 1)
        assert t.data.shape == (3, 4, 1)
        np.testing.assert_array_equal(t.layer(1), s.layer(1))

    @pytest.mark.parametrize("k", [6, 10, 12, 18, 24])
    def test_table_caps_on_24_layers(self, rng, k):
        assert truncate(self.stack(rng), k).data.shape == (3, 4, k)

    @pytest.mark.parametrize("k", [0, 7, -1])
    def test_out_of_range(self, rng, k):
        with pytest.raises(ValueError, match="outside"):
            truncate(self.stack(rng, 6), k)

    def test_nested_truncation(self, rng):
        s = self.stack(rng, 12)
        for k1 in range(1, 13):
            for k2 in range(1, k1 + 1):
                np.testing.assert_array_equal(
                    truncate(truncate(s, k1), k2).data.data, truncate(s, k2).data.data
                )


class TestFreeze:
    def test_set_frozen_flips_every_tensor(self):
        blocks = init_encoder(small_config())
        set_frozen(blocks, True)
        assert not any(t.requires_grad for t in encoder_tensors(blocks).values())
        set_frozen(blocks, False)
        assert all(t.requires_grad for t in encoder_tensors(blocks).values())

    def test_frozen_params_get_no_gradient(self, rng):
        cfg = small_config(positional=False)
        blocks = init_encoder(cfg)
        set_frozen(blocks, True)
        with tn.Tape() as tape:
            loss = tn.sum_over_axis(encode(rng.normal(size=(4, 8)), cfg, blocks).data)
        grads = tape.gradient(loss, list(encoder_tensors(blocks).values()))
        assert all(np.all(g == 0) for g in grads)
        assert len(tape) == 0


class TestRefineLayers:
    def test_identity_at_init(self, rng):
        blocks = init_encoder(small_config(), zero_output_proj=True)
        x = rng.normal(size=(2, 4, 8, 3))
        np.testing.assert_array_equal(refine_layers(Tensor(x), blocks, 2).data, x)

    def test_too_many_layers(self, rng):
        blocks = init_encoder(small_config())
        with pytest.raises(ValueError, match="only 3 blocks"):
            refine_layers(Tensor(rng.normal(size=(4, 8, 4))), blocks, 2)
