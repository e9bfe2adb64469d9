import math

import numpy as np
import pytest
import torch

from conftest import finite_difference_check
from viewlift.blocks import (
    FeedForward,
    LoRALinear,
    ModLN,
    MultiHeadAttention,
    ResBlock,
    TimeEmbedding,
    feature_map_to_tokens,
    lora_linear,
    mod_ln,
    scaled_dot_product_attention,
    sinusoidal_time_embedding,
    tokens_to_feature_map,
)


class TestTimeEmbedding:
    def test_deterministic(self):
        a = sinusoidal_time_embedding(7, 16)
        b = sinusoidal_time_embedding(7, 16)
        assert torch.equal(a, b)

    def test_t_zero_closed_form(self):
        emb = sinusoidal_time_embedding(0, 12)
        assert torch.equal(emb[:6], torch.zeros(6))
        assert torch.equal(emb[6:], torch.ones(6))

    def test_distinct_steps_distinct_vectors(self):
        embs = sinusoidal_time_embedding(torch.arange(100), 16)
        for i in range(100):
            for j in range(i + 1, 100):
                if torch.equal(embs[i], embs[j]):
                    raise AssertionError(f"steps {i} and {j} collide")

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError, match="even"):
            sinusoidal_time_embedding(0, 7)

    def test_module_projects_to_out_dim(self):
        te = TimeEmbedding(8, out_dim=12)
        out = te(torch.tensor([0, 5]))
        assert out.shape == (2, 12)


class TestLoRA:
    def test_zero_b_matches_base_bitwise(self):
        torch.manual_seed(0)
        layer = LoRALinear(6, 4, rank=2)
        x = torch.randn(5, 6)
        assert torch.equal(layer(x), layer.base(x))

    def test_zero_scale_matches_base(self):
        x = torch.tensor([[2.0]])
        w = torch.tensor([[3.0]])
        a = torch.tensor([[1.0]])
        b = torch.tensor([[0.5]])
        assert lora_linear(x, w, a, b, scale=0.0).item() == 6.0

    def test_hand_evaluated_1d(self):
        x = torch.tensor([[2.0]])
        w = torch.tensor([[3.0]])
        a = torch.tensor([[1.0]])
        b = torch.tensor([[0.5]])
        assert lora_linear(x, w, a, b, scale=1.0).item() == pytest.approx(7.0)

    def test_adapter_update_is_low_rank(self):
        torch.manual_seed(1)
        layer = LoRALinear(8, 8, rank=2)
        with torch.no_grad():
            layer.lora_b.normal_()
        delta = (layer.lora_a @ layer.lora_b * layer.scale).detach()
        assert torch.linalg.matrix_rank(delta).item() <= 2

    def test_invalid_rank(self):
        with pytest.raises(ValueError):
            LoRALinear(4, 4, rank=0)

    def test_base_frozen_adapters_trainable(self):
        layer = LoRALinear(4, 4, rank=2)
        layer.base.weight.requires_grad_(False)
        layer.base.bias.requires_grad_(False)
        out = layer(torch.randn(3, 4)).sum()
        out.backward()
        assert layer.base.weight.grad is None
        assert layer.lora_b.grad is not None
        assert layer.lora_b.grad.abs().sum() > 0


class TestModLN:
    def test_identity_modulation(self):
        torch.manual_seed(0)
        f = torch.randn(3, 8)
        zero = torch.zeros(8)
        out = mod_ln(f, zero, zero, zero)
        expected = torch.nn.functional.layer_norm(f, (8,))
        assert torch.allclose(out, expected, atol=1e-6)

    def test_constant_channels(self):
        f = torch.full((2, 8), 3.7)
        beta = torch.randn(8)
        t_proj = torch.randn(8)
        out = mod_ln(f, torch.zeros(8), beta, t_proj)
        assert torch.allclose(out, beta + t_proj, atol=1e-2)

    def test_shift_invariance(self):
        torch.manual_seed(1)
        f = torch.randn(4, 16)
        gamma, beta, t_proj = torch.randn(16), torch.randn(16), torch.randn(16)
        out1 = mod_ln(f, gamma, beta, t_proj)
        out2 = mod_ln(f + 5.3, gamma, beta, t_proj)
        assert (out1 - out2).abs().max() <= 1e-5

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mod_ln(torch.randn(2, 8), torch.zeros(4), torch.zeros(4), torch.zeros(4))

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(2)
        f = torch.randn(2, 5, dtype=torch.float64, requires_grad=True)
        gamma = torch.randn(5, dtype=torch.float64, requires_grad=True)
        beta = torch.randn(5, dtype=torch.float64, requires_grad=True)
        t_proj = torch.randn(5, dtype=torch.float64)
        weights = torch.randn(2, 5, dtype=torch.float64)

        def fn():
            return (mod_ln(f, gamma, beta, t_proj) * weights).sum()

        finite_difference_check(fn, [f, gamma, beta], rel_tol=1e-4)

    def test_fresh_module_is_plain_layernorm(self):
        torch.manual_seed(0)
        block = ModLN(8, cam_dim=25, time_dim=6)
        f = torch.randn(1, 10, 8)
        out = block(f, torch.randn(1, 25), torch.randn(1, 6))
        expected = torch.nn.functional.layer_norm(f, (8,))
        assert torch.allclose(out, expected, atol=1e-6)

    def test_camera_changes_output_with_random_weights(self):
        torch.manual_seed(0)
        block = ModLN(8, cam_dim=25, time_dim=6)
        for p in block.parameters():
            torch.nn.init.normal_(p, std=0.3)
        f = torch.randn(1, 10, 8)
        t_emb = torch.randn(1, 6)
        a = block(f, torch.randn(1, 25), t_emb)
        b = block(f, torch.randn(1, 25), t_emb)
        assert (a - b).abs().max() > 0


class TestAttention:
    def test_single_kv_token_degenerate_softmax(self):
        torch.manual_seed(0)
        attn = MultiHeadAttention(8, n_heads=2)
        q = torch.randn(1, 5, 8)
        kv = torch.randn(1, 1, 8)
        out = attn(q, kv)
        expected = attn.to_out(attn.to_v(kv)).expand(1, 5, 8)
        assert torch.allclose(out, expected, atol=1e-6)

    def test_weights_sum_to_one(self):
        torch.manual_seed(1)
        q = torch.randn(2, 6, 8)
        k = torch.randn(2, 9, 8)
        v = torch.randn(2, 9, 8)
        _, weights = scaled_dot_product_attention(q, k, v, n_heads=4, return_weights=True)
        sums = weights.sum(dim=-1)
        assert (sums - 1.0).abs().max() <= 1e-6

    def test_hand_computed_two_tokens(self):
        attn = MultiHeadAttention(2, n_heads=1)
        with torch.no_grad():
            attn.to_q.weight.copy_(torch.eye(2))
            attn.to_k.weight.copy_(torch.eye(2))
            attn.to_v.weight.copy_(torch.eye(2))
            attn.to_out.weight.copy_(torch.eye(2))
            attn.to_out.bias.zero_()
        tokens = torch.tensor([[[0.1, 0.2], [0.3, -0.1]]])
        out = attn(tokens)
        q = k = v = tokens[0].numpy()
        logits = q @ k.T / math.sqrt(2.0)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        expected = torch.from_numpy((w @ v).astype(np.float32))
        assert torch.allclose(out[0], expected, atol=1e-6)

    def test_width_not_divisible_rejected(self):
        q = torch.randn(1, 4, 6)
        with pytest.raises(ValueError, match="divisible"):
            scaled_dot_product_attention(q, q, q, n_heads=4)

    def test_query_count_preserved_cross(self):
        attn = MultiHeadAttention(8, n_heads=2, kv_dim=12)
        out = attn(torch.randn(2, 5, 8), torch.randn(2, 11, 12))
        assert out.shape == (2, 5, 8)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(3)
        attn = MultiHeadAttention(4, n_heads=2).double()
        q = torch.randn(1, 3, 4, dtype=torch.float64)
        weights = torch.randn(1, 3, 4, dtype=torch.float64)

        def fn():
            return (attn(q) * weights).sum()

        finite_difference_check(fn, list(attn.parameters()), rel_tol=1e-3)


class TestResBlockAndTokens:
    def test_resblock_shapes_and_time(self):
        torch.manual_seed(0)
        block = ResBlock(8, 16, time_dim=12)
        x = torch.randn(2, 8, 6, 6)
        t_emb = torch.randn(2, 12)
        out = block(x, t_emb)
        assert out.shape == (2, 16, 6, 6)
        out2 = block(x, t_emb * 2.0)
        assert (out - out2).abs().max() > 0

    def test_resblock_requires_time_when_configured(self):
        block = ResBlock(8, 8, time_dim=12)
        with pytest.raises(ValueError):
            block(torch.randn(1, 8, 4, 4))

    def test_token_round_trip(self):
        x = torch.randn(2, 5, 3, 4)
        tokens = feature_map_to_tokens(x)
        assert tokens.shape == (2, 12, 5)
        back = tokens_to_feature_map(tokens, 3, 4)
        assert torch.equal(back, x)

    def test_feedforward_shape(self):
        ff = FeedForward(8, mult=2)
        assert ff(torch.randn(2, 3, 8)).shape == (2, 3, 8)
