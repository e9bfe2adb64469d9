import pytest
import torch

from viewlift.encoder import FULL_SCALE_ENCODER, EncoderConfig, ReferenceFeature, TimeAwareEncoder


@pytest.fixture(scope="module")
def toy_encoder():
    torch.manual_seed(0)
    return TimeAwareEncoder(EncoderConfig())


class TestShapes:
    def test_toy_output_shape(self, toy_encoder):
        out = toy_encoder(torch.rand(2, 3, 64, 64), torch.tensor([0, 5]))
        assert out.shape == (2, 128, 8, 8)

    def test_full_scale_output_shape(self):
        torch.manual_seed(0)
        enc = TimeAwareEncoder(FULL_SCALE_ENCODER)
        with torch.no_grad():
            out = enc(torch.rand(1, 3, 512, 512), torch.tensor([0]))
        assert out.shape == (1, 1024, 8, 8)

    def test_spatial_dims_halve_per_stage(self):
        cfg = EncoderConfig(image_size=32, base_channels=16, channel_multipliers=(1, 2), out_channels=24, time_dim=16)
        assert cfg.feature_size == 8
        enc = TimeAwareEncoder(cfg)
        out = enc(torch.rand(1, 3, 32, 32), torch.tensor([0]))
        assert out.shape == (1, 24, 8, 8)

    def test_indivisible_image_size_rejected(self):
        with pytest.raises(ValueError):
            EncoderConfig(image_size=50, channel_multipliers=(1, 2, 4))

    def test_wrong_image_size_rejected(self, toy_encoder):
        with pytest.raises(ValueError, match="expected images"):
            toy_encoder(torch.rand(1, 3, 32, 32), torch.tensor([0]))

    def test_step_out_of_range_rejected(self, toy_encoder):
        with pytest.raises(ValueError, match="out of range"):
            toy_encoder(torch.rand(1, 3, 64, 64), torch.tensor([100]))


class TestTimeAwareness:
    def test_different_steps_change_features(self, toy_encoder):
        img = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            a = toy_encoder(img, torch.tensor([3]))
            b = toy_encoder(img, torch.tensor([17]))
        assert (a - b).abs().max() > 0

    def test_deterministic_for_fixed_inputs(self, toy_encoder):
        img = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            a = toy_encoder(img, torch.tensor([7]))
            b = toy_encoder(img, torch.tensor([7]))
        assert torch.equal(a, b)

    def test_gradient_reaches_time_mlp(self):
        torch.manual_seed(0)
        cfg = EncoderConfig(image_size=32, base_channels=8, channel_multipliers=(1, 2), out_channels=16, time_dim=16)
        enc = TimeAwareEncoder(cfg)
        out = enc(torch.rand(2, 3, 32, 32), torch.tensor([1, 9]))
        out.square().mean().backward()
        norms = [p.grad.abs().sum().item() for p in enc.time_embed.parameters()]
        assert sum(norms) > 0


class TestReferenceFeature:
    def test_encode_wrapper_and_tokens(self, toy_encoder):
        feat = toy_encoder.encode(torch.rand(2, 3, 64, 64), torch.tensor([4, 9]))
        assert isinstance(feat, ReferenceFeature)
        assert feat.values.shape == (2, 128, 8, 8)
        assert feat.t.tolist() == [4, 9]
        assert feat.tokens().shape == (2, 64, 128)

    def test_scalar_step_broadcast(self, toy_encoder):
        feat = toy_encoder.encode(torch.rand(3, 3, 64, 64), 5)
        assert feat.t.tolist() == [5, 5, 5]

    def test_batch_step_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ReferenceFeature(values=torch.zeros(2, 4, 8, 8), t=torch.tensor([1, 2, 3]))
