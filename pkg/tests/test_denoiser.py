import numpy as np
import pytest

from layerfusion import ToyConditioning, ToyDenoiserConfig, build_denoiser, conditioning_from_prompt
from layerfusion.denoiser import PROMPT_REGISTRY, null_conditioning, prompt_seed, timestep_embedding
from layerfusion.errors import ConfigurationError
from layerfusion.rng import SplitMix64, fnv1a64


class TestRng:
    def test_stream_is_reproducible(self):
        a = SplitMix64(99).uniform(64)
        b = SplitMix64(99).uniform(64)
        np.testing.assert_array_equal(a, b)

    def test_uniform_range(self):
        u = SplitMix64(1).uniform(10000)
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_normal_moments(self):
        z = SplitMix64(2).normal(20000)
        assert abs(z.mean()) < 0.05
        assert abs(z.std() - 1.0) < 0.05

    def test_fnv_is_stable(self):
        assert fnv1a64("") == 0xCBF29CE484222325
        assert fnv1a64("a") == fnv1a64("a")
        assert fnv1a64("a") != fnv1a64("b")


class TestWeights:
    def test_same_seed_same_checksum(self):
        cfg = ToyDenoiserConfig(weight_seed=11)
        assert build_denoiser(cfg).weight_checksum() == build_denoiser(cfg).weight_checksum()

    def test_seed_sensitivity(self):
        a = build_denoiser(ToyDenoiserConfig(weight_seed=11)).weight_checksum()
        b = build_denoiser(ToyDenoiserConfig(weight_seed=12)).weight_checksum()
        assert a != b

    def test_param_count_matches_formula(self):
        for cfg in (
            ToyDenoiserConfig(),
            ToyDenoiserConfig(latent_channels=2, latent_size=(8, 8), model_dim=16,
                              heads=2, blocks=2, text_len=4),
        ):
            den = build_denoiser(cfg)
            assert den.param_count() == den.expected_param_count(cfg)

    def test_default_param_count_value(self):
        den = build_denoiser(ToyDenoiserConfig())
        assert den.param_count() == 59524

    def test_config_validation(self):
        with pytest.raises(ConfigurationError, match="divisible"):
            ToyDenoiserConfig(model_dim=30, heads=4)
        with pytest.raises(ConfigurationError, match="positive"):
            ToyDenoiserConfig(blocks=0)


class TestConditioning:
    def test_prompt_determinism(self):
        cfg = ToyDenoiserConfig()
        a = conditioning_from_prompt("a lynx", cfg)
        b = conditioning_from_prompt("a lynx", cfg)
        np.testing.assert_array_equal(a.tokens, b.tokens)
        assert a.eos_index == cfg.text_len - 1

    def test_registry_overrides_hash(self):
        assert prompt_seed("a cat") == PROMPT_REGISTRY["a cat"]
        assert prompt_seed("something else") == fnv1a64("something else")

    def test_eos_validation(self):
        with pytest.raises(ValueError, match="eos_index"):
            ToyConditioning(tokens=np.zeros((4, 8), np.float32), eos_index=4)

    def test_null_conditioning_is_zero(self):
        cond = null_conditioning(ToyDenoiserConfig())
        assert not cond.tokens.any()


class TestForward:
    def test_shapes_and_finiteness(self):
        cfg = ToyDenoiserConfig(weight_seed=13)
        den = build_denoiser(cfg)
        z = np.random.default_rng(0).normal(size=(4, 16, 16)).astype(np.float32)
        cond = conditioning_from_prompt("a cat", cfg)
        eps, captured = den.forward(z, 800.0, cond)
        assert eps.shape == (4, 16, 16) and eps.dtype == np.float32
        assert np.isfinite(eps).all()
        assert captured == {}

    def test_capture_returns_requested_layers(self):
        cfg = ToyDenoiserConfig(weight_seed=14)
        den = build_denoiser(cfg)
        z = np.random.default_rng(1).normal(size=(4, 16, 16)).astype(np.float32)
        cond = conditioning_from_prompt("a cat", cfg)
        _, captured = den.forward(z, 500.0, cond, capture={"block0.self", "block1.cross"})
        assert set(captured) == {"block0.self", "block1.cross"}
        assert captured["block0.self"].probs.shape == (4, 256, 256)
        assert captured["block1.cross"].probs.shape == (4, 256, 8)

    def test_unknown_capture_layer(self):
        cfg = ToyDenoiserConfig(weight_seed=15)
        den = build_denoiser(cfg)
        z = np.zeros((4, 16, 16), np.float32)
        with pytest.raises(ConfigurationError, match="unknown capture layers"):
            den.forward(z, 0.0, conditioning_from_prompt("x", cfg), capture={"nope"})

    def test_timestep_changes_output(self):
        cfg = ToyDenoiserConfig(weight_seed=16)
        den = build_denoiser(cfg)
        z = np.random.default_rng(2).normal(size=(4, 16, 16)).astype(np.float32)
        cond = conditioning_from_prompt("a cat", cfg)
        eps_a, _ = den.forward(z, 1000.0, cond)
        eps_b, _ = den.forward(z, 100.0, cond)
        assert not np.array_equal(eps_a, eps_b)

    def test_bad_latent_shape(self):
        den = build_denoiser(ToyDenoiserConfig(weight_seed=17))
        with pytest.raises(ValueError, match="latent shape"):
            den.embed(np.zeros((4, 8, 8), np.float32), 0.0)

    def test_timestep_embedding_shape(self):
        emb = timestep_embedding(123.0, 32)
        assert emb.shape == (32,) and emb.dtype == np.float32
        odd = timestep_embedding(123.0, 33)
        assert odd.shape == (33,) and odd[-1] == 0.0
