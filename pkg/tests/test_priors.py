import numpy as np
import pytest

from layerfusion import (
    ToyDenoiserConfig,
    build_denoiser,
    conditioning_from_prompt,
    content_prior,
    prior_pass,
    sparsity_scores,
    structure_prior,
)
from layerfusion.attention import AttnProbMap
from layerfusion.errors import ConfigurationError
from layerfusion.priors import resize_prior

from conftest import rand_prob_map


def naive_sparsity(probs: np.ndarray) -> np.ndarray:
    heads, m, _ = probs.shape
    scores = np.zeros(m)
    for i in range(m):
        total = 0.0
        for j in range(m):
            mean = sum(float(probs[h, i, j]) for h in range(heads)) / heads
            total += mean * mean
        scores[i] = 1.0 / total
    return scores


def naive_content(probs: np.ndarray, eos: int) -> np.ndarray:
    heads, m, _ = probs.shape
    values = np.zeros(m)
    for i in range(m):
        values[i] = sum(float(probs[h, i, eos]) for h in range(heads)) / heads
    return values


HAND_ROWS = np.array(
    [[1, 0, 0, 0], [0.25, 0.25, 0.25, 0.25], [0.5, 0.5, 0, 0], [0.7, 0.1, 0.1, 0.1]],
    dtype=np.float32,
)


class TestSparsity:
    def test_hand_rows(self):
        s = sparsity_scores(AttnProbMap(HAND_ROWS[None]))
        np.testing.assert_allclose(s, [1.0, 4.0, 2.0, 1 / 0.52], atol=1e-6)

    def test_ipr_bounds(self):
        rng = np.random.default_rng(20)
        for _ in range(50):
            m_tokens = int(rng.integers(2, 33))
            heads = int(rng.integers(1, 5))
            m = rand_prob_map(rng, heads, m_tokens, m_tokens)
            s = sparsity_scores(m)
            assert s.min() >= 1.0 - 1e-9
            assert s.max() <= m_tokens + 1e-9

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(21)
        m = rand_prob_map(rng, 3, 12, 12)
        np.testing.assert_allclose(sparsity_scores(m), naive_sparsity(m.probs), atol=1e-6)

    def test_rejects_cross_map(self):
        m = rand_prob_map(np.random.default_rng(22), 2, 8, 5)
        with pytest.raises(ValueError, match="self-attention"):
            sparsity_scores(m)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(23)
        m = rand_prob_map(rng, 2, 9, 9)
        perm = rng.permutation(9)
        permuted = AttnProbMap(m.probs[:, perm][:, :, perm])
        np.testing.assert_allclose(
            sparsity_scores(permuted), sparsity_scores(m)[perm], atol=1e-10
        )


class TestStructurePrior:
    def test_worked_example(self):
        prior = structure_prior(AttnProbMap(HAND_ROWS[None]), (2, 2), "L", 800.0)
        np.testing.assert_allclose(prior.values, [1.0, 0.0, 2 / 3, 0.69230765], atol=1e-4)

    def test_constant_rows_give_zeros(self):
        probs = np.full((2, 4, 4), 0.25, np.float32)
        prior = structure_prior(AttnProbMap(probs), (2, 2), "L", 0.0)
        np.testing.assert_array_equal(prior.values, np.zeros(4, np.float32))

    def test_extremes_hit_endpoints(self):
        rows = np.eye(4, dtype=np.float32)
        rows[2] = 0.25  # one uniform row among one-hot rows
        prior = structure_prior(AttnProbMap(rows[None]), (2, 2), "L", 0.0)
        assert prior.values[2] == 0.0
        assert prior.values[0] == prior.values[1] == prior.values[3] == 1.0

    def test_head_permutation_invariance(self):
        rng = np.random.default_rng(24)
        m = rand_prob_map(rng, 4, 9, 9)
        shuffled = AttnProbMap(m.probs[[2, 0, 3, 1]])
        a = structure_prior(m, (3, 3), "L", 0.0)
        b = structure_prior(shuffled, (3, 3), "L", 0.0)
        np.testing.assert_array_equal(a.values, b.values)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(25)
        m = rand_prob_map(rng, 2, 16, 16)
        prior = structure_prior(m, (4, 4), "L", 0.0)
        assert prior.values.min() == 0.0 and prior.values.max() == 1.0


class TestContentPrior:
    def test_two_head_mean(self):
        probs = np.zeros((2, 3, 4), np.float32)
        probs[0, :, :] = np.array([0.2, 0.3, 0.3, 0.2], np.float32)
        probs[1, :, :] = np.array([0.4, 0.1, 0.1, 0.4], np.float32)
        c = content_prior(AttnProbMap(probs), 0, (1, 3), "L")
        np.testing.assert_allclose(c.values, 0.3, atol=1e-7)

    def test_single_head_is_column(self):
        m = rand_prob_map(np.random.default_rng(26), 1, 6, 5)
        c = content_prior(m, 3, (2, 3), "L")
        np.testing.assert_array_equal(c.values, m.probs[0, :, 3])

    def test_matches_naive_oracle(self):
        m = rand_prob_map(np.random.default_rng(27), 4, 16, 8)
        c = content_prior(m, 7, (4, 4), "L")
        np.testing.assert_allclose(c.values, naive_content(m.probs, 7), atol=1e-7)

    def test_eos_out_of_range(self):
        m = rand_prob_map(np.random.default_rng(28), 2, 4, 6)
        with pytest.raises(ValueError, match="eos_index"):
            content_prior(m, 6, (2, 2), "L")

    def test_invariant_under_non_eos_permutation(self):
        rng = np.random.default_rng(29)
        m = rand_prob_map(rng, 2, 6, 7)
        eos = 4
        others = [i for i in range(7) if i != eos]
        perm = list(np.array(others)[np.random.default_rng(1).permutation(6)])
        perm.insert(eos, eos)
        c1 = content_prior(m, eos, (2, 3), "L")
        c2 = content_prior(AttnProbMap(m.probs[:, :, perm]), eos, (2, 3), "L")
        np.testing.assert_array_equal(c1.values, c2.values)


class TestResizePrior:
    def test_same_shape_is_same_object(self):
        m = rand_prob_map(np.random.default_rng(30), 2, 16, 16)
        s = structure_prior(m, (4, 4), "L", 0.0)
        assert resize_prior(s, (4, 4)) is s

    def test_resample_changes_grid(self):
        m = rand_prob_map(np.random.default_rng(31), 2, 16, 16)
        s = structure_prior(m, (4, 4), "L", 0.0)
        r = resize_prior(s, (8, 8))
        assert r.spatial_shape == (8, 8) and r.values.size == 64
        assert r.source_layer == s.source_layer


class TestPriorPass:
    def test_zero_weights_give_zero_prior(self):
        den = build_denoiser(ToyDenoiserConfig(weight_seed=5))
        for arr in den.params.values():
            arr[...] = 0.0
        cond = conditioning_from_prompt("anything", den.cfg)
        z = np.random.default_rng(32).normal(size=(4, 16, 16)).astype(np.float32)
        prior = prior_pass(den, z, cond, 800.0)
        np.testing.assert_array_equal(prior.values, np.zeros(256, np.float32))

    def test_deterministic(self):
        den = build_denoiser(ToyDenoiserConfig(weight_seed=6))
        cond = conditioning_from_prompt("a cat", den.cfg)
        z = np.random.default_rng(33).normal(size=(4, 16, 16)).astype(np.float32)
        a = prior_pass(den, z, cond, 640.0)
        b = prior_pass(den, z, cond, 640.0)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.source_layer == den.capture_layer_id == "block2.self"
        assert a.timestep == 640.0

    def test_missing_capture_layer(self):
        den = build_denoiser(ToyDenoiserConfig(weight_seed=7))
        with pytest.raises(ConfigurationError, match="capture layer"):
            den.set_capture_layer("block9.self")
        with pytest.raises(ConfigurationError, match="self-attention"):
            den.set_capture_layer("block0.cross")
