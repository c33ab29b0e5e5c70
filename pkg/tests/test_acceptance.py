"""Acceptance criteria, one test per criterion at its stated tolerance.

The conftest hook prints one ACCEPTANCE <name>: PASS/FAIL line per test at
the end of the session.
"""

import time

import numpy as np
import pytest

from layerfusion import (
    BlendConfig,
    RgbaImage,
    SamplerConfig,
    SpatialEdit,
    alpha_blend,
    apply_edit,
    blend_blended,
    blend_foreground,
    build_denoiser,
    cli,
    conditioning_from_prompt,
    content_prior,
    decode_rgb,
    denoise_stream,
    generate_triplet,
    initial_latents,
    premultiply,
    shared_attention,
    sigmoid,
    sparsity_scores,
    structure_prior,
    unpremultiply,
)
from layerfusion import ToyDenoiserConfig
from layerfusion.attention import AttnProbMap
from layerfusion.blending import BlendMasks, binarization_error, make_masks
from layerfusion.formats import read_tensor, write_tensor
from layerfusion.priors import ContentPrior, StructurePrior
from layerfusion.runs import denoiser_pair

from conftest import rand_prob_map
from test_priors import HAND_ROWS, naive_content, naive_sparsity


def test_prior_math_oracle_suite():
    """sparsity/structure/content vs naive loop oracles, 1e-6, under 5 s."""
    started = time.perf_counter()
    rng = np.random.default_rng(1000)
    for _ in range(200):
        m_tokens = int(rng.integers(2, 33))
        heads = int(rng.integers(1, 5))
        t_len = int(rng.integers(2, 17))

        self_map = rand_prob_map(rng, heads, m_tokens, m_tokens)
        scores = sparsity_scores(self_map)
        np.testing.assert_allclose(scores, naive_sparsity(self_map.probs), atol=1e-6)

        prior = structure_prior(self_map, (1, m_tokens), "L", 0.0)
        ref = naive_sparsity(self_map.probs)
        ref_norm = (ref - ref.min()) / (ref.max() - ref.min())
        np.testing.assert_allclose(prior.values, 1.0 - ref_norm, atol=1e-6)

        cross_map = rand_prob_map(rng, heads, m_tokens, t_len)
        eos = int(rng.integers(0, t_len))
        c = content_prior(cross_map, eos, (1, m_tokens), "L")
        np.testing.assert_allclose(c.values, naive_content(cross_map.probs, eos), atol=1e-6)

    worked = structure_prior(AttnProbMap(HAND_ROWS[None]), (2, 2), "L", 0.0)
    np.testing.assert_allclose(worked.values, [1.0, 0.0, 2 / 3, 0.6923], atol=1e-4)
    np.testing.assert_allclose(
        sparsity_scores(AttnProbMap(HAND_ROWS[None])), [1.0, 4.0, 2.0, 1.9231], atol=1e-4
    )

    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"prior-math suite took {elapsed:.2f}s"


def test_mask_suite():
    """Hard-mask identity, sigmoid anchors, d=10 endpoints, monotone sharpening."""
    rng = np.random.default_rng(1001)

    # hard = sigmoid(d * (soft - 0.5)) identity at 1e-6
    for d in (1.0, 10.0, 100.0):
        s = StructurePrior(np.ones(64, np.float32), (8, 8), "L", 0.0)
        c = ContentPrior(rng.uniform(size=64).astype(np.float32), (8, 8), 0, "L")
        masks = make_masks(s, c, BlendConfig(d=d))
        recomputed = sigmoid(np.float32(d) * (masks.soft - np.float32(0.5)))
        np.testing.assert_allclose(masks.hard, recomputed, atol=1e-6)

    assert sigmoid(np.array([0.0], np.float32))[0] == 0.5
    np.testing.assert_allclose(sigmoid(np.array([-5.0, 5.0])), [0.006693, 0.993307], atol=1e-5)

    # strictly decreasing binarization error over d in {1, 10, 100}
    softs = []
    while len(softs) < 100:
        soft = rng.uniform(size=64).astype(np.float32)
        soft = soft[soft != 0.5]
        softs.append(soft)
    errors = []
    for d in (1.0, 10.0, 100.0):
        masks = [
            BlendMasks(soft, sigmoid(np.float32(d) * (soft - np.float32(0.5))), d)
            for soft in softs
        ]
        errors.append(binarization_error(masks))
    assert errors[0] > errors[1] > errors[2], errors


def test_blending_equation_suite():
    """Eq. 1/2 endpoints bit-exact, convexity, shared-attention oracle at 1e-6."""
    rng = np.random.default_rng(1002)
    m, dv = 100, 10  # 1000 token/feature samples
    a = rng.normal(size=(m, dv)).astype(np.float32)
    b = rng.normal(size=(m, dv)).astype(np.float32)

    ones = BlendMasks(np.ones(m, np.float32), np.ones(m, np.float32), 10.0)
    zeros = BlendMasks(np.zeros(m, np.float32), np.zeros(m, np.float32), 10.0)
    assert np.array_equal(blend_blended(a, b, ones), a)
    assert np.array_equal(blend_blended(a, b, zeros), b)
    assert np.array_equal(blend_foreground(a, b, ones), a)
    assert np.array_equal(blend_foreground(a, b, zeros), b)

    soft = rng.uniform(size=m).astype(np.float32)
    masks = BlendMasks(soft, soft, 10.0)
    for out in (blend_blended(a, b, masks), blend_foreground(a, b, masks)):
        assert np.all(out >= np.minimum(a, b)) and np.all(out <= np.maximum(a, b))

    den = build_denoiser(ToyDenoiserConfig(weight_seed=77))
    cond = conditioning_from_prompt("a forest", den.cfg)
    h_bg = rng.normal(size=(64, 32)).astype(np.float32)
    h_blended = rng.normal(size=(64, 32)).astype(np.float32)
    for kv, attend in ((None, den.self_attend(1)), (cond.tokens, den.cross_attend(1))):
        a_bg, a_blend = shared_attention(h_bg, h_blended, kv, attend)
        stacked = np.concatenate([h_bg, h_blended], axis=0)
        ref, _ = attend(stacked, stacked if kv is None else kv)
        np.testing.assert_allclose(a_bg, ref[:64], atol=1e-6)
        np.testing.assert_allclose(a_blend, ref[64:], atol=1e-6)


def test_non_interference_end_to_end():
    """All interactions off: three-stream run equals solo runs bit for bit, < 30 s."""
    started = time.perf_counter()
    fg_den, bg_den = denoiser_pair(1234)
    cfg = fg_den.cfg
    cond_fg = conditioning_from_prompt("a cat", cfg)
    cond_bg = conditioning_from_prompt("a forest", cfg)
    sampler = SamplerConfig(steps=20, seed=7)
    off = BlendConfig(
        blend_cross_attention=False, blend_self_attention=False, share_attention=False
    )
    triplet = generate_triplet(fg_den, bg_den, cond_fg, cond_bg, sampler, off)

    z_fg, z_blended, z_bg = initial_latents(sampler, cfg)
    solo = {
        "fg": denoise_stream(fg_den, z_fg, cond_fg, sampler),
        "blended": denoise_stream(bg_den, z_blended, cond_bg, sampler),
        "bg": denoise_stream(bg_den, z_bg, cond_bg, sampler),
    }
    for stream, latent in solo.items():
        assert np.array_equal(triplet.final_latents[stream], latent), stream
    np.testing.assert_array_equal(triplet.fg_rgba[:, :, :3], decode_rgb(solo["fg"]))
    np.testing.assert_array_equal(triplet.blended_rgb, decode_rgb(solo["blended"]))
    np.testing.assert_array_equal(triplet.bg_rgb, decode_rgb(solo["bg"]))

    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"non-interference suite took {elapsed:.2f}s"


def test_fg_dominance_end_to_end():
    """soft forced to 1: blended cross outputs equal FG outputs at 1e-6 everywhere."""
    fg_den, bg_den = denoiser_pair(1234)
    cfg = fg_den.cfg
    cond_fg = conditioning_from_prompt("a cat", cfg)
    cond_bg = conditioning_from_prompt("a forest", cfg)
    sampler = SamplerConfig(steps=20, seed=7)
    captured = {}

    def probe(step, layer, stream, a):
        captured[(step, layer, stream)] = a.copy()

    generate_triplet(
        fg_den, bg_den, cond_fg, cond_bg, sampler,
        BlendConfig(soft_override=1.0), cross_probe=probe,
    )
    pairs = 0
    for (step, layer, stream), a in captured.items():
        if stream == "blended":
            np.testing.assert_allclose(
                a, captured[(step, layer, "fg")], atol=1e-6,
                err_msg=f"step {step} layer {layer}",
            )
            pairs += 1
    assert pairs == sampler.steps * cfg.blocks


def test_determinism_and_formats(tmp_path, capsys):
    """cmd_generate checksum stability, ATND round trips, analyze bit-exactness."""
    argv = ["generate", "--seed", "7", "--out-dir"]
    assert cli.main(argv + [str(tmp_path / "run1")]) == 0
    out1 = capsys.readouterr().out
    assert cli.main(argv + [str(tmp_path / "run2")]) == 0
    out2 = capsys.readouterr().out
    line1, line2 = out1.strip().splitlines()[-1], out2.strip().splitlines()[-1]
    assert line1.startswith("checksum ") and line1 == line2

    rng = np.random.default_rng(1003)
    for i in range(50):
        ndim = int(rng.integers(0, 5))
        shape = tuple(int(rng.integers(1, 7)) for _ in range(ndim))
        x = rng.normal(size=shape).astype(np.float32)
        path = tmp_path / f"rt{i}.atnd"
        write_tensor(path, x)
        back = read_tensor(path)
        assert back.shape == x.shape and np.array_equal(back, x)

    assert cli.main([
        "analyze", "--manifest", str(tmp_path / "run1" / "manifest.json"),
        "--layer", "block2.cross", "--t-frac", "0.8",
        "--out-dir", str(tmp_path / "analysis"),
    ]) == 0
    capsys.readouterr()
    for name in ("structure_prior", "content_prior", "mask_soft", "mask_hard"):
        produced = (tmp_path / "analysis" / f"{name}.atnd").read_bytes()
        recorded = (
            tmp_path / "run1" / f"snapshots/step004_block2.cross_{name}.atnd"
        ).read_bytes()
        assert produced == recorded, name


def test_compositing_suite():
    """alpha_blend endpoints, premultiply round trip, identity edit, off-canvas."""
    rng = np.random.default_rng(1004)
    rgb = rng.uniform(size=(8, 8, 3)).astype(np.float32)
    bg = rng.uniform(size=(8, 8, 3)).astype(np.float32)

    opaque = RgbaImage(rgb=rgb, alpha=np.ones((8, 8), np.float32))
    transparent = RgbaImage(rgb=rgb, alpha=np.zeros((8, 8), np.float32))
    np.testing.assert_array_equal(alpha_blend(opaque, bg), rgb)
    np.testing.assert_array_equal(alpha_blend(transparent, bg), bg)

    alpha = rng.uniform(low=2e-4, high=1.0, size=(8, 8)).astype(np.float32)
    fg = RgbaImage(rgb=rgb, alpha=alpha)
    back = unpremultiply(premultiply(fg))
    np.testing.assert_allclose(back.rgb, rgb, atol=1e-6)

    layered = RgbaImage(rgb=rgb, alpha=alpha)
    identity = apply_edit(layered, SpatialEdit(), canvas=(8, 8))
    assert np.array_equal(identity.rgb, rgb) and np.array_equal(identity.alpha, alpha)

    off_canvas = apply_edit(layered, SpatialEdit(translate=(8.0, 0.0)), canvas=(8, 8))
    np.testing.assert_array_equal(alpha_blend(off_canvas, bg), bg)
