"""Pinned-output tests for the bundled reference run (seed 7)."""

import hashlib
import json

import numpy as np

from golden_config import (
    GOLDEN_DIR,
    REFERENCE_BG_PROMPT,
    REFERENCE_BLEND_LAYER,
    REFERENCE_EARLY_STEP,
    REFERENCE_FG_PROMPT,
    REFERENCE_WEIGHT_SEED,
    reference_setup,
)

from layerfusion import generate_triplet, prior_pass
from layerfusion.formats import read_tensor
from layerfusion.pipeline import initial_latents
from layerfusion.runs import run_generate


def test_prior_at_early_step_matches_golden():
    fg_den, bg_den, cond_fg, cond_bg, sampler, blend = reference_setup()
    triplet = generate_triplet(fg_den, bg_den, cond_fg, cond_bg, sampler, blend)
    early = [
        sn for sn in triplet.mask_snapshots
        if sn.step == REFERENCE_EARLY_STEP and sn.layer_id == REFERENCE_BLEND_LAYER
    ][0]
    np.testing.assert_array_equal(
        early.structure.values, read_tensor(GOLDEN_DIR / "structure_prior_step04.atnd")
    )
    np.testing.assert_array_equal(
        early.content.values, read_tensor(GOLDEN_DIR / "content_prior_step04.atnd")
    )


def test_blend_step_outputs_match_golden():
    fg_den, bg_den, cond_fg, cond_bg, sampler, blend = reference_setup()
    captured = {}

    def probe(step, layer, stream, a):
        if step == REFERENCE_EARLY_STEP and layer == REFERENCE_BLEND_LAYER:
            captured[stream] = a.copy()

    generate_triplet(fg_den, bg_den, cond_fg, cond_bg, sampler, blend, cross_probe=probe)
    for stream in ("fg", "blended", "bg"):
        np.testing.assert_array_equal(
            captured[stream], read_tensor(GOLDEN_DIR / f"blend_step04_{stream}.atnd")
        )


def test_triplet_file_checksums_match_golden(tmp_path):
    _, _, _, _, sampler, blend = reference_setup()
    files, _ = run_generate(
        tmp_path, REFERENCE_FG_PROMPT, REFERENCE_BG_PROMPT, sampler, blend,
        weight_seed=REFERENCE_WEIGHT_SEED,
    )
    expected = json.loads((GOLDEN_DIR / "triplet_checksums.json").read_text())
    actual = {
        p.relative_to(tmp_path).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in files
    }
    assert actual == expected


def test_prior_pass_determinism_on_reference_seed():
    fg_den, _, cond_fg, _, sampler, _ = reference_setup()
    z_fg, _, _ = initial_latents(sampler, fg_den.cfg)
    t = sampler.t_of_step(0)
    a = prior_pass(fg_den, z_fg, cond_fg, t)
    b = prior_pass(fg_den, z_fg, cond_fg, t)
    assert a.values.tobytes() == b.values.tobytes()
