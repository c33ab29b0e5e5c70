"""Materialize toy-pipeline runs as directories of files plus a manifest."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .attention import AttnProbMap
from .blending import BlendConfig
from .denoiser import ToyDenoiserConfig, build_denoiser, conditioning_from_prompt
from .formats import write_pam, write_pgm, write_ppm, write_tensor
from .manifest import MANIFEST_VERSION, write_manifest
from .pipeline import (
    LayerTriplet,
    SamplerConfig,
    default_snapshot_steps,
    generate_triplet,
)

DEFAULT_WEIGHT_SEED = 1234


def denoiser_pair(
    weight_seed: int = DEFAULT_WEIGHT_SEED, base: Optional[ToyDenoiserConfig] = None
):
    """Foreground and background denoisers: same architecture, adjacent seeds."""
    base = base or ToyDenoiserConfig()
    fg = build_denoiser(replace(base, weight_seed=weight_seed))
    bg = build_denoiser(replace(base, weight_seed=weight_seed + 1))
    return fg, bg


def run_generate(
    out_dir,
    fg_prompt: str,
    bg_prompt: str,
    sampler: SamplerConfig,
    blend: BlendConfig,
    weight_seed: int = DEFAULT_WEIGHT_SEED,
    denoiser_cfg: Optional[ToyDenoiserConfig] = None,
    snapshot_steps: Optional[Sequence[int]] = None,
) -> tuple[list[Path], LayerTriplet]:
    """Generate a triplet and write images, dumps, snapshots and manifest.

    Returns the written files (manifest last) and the in-memory triplet.
    """
    out = Path(out_dir)
    (out / "dumps").mkdir(parents=True, exist_ok=True)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)

    fg_den, bg_den = denoiser_pair(weight_seed, denoiser_cfg)
    cfg = fg_den.cfg
    cond_fg = conditioning_from_prompt(fg_prompt, cfg)
    cond_bg = conditioning_from_prompt(bg_prompt, cfg)
    snaps = sorted(default_snapshot_steps(sampler.steps) if snapshot_steps is None
                   else set(snapshot_steps) | {sampler.steps - 1})

    files: list[Path] = []
    dump_entries: list[dict] = []

    def dump_sink(kind: str, step: int, layer_id: str, probs: AttnProbMap) -> None:
        rel = f"dumps/{kind}_step{step:03d}_{layer_id}.atnd"
        write_tensor(out / rel, probs.probs)
        dump_entries.append({"kind": kind, "step": step, "layer": layer_id, "path": rel})
        files.append(out / rel)

    triplet = generate_triplet(
        fg_den, bg_den, cond_fg, cond_bg, sampler, blend,
        snapshot_steps=snaps, dump_sink=dump_sink,
    )

    h, w = cfg.latent_size
    snapshot_entries: list[dict] = []
    for sn in triplet.mask_snapshots:
        stem = f"snapshots/step{sn.step:03d}_{sn.layer_id}"
        refs = {}
        for name, values in (
            ("structure_prior", sn.structure.values),
            ("content_prior", sn.content.values),
            ("mask_soft", sn.masks.soft),
            ("mask_hard", sn.masks.hard),
        ):
            rel = f"{stem}_{name}.atnd"
            write_tensor(out / rel, values)
            write_pgm(out / f"{stem}_{name}.pgm", values.reshape(sn.spatial_shape))
            refs[name] = rel
            files += [out / rel, out / f"{stem}_{name}.pgm"]
        snapshot_entries.append({"step": sn.step, "layer": sn.layer_id, "files": refs})

    write_pam(out / "fg.pam", triplet.fg_rgba)
    write_ppm(out / "bg.ppm", triplet.bg_rgb)
    write_ppm(out / "blended.ppm", triplet.blended_rgb)
    files += [out / "fg.pam", out / "bg.ppm", out / "blended.ppm"]

    layers = []
    for layer_id in fg_den.layer_ids():
        kind = "self" if layer_id.endswith(".self") else "cross"
        layers.append({"id": layer_id, "kind": kind, "height": h, "width": w})

    manifest = {
        "format_version": MANIFEST_VERSION,
        "kind": "toy-run",
        "streams": {
            "fg": {"prompt": fg_prompt, "label": cond_fg.label, "eos_index": cond_fg.eos_index},
            "bg": {"prompt": bg_prompt, "label": cond_bg.label, "eos_index": cond_bg.eos_index},
        },
        "denoiser": {
            "latent_channels": cfg.latent_channels,
            "latent_size": list(cfg.latent_size),
            "model_dim": cfg.model_dim,
            "heads": cfg.heads,
            "blocks": cfg.blocks,
            "text_len": cfg.text_len,
            "fg_weight_seed": weight_seed,
            "bg_weight_seed": weight_seed + 1,
        },
        "sampler": {
            "steps": sampler.steps,
            "seed": sampler.seed,
            "sigma_max": sampler.sigma_max,
            "sigma_min": sampler.sigma_min,
            "t_total": sampler.t_total,
            "guidance_scale": sampler.guidance_scale,
        },
        "blend": {
            "d": blend.d,
            "blend_cross_attention": blend.blend_cross_attention,
            "blend_self_attention": blend.blend_self_attention,
            "share_attention": blend.share_attention,
        },
        "capture_layer": fg_den.capture_layer_id,
        "layers": layers,
        "capture_steps": snaps,
        "total_steps": sampler.steps,
        "dumps": dump_entries,
        "snapshots": snapshot_entries,
        "images": {"fg": "fg.pam", "bg": "bg.ppm", "blended": "blended.ppm"},
    }
    write_manifest(out / "manifest.json", manifest)
    files.append(out / "manifest.json")
    return files, triplet
