"""Three-stream toy diffusion pipeline producing FG/BG/blended triplets.

Per sampler step: a capture-only prior pass on the foreground denoiser
yields the structure prior; the three streams then run through their
denoisers with the blending hooks installed (foreground through its own
weights, background and blended through the base weights with attention
sharing); finally each latent takes a deterministic Euler update along a
linear sigma schedule. After the last step each latent decodes through a
fixed seeded linear map to RGB, and the foreground alpha comes from the
final-step hard mask.

Stream coupling: foreground and blended share the initial noise draw, the
background takes the next block from the same seeded stream. Timesteps
count down, t_k = t_total * (1 - k/N), so "80% of total noise remaining"
is step k = 0.2 N.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .attention import AttnProbMap, resize_token_field, sigmoid
from .blending import (
    BlendConfig,
    BlendLayer,
    BlendMasks,
    LayerBlendRecord,
    attn_blend_step,
    binarization_error,
    blend_blended,
    blend_foreground,
    make_masks,
    make_self_masks,
    shared_attention,
)
from .denoiser import ToyConditioning, ToyDenoiser, null_conditioning
from .errors import ConfigurationError, DivergenceError
from .priors import ContentPrior, StructurePrior, content_prior, prior_pass, resize_prior
from .rng import SplitMix64

DECODER_SEED = 0xDEC0DE
STREAMS = ("fg", "blended", "bg")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 20
    sigma_max: float = 1.0
    sigma_min: float = 0.0
    t_total: float = 1000.0
    seed: int = 0
    guidance_scale: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if self.guidance_scale < 0:
            raise ConfigurationError("guidance_scale must be >= 0")
        if not self.sigma_max > self.sigma_min >= 0:
            raise ConfigurationError("need sigma_max > sigma_min >= 0")

    def sigmas(self) -> np.ndarray:
        return np.linspace(self.sigma_max, self.sigma_min, self.steps + 1)

    def t_of_step(self, k: int) -> float:
        return float(self.t_total * self.sigmas()[k] / self.sigma_max)

    def step_of_t_fraction(self, frac: float) -> int:
        """Step index whose timestep is closest to frac * t_total."""
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"timestep fraction {frac} outside [0, 1]")
        return int(round((1.0 - frac) * self.steps))


def default_snapshot_steps(steps: int) -> list[int]:
    """Mask snapshot cadence {0.2N, 0.5N, 0.8N} plus the final step."""
    marks = {int(round(f * steps)) for f in (0.2, 0.5, 0.8)}
    marks.add(steps - 1)
    return sorted(k for k in marks if 0 <= k < steps)


@dataclass
class MaskSnapshot:
    step: int
    layer_id: str
    masks: BlendMasks
    structure: StructurePrior
    content: ContentPrior
    spatial_shape: tuple[int, int]


@dataclass
class LayerTriplet:
    """Decoded outputs of one coupled run plus the archived mask snapshots.

    final_latents keeps the undecoded per-stream states, which is what the
    stream-isolation checks compare.
    """

    fg_rgba: np.ndarray
    bg_rgb: np.ndarray
    blended_rgb: np.ndarray
    mask_snapshots: list[MaskSnapshot] = field(default_factory=list)
    final_latents: dict[str, np.ndarray] = field(default_factory=dict)


def initial_latents(
    sampler: SamplerConfig, cfg
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded initial noise: FG and Blended share a draw, BG takes the next."""
    c, (h, w) = cfg.latent_channels, cfg.latent_size
    stream = SplitMix64(sampler.seed)
    shared = (sampler.sigma_max * stream.normal(c * h * w)).astype(np.float32).reshape(c, h, w)
    bg = (sampler.sigma_max * stream.normal(c * h * w)).astype(np.float32).reshape(c, h, w)
    return shared.copy(), shared.copy(), bg


def decoder_matrix(channels: int) -> np.ndarray:
    stream = SplitMix64(DECODER_SEED)
    bound = 1.0 / np.sqrt(channels)
    return stream.uniform(channels * 3, -bound, bound).astype(np.float32).reshape(channels, 3)


def decode_rgb(latent: np.ndarray) -> np.ndarray:
    """Fixed linear map from latent channels to RGB, squashed into [0, 1]."""
    c, h, w = latent.shape
    pixels = latent.reshape(c, h * w).T
    rgb = sigmoid(pixels @ decoder_matrix(c))
    return rgb.reshape(h, w, 3)


def decode_alpha(
    masks_at_final_step: BlendMasks,
    layer_shape: tuple[int, int],
    image_size: tuple[int, int],
) -> np.ndarray:
    """Foreground alpha: the final-step hard mask resampled to image size."""
    alpha = resize_token_field(masks_at_final_step.hard, layer_shape, image_size)
    return np.clip(alpha, 0.0, 1.0).reshape(image_size)


def denoise_stream(
    denoiser: ToyDenoiser,
    z0: np.ndarray,
    cond: ToyConditioning,
    sampler: SamplerConfig,
    stream_name: str = "solo",
) -> np.ndarray:
    """Plain single-stream sampling loop (the non-interference reference)."""
    sigmas = sampler.sigmas()
    z = z0.copy()
    for k in range(sampler.steps):
        t = sampler.t_of_step(k)
        eps = _guided_eps(denoiser, z, t, cond, sampler)
        z = _euler_update(z, eps, sigmas, k, stream_name)
    return z


def _guided_eps(
    denoiser: ToyDenoiser,
    z: np.ndarray,
    t: float,
    cond: ToyConditioning,
    sampler: SamplerConfig,
    eps_cond: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Noise estimate with optional classifier-free guidance.

    guidance_scale == 0 means a single conditional pass. The conditional
    estimate may be precomputed (the blended branch of the joint executor).
    """
    if eps_cond is None:
        eps_cond = denoiser.forward(z, t, cond)[0]
    g = sampler.guidance_scale
    if g == 0:
        return eps_cond
    eps_uncond = denoiser.forward(z, t, null_conditioning(denoiser.cfg))[0]
    return eps_uncond + np.float32(g) * (eps_cond - eps_uncond)


def _euler_update(
    z: np.ndarray, eps: np.ndarray, sigmas: np.ndarray, k: int, stream_name: str
) -> np.ndarray:
    z = z + np.float32(sigmas[k + 1] - sigmas[k]) * eps
    if not np.isfinite(z).all():
        raise DivergenceError(step=k, stream=stream_name)
    return z


CrossOutputProbe = Callable[[int, str, str, np.ndarray], None]
DumpSink = Callable[[str, int, str, AttnProbMap], None]


def _joint_forward(
    fgd: ToyDenoiser,
    bgd: ToyDenoiser,
    z_fg: np.ndarray,
    z_blended: np.ndarray,
    z_bg: np.ndarray,
    t: float,
    cond_fg: ToyConditioning,
    cond_bg: ToyConditioning,
    s: StructurePrior,
    blend: BlendConfig,
    record_sink: Optional[Callable[[LayerBlendRecord], None]],
    step: int,
    cross_probe: Optional[CrossOutputProbe],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lockstep forward of the three streams with sharing/blending hooks.

    Stream sublayers are the same callables ToyDenoiser.forward composes,
    so disabling an interaction reproduces the solo math bit for bit.
    """
    if fgd.cfg.latent_size != bgd.cfg.latent_size or fgd.cfg.latent_channels != bgd.cfg.latent_channels:
        raise ConfigurationError("foreground and background denoisers disagree on latent geometry")
    shape = fgd.cfg.latent_size
    x_fg = fgd.embed(z_fg, t)
    x_blended = bgd.embed(z_blended, t)
    x_bg = bgd.embed(z_bg, t)

    for i in range(fgd.cfg.blocks):
        # self-attention stage
        n_fg = fgd.self_norm(i)(x_fg)
        a_fg, _ = fgd.self_attend(i)(n_fg, n_fg)
        n_bg = bgd.self_norm(i)(x_bg)
        n_blended = bgd.self_norm(i)(x_blended)
        if blend.share_attention:
            a_bg, a_blended = shared_attention(n_bg, n_blended, None, bgd.self_attend(i))
        else:
            a_bg, _ = bgd.self_attend(i)(n_bg, n_bg)
            a_blended, _ = bgd.self_attend(i)(n_blended, n_blended)
        if blend.blend_self_attention:
            masks = make_self_masks(resize_prior(s, shape), blend)
            a_blended = blend_blended(a_fg, a_blended, masks)
            a_fg = blend_foreground(a_blended, a_fg, masks)
        x_fg = x_fg + a_fg
        x_blended = x_blended + a_blended
        x_bg = x_bg + a_bg

        # cross-attention stage (the blend step proper)
        layer = BlendLayer(
            layer_id=f"block{i}.cross",
            spatial_shape=shape,
            norm_fg=fgd.cross_norm(i),
            norm_bg=bgd.cross_norm(i),
            attend_fg=fgd.cross_attend(i),
            attend_bg=bgd.cross_attend(i),
        )
        a_fg, a_blended, a_bg = attn_blend_step(
            x_fg, x_blended, x_bg, cond_fg, cond_bg, s, blend, layer, sink=record_sink
        )
        if cross_probe is not None:
            cross_probe(step, layer.layer_id, "fg", a_fg)
            cross_probe(step, layer.layer_id, "blended", a_blended)
            cross_probe(step, layer.layer_id, "bg", a_bg)
        x_fg = x_fg + a_fg
        x_blended = x_blended + a_blended
        x_bg = x_bg + a_bg

        # feed-forward stage
        x_fg = x_fg + fgd.ff(i)(fgd.ff_norm(i)(x_fg))
        x_blended = x_blended + bgd.ff(i)(bgd.ff_norm(i)(x_blended))
        x_bg = x_bg + bgd.ff(i)(bgd.ff_norm(i)(x_bg))

    return fgd.project_out(x_fg), bgd.project_out(x_blended), bgd.project_out(x_bg)


def generate_triplet(
    fg_denoiser: ToyDenoiser,
    bg_denoiser: ToyDenoiser,
    cond_fg: ToyConditioning,
    cond_bg: ToyConditioning,
    sampler: SamplerConfig,
    blend: BlendConfig,
    snapshot_steps: Optional[Sequence[int]] = None,
    dump_sink: Optional[DumpSink] = None,
    cross_probe: Optional[CrossOutputProbe] = None,
    prior_every: int = 1,
) -> LayerTriplet:
    """Run the coupled three-stream generation and decode the triplet.

    snapshot_steps selects when mask/prior snapshots are archived (the
    final step is always included so the alpha channel can be derived).
    dump_sink, when given, receives the raw self- and cross-attention
    probability maps at snapshot steps: (kind, step, layer_id, probs).
    cross_probe observes every cross-attention output of every stream.
    prior_every > 1 reuses the structure prior for that many steps (the
    cadence ablation).
    """
    if fg_denoiser.cfg.latent_size != bg_denoiser.cfg.latent_size or \
            fg_denoiser.cfg.latent_channels != bg_denoiser.cfg.latent_channels:
        raise ConfigurationError("denoisers disagree on latent geometry")
    if prior_every < 1:
        raise ConfigurationError("prior_every must be >= 1")

    n = sampler.steps
    snap_steps = set(default_snapshot_steps(n) if snapshot_steps is None else snapshot_steps)
    snap_steps.add(n - 1)
    sigmas = sampler.sigmas()
    z_fg, z_blended, z_bg = initial_latents(sampler, fg_denoiser.cfg)

    snapshots: list[MaskSnapshot] = []
    s: Optional[StructurePrior] = None
    for k in range(n):
        t = sampler.t_of_step(k)
        want_snapshot = k in snap_steps

        if s is None or k % prior_every == 0:
            map_sink = None
            if dump_sink is not None and want_snapshot:
                map_sink = lambda m, k=k: dump_sink("self", k, fg_denoiser.capture_layer_id, m)
            s = prior_pass(fg_denoiser, z_fg, cond_fg, t, map_sink=map_sink)

        if blend.any_interaction:
            records: list[LayerBlendRecord] = []
            sink = records.append if want_snapshot else None
            eps_fg, eps_blended, eps_bg = _joint_forward(
                fg_denoiser, bg_denoiser, z_fg, z_blended, z_bg, t,
                cond_fg, cond_bg, s, blend, sink, k, cross_probe,
            )
            eps_fg = _guided_eps(fg_denoiser, z_fg, t, cond_fg, sampler, eps_cond=eps_fg)
            eps_blended = _guided_eps(bg_denoiser, z_blended, t, cond_bg, sampler, eps_cond=eps_blended)
            eps_bg = _guided_eps(bg_denoiser, z_bg, t, cond_bg, sampler, eps_cond=eps_bg)
        else:
            records = _offline_records(
                fg_denoiser, z_fg, t, cond_fg, s, blend
            ) if want_snapshot else []
            eps_fg = _guided_eps(fg_denoiser, z_fg, t, cond_fg, sampler)
            eps_blended = _guided_eps(bg_denoiser, z_blended, t, cond_bg, sampler)
            eps_bg = _guided_eps(bg_denoiser, z_bg, t, cond_bg, sampler)

        if want_snapshot:
            for rec in records:
                snapshots.append(MaskSnapshot(
                    step=k, layer_id=rec.layer_id, masks=rec.masks,
                    structure=rec.structure, content=rec.content,
                    spatial_shape=rec.content.spatial_shape,
                ))
            if dump_sink is not None:
                for rec in records:
                    dump_sink("cross", k, rec.layer_id, rec.fg_cross_probs)

        z_fg = _euler_update(z_fg, eps_fg, sigmas, k, "fg")
        z_blended = _euler_update(z_blended, eps_blended, sigmas, k, "blended")
        z_bg = _euler_update(z_bg, eps_bg, sigmas, k, "bg")

    final_layer = f"block{fg_denoiser.cfg.blocks - 1}.cross"
    final = [sn for sn in snapshots if sn.step == n - 1 and sn.layer_id == final_layer]
    if not final:
        raise ConfigurationError("no mask snapshot recorded at the final step")
    h, w = fg_denoiser.cfg.latent_size
    alpha = decode_alpha(final[-1].masks, final[-1].spatial_shape, (h, w))

    fg_rgb = decode_rgb(z_fg)
    triplet = LayerTriplet(
        fg_rgba=np.concatenate([fg_rgb, alpha[:, :, None]], axis=2).astype(np.float32),
        bg_rgb=decode_rgb(z_bg).astype(np.float32),
        blended_rgb=decode_rgb(z_blended).astype(np.float32),
        mask_snapshots=snapshots,
        final_latents={"fg": z_fg, "blended": z_blended, "bg": z_bg},
    )
    return triplet


def _offline_records(
    fgd: ToyDenoiser,
    z_fg: np.ndarray,
    t: float,
    cond_fg: ToyConditioning,
    s: StructurePrior,
    blend: BlendConfig,
) -> list[LayerBlendRecord]:
    """Snapshot records for a run with every interaction disabled.

    Capturing the foreground stream's cross-attention maps is pure, so the
    masks that *would* drive blending are still archived (and supply the
    alpha channel).
    """
    cross_ids = [f"block{i}.cross" for i in range(fgd.cfg.blocks)]
    _, captured = fgd.forward(z_fg, t, cond_fg, capture=cross_ids)
    records = []
    for layer_id in cross_ids:
        probs = captured[layer_id]
        c = content_prior(probs, cond_fg.eos_index, fgd.cfg.latent_size, layer_id)
        s_local = resize_prior(s, fgd.cfg.latent_size)
        masks = make_masks(s_local, c, blend)
        records.append(LayerBlendRecord(layer_id, s_local, c, masks, probs))
    return records


@dataclass
class AblationRow:
    d: float
    triplet: LayerTriplet
    binarization_error: float
    alpha_coverage: float


def ablate_boundary(
    d_values: Sequence[float],
    fg_denoiser: ToyDenoiser,
    bg_denoiser: ToyDenoiser,
    cond_fg: ToyConditioning,
    cond_bg: ToyConditioning,
    sampler: SamplerConfig,
    blend: BlendConfig = BlendConfig(),
    max_workers: int = 1,
) -> list[AblationRow]:
    """Re-run the triplet generation for each boundary coefficient.

    Each run keeps every other input fixed (identical seeds); reported per
    d: the mean binarization error of its archived masks and the fraction
    of the final alpha above 0.5.
    """
    if not d_values:
        raise ValueError("d_values must be non-empty")
    if any(d <= 0 for d in d_values):
        raise ValueError(f"all boundary coefficients must be > 0: {list(d_values)}")

    def run(d: float) -> AblationRow:
        triplet = generate_triplet(
            fg_denoiser, bg_denoiser, cond_fg, cond_bg, sampler, replace(blend, d=d)
        )
        err = binarization_error([sn.masks for sn in triplet.mask_snapshots])
        alpha = triplet.fg_rgba[:, :, 3]
        return AblationRow(d, triplet, err, float((alpha > 0.5).mean()))

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(run, d_values))
    return [run(d) for d in d_values]
